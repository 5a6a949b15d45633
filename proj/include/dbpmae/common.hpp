#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace dbp {

// Row-major everywhere: rows are samples (or tokens), columns are features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class EmptyBatchError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public IoError {
 public:
  using IoError::IoError;
};

class DtypeMismatchError : public IoError {
 public:
  using IoError::IoError;
};

class LengthMismatchError : public IoError {
 public:
  using IoError::IoError;
};

// Raised when a decorrelation matrix blows up. The epoch is filled in by the
// training loop; the core update rule only knows the site.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& site_id, int epoch, const std::string& what)
      : Error(what), site_id(site_id), epoch(epoch) {}
  std::string site_id;
  int epoch = -1;
};

}  // namespace dbp
