#pragma once

#include <optional>
#include <string>

#include "dbpmae/common.hpp"
#include "dbpmae/rng.hpp"

namespace dbp {

// Square decorrelation matrix for one layer site. Starts as the identity and
// is trained with its own constant-rate SGD rule, independently of the task
// gradients.
struct DecorrelationMatrix {
  int dim = 0;
  Matrix values;
  std::string site_id;

  DecorrelationMatrix() = default;
  DecorrelationMatrix(int dim, std::string site_id)
      : dim(dim), values(Matrix::Identity(dim, dim)), site_id(std::move(site_id)) {}
};

// Off-diagonal uncentered covariance of a batch of (decorrelated) inputs.
// The diagonal is exactly zero; the matrix drives the R update.
struct CorrelationEstimate {
  Matrix off_diag;
  long sample_count = 0;
  int dim() const { return static_cast<int>(off_diag.rows()); }
};

enum class DecorrScope { EncoderOnly, FullModel, DecoderOnly };

std::string to_string(DecorrScope scope);
DecorrScope scope_from_string(const std::string& s);

struct DecorrConfig {
  double eta = 5e-4;                 // learning rate of the R update
  double subsample_fraction = 0.10;  // share of cached rows used per update
  DecorrScope scope = DecorrScope::EncoderOnly;
  std::optional<int> stop_epoch;     // freeze every R from this epoch on
  bool per_linear_mode = false;      // also decorrelate out-proj and MLP second linear

  void validate() const;
};

// z = R x for every row of the batch (row convention: returns x * R^T).
Matrix decorrelate(const DecorrelationMatrix& R, const Matrix& x_batch);

// D = (1/N) Z^T Z with the diagonal zeroed.
CorrelationEstimate off_diagonal_covariance(const Matrix& z_batch);

// max(1, ceil(fraction * N)) rows, uniform without replacement, in ascending
// row order so that fraction == 1 reproduces the batch exactly.
Matrix subsample_rows(const Matrix& z_batch, double fraction, Rng& rng);

// R <- R - eta * C * R. Throws DivergenceError if the result leaves the
// finite range (any entry non-finite or beyond 1e6 in magnitude).
void update_decorrelation(DecorrelationMatrix& R, const CorrelationEstimate& C, double eta);

// Mean squared off-diagonal entry: (1 / (d (d - 1))) * sum_{i != j} C_ij^2.
double decorrelation_loss(const CorrelationEstimate& C);

// Fused weight W~ = W R, so downstream consumers never see R.
Matrix fuse_weights(const Matrix& W, const DecorrelationMatrix& R);

}  // namespace dbp
