#include "dbpmae/decorr.hpp"

#include <cmath>

namespace dbp {

namespace {
constexpr double kDivergenceLimit = 1e6;
}

std::string to_string(DecorrScope scope) {
  switch (scope) {
    case DecorrScope::EncoderOnly: return "encoder_only";
    case DecorrScope::FullModel: return "full_model";
    case DecorrScope::DecoderOnly: return "decoder_only";
  }
  return "encoder_only";
}

DecorrScope scope_from_string(const std::string& s) {
  if (s == "encoder_only") return DecorrScope::EncoderOnly;
  if (s == "full_model") return DecorrScope::FullModel;
  if (s == "decoder_only") return DecorrScope::DecoderOnly;
  throw ConfigError("unknown decorrelation scope: " + s);
}

void DecorrConfig::validate() const {
  if (eta < 0) throw ConfigError("decorr.eta must be non-negative");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw ConfigError("decorr.subsample_fraction must lie in (0, 1]");
  if (stop_epoch && *stop_epoch < 0) throw ConfigError("decorr.stop_epoch must be non-negative");
}

Matrix decorrelate(const DecorrelationMatrix& R, const Matrix& x_batch) {
  if (x_batch.cols() != R.dim) {
    throw ShapeError("decorrelate: input has " + std::to_string(x_batch.cols()) +
                     " columns but site '" + R.site_id + "' expects " + std::to_string(R.dim));
  }
  return x_batch * R.values.transpose();
}

CorrelationEstimate off_diagonal_covariance(const Matrix& z_batch) {
  const Index n = z_batch.rows();
  if (n < 1) throw EmptyBatchError("off_diagonal_covariance: empty batch");
  CorrelationEstimate est;
  est.off_diag.noalias() = (z_batch.transpose() * z_batch) / static_cast<double>(n);
  est.off_diag.diagonal().setZero();
  est.sample_count = static_cast<long>(n);
  return est;
}

Matrix subsample_rows(const Matrix& z_batch, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ShapeError("subsample_rows: fraction must lie in (0, 1]");
  const size_t n = static_cast<size_t>(z_batch.rows());
  const size_t m = std::max<size_t>(
      1, static_cast<size_t>(std::ceil(fraction * static_cast<double>(n))));
  if (m >= n) return z_batch;
  auto rows = rng.sample_without_replacement(n, m);
  Matrix out(static_cast<Index>(m), z_batch.cols());
  for (size_t i = 0; i < m; ++i) out.row(static_cast<Index>(i)) = z_batch.row(static_cast<Index>(rows[i]));
  return out;
}

void update_decorrelation(DecorrelationMatrix& R, const CorrelationEstimate& C, double eta) {
  if (C.off_diag.rows() != R.dim || C.off_diag.cols() != R.dim) {
    throw ShapeError("update_decorrelation: estimate is " + std::to_string(C.off_diag.rows()) +
                     "x" + std::to_string(C.off_diag.cols()) + " but site '" + R.site_id +
                     "' holds a " + std::to_string(R.dim) + "x" + std::to_string(R.dim) + " matrix");
  }
  if (eta <= 0) throw ConfigError("update_decorrelation: eta must be positive");
  R.values -= eta * (C.off_diag * R.values);
  if (!R.values.allFinite() || R.values.cwiseAbs().maxCoeff() > kDivergenceLimit) {
    throw DivergenceError(R.site_id, -1,
                          "decorrelation matrix diverged at site '" + R.site_id + "'");
  }
}

double decorrelation_loss(const CorrelationEstimate& C) {
  const Index d = C.off_diag.rows();
  if (d < 2) throw ShapeError("decorrelation_loss: undefined for dim < 2");
  return C.off_diag.squaredNorm() / static_cast<double>(d * (d - 1));
}

Matrix fuse_weights(const Matrix& W, const DecorrelationMatrix& R) {
  if (W.cols() != R.dim) {
    throw ShapeError("fuse_weights: weight has " + std::to_string(W.cols()) +
                     " columns but site '" + R.site_id + "' expects " + std::to_string(R.dim));
  }
  return W * R.values;
}

}  // namespace dbp
