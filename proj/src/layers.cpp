#include "dbpmae/layers.hpp"

#include <cmath>
#include <numbers>

namespace dbp {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

// ---------------------------------------------------------------------------
// DecorrelatedLinear

DecorrelatedLinear::DecorrelatedLinear(int in_dim, int out_dim, Rng& rng) {
  weight.resize(out_dim, in_dim);
  const double bound = std::sqrt(6.0 / (in_dim + out_dim));
  for (Index r = 0; r < weight.rows(); ++r)
    for (Index c = 0; c < weight.cols(); ++c) weight(r, c) = rng.uniform(-bound, bound);
  bias = Vector::Zero(out_dim);
  grad_weight = Matrix::Zero(out_dim, in_dim);
  grad_bias = Vector::Zero(out_dim);
}

Matrix DecorrelatedLinear::forward(const Matrix& x_batch) {
  if (x_batch.cols() != weight.cols()) {
    throw ShapeError("linear_forward: input has " + std::to_string(x_batch.cols()) +
                     " columns, layer expects " + std::to_string(weight.cols()));
  }
  cached_input_ = decorr ? decorrelate(*decorr, x_batch) : x_batch;
  has_cache_ = true;
  Matrix out = cached_input_ * weight.transpose();
  out.rowwise() += bias.transpose();
  return out;
}

Matrix DecorrelatedLinear::backward(const Matrix& grad_out) {
  if (!has_cache_) throw StateError("linear_backward called before forward");
  if (grad_out.cols() != weight.rows() || grad_out.rows() != cached_input_.rows()) {
    throw ShapeError("linear_backward: gradient shape mismatch");
  }
  grad_weight.noalias() = grad_out.transpose() * cached_input_;
  grad_bias.noalias() = grad_out.colwise().sum().transpose();
  Matrix grad_x = grad_out * weight;
  if (decorr) grad_x = grad_x * decorr->values;
  return grad_x;
}

void DecorrelatedLinear::clear_cache() {
  cached_input_.resize(0, 0);
  has_cache_ = false;
}

void DecorrelatedLinear::fuse() {
  if (!decorr) return;
  weight = fuse_weights(weight, *decorr);
  decorr.reset();
}

void DecorrelatedLinear::collect_parameters(const std::string& prefix, std::vector<ParamView>& out) {
  out.push_back({prefix + ".weight", weight.data(), grad_weight.data(), weight.size(),
                 weight.rows(), weight.cols()});
  out.push_back({prefix + ".bias", bias.data(), grad_bias.data(), bias.size(), bias.size(), 0});
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm::LayerNorm(int dim) {
  gamma = Vector::Ones(dim);
  beta = Vector::Zero(dim);
  grad_gamma = Vector::Zero(dim);
  grad_beta = Vector::Zero(dim);
}

Matrix LayerNorm::forward(const Matrix& x) {
  if (x.cols() != gamma.size()) throw ShapeError("layernorm_forward: feature dim mismatch");
  Vector mean = x.rowwise().mean();
  cached_norm_ = x;
  cached_norm_.colwise() -= mean;
  cached_inv_std_ = (cached_norm_.array().square().rowwise().mean() + eps).rsqrt();
  cached_norm_.array().colwise() *= cached_inv_std_.array();
  Matrix out = cached_norm_;
  out.array().rowwise() *= gamma.transpose().array();
  out.rowwise() += beta.transpose();
  has_cache_ = true;
  return out;
}

Matrix LayerNorm::backward(const Matrix& grad_out) {
  if (!has_cache_) throw StateError("layernorm_backward called before forward");
  if (grad_out.rows() != cached_norm_.rows() || grad_out.cols() != cached_norm_.cols())
    throw ShapeError("layernorm_backward: gradient shape mismatch");
  grad_gamma = grad_out.cwiseProduct(cached_norm_).colwise().sum().transpose();
  grad_beta = grad_out.colwise().sum().transpose();
  Matrix dxh = grad_out;
  dxh.array().rowwise() *= gamma.transpose().array();
  Vector mean_dxh = dxh.rowwise().mean();
  Vector mean_dxh_xh = dxh.cwiseProduct(cached_norm_).rowwise().mean();
  Matrix grad_x = dxh;
  grad_x.colwise() -= mean_dxh;
  grad_x.array() -= cached_norm_.array().colwise() * mean_dxh_xh.array();
  grad_x.array().colwise() *= cached_inv_std_.array();
  return grad_x;
}

void LayerNorm::collect_parameters(const std::string& prefix, std::vector<ParamView>& out) {
  out.push_back({prefix + ".gamma", gamma.data(), grad_gamma.data(), gamma.size(), gamma.size(), 0});
  out.push_back({prefix + ".beta", beta.data(), grad_beta.data(), beta.size(), beta.size(), 0});
}

// ---------------------------------------------------------------------------
// Activations

Matrix gelu_forward(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& grad_out) {
  if (x.rows() != grad_out.rows() || x.cols() != grad_out.cols())
    throw ShapeError("gelu_backward: shape mismatch");
  Matrix deriv = x.unaryExpr([](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    return cdf + v * pdf;
  });
  return deriv.cwiseProduct(grad_out);
}

Matrix softmax_forward(const Matrix& logits) {
  Matrix out = logits;
  Vector row_max = logits.rowwise().maxCoeff();
  out.colwise() -= row_max;
  out = out.array().exp();
  Vector row_sum = out.rowwise().sum();
  out.array().colwise() /= row_sum.array();
  return out;
}

Matrix softmax_backward(const Matrix& softmax_out, const Matrix& grad_out) {
  if (softmax_out.rows() != grad_out.rows() || softmax_out.cols() != grad_out.cols())
    throw ShapeError("softmax_backward: shape mismatch");
  Vector dot = grad_out.cwiseProduct(softmax_out).rowwise().sum();
  Matrix grad = grad_out;
  grad.colwise() -= dot;
  return grad.cwiseProduct(softmax_out);
}

// ---------------------------------------------------------------------------
// EncoderBlock

EncoderBlock::EncoderBlock(int dim, int heads, int mlp_ratio, Rng& rng)
    : norm1(dim), norm2(dim), heads(heads), dim_(dim) {
  if (heads < 1 || dim % heads != 0)
    throw ConfigError("embed dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  qkv = DecorrelatedLinear(dim, 3 * dim, rng);
  out_proj = DecorrelatedLinear(dim, dim, rng);
  fc1 = DecorrelatedLinear(dim, mlp_ratio * dim, rng);
  fc2 = DecorrelatedLinear(mlp_ratio * dim, dim, rng);
}

Matrix EncoderBlock::forward(const Matrix& x, Index batch, Index tokens) {
  if (x.rows() != batch * tokens || x.cols() != dim_)
    throw ShapeError("attention_forward: expected (" + std::to_string(batch * tokens) + ", " +
                     std::to_string(dim_) + "), got (" + std::to_string(x.rows()) + ", " +
                     std::to_string(x.cols()) + ")");
  batch_ = batch;
  tokens_ = tokens;
  const int dh = dim_ / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix a = norm1.forward(x);
  qkv_out_ = qkv.forward(a);
  attn_.resize(batch * heads * tokens, tokens);
  ctx_.resize(batch * tokens, dim_);
  for (Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto Q = qkv_out_.block(b * tokens, h * dh, tokens, dh);
      auto K = qkv_out_.block(b * tokens, dim_ + h * dh, tokens, dh);
      auto V = qkv_out_.block(b * tokens, 2 * dim_ + h * dh, tokens, dh);
      Matrix scores = (Q * K.transpose()) * scale;
      attn_.block((b * heads + h) * tokens, 0, tokens, tokens) = softmax_forward(scores);
      ctx_.block(b * tokens, h * dh, tokens, dh).noalias() =
          attn_.block((b * heads + h) * tokens, 0, tokens, tokens) * V;
    }
  }
  Matrix x1 = x + out_proj.forward(ctx_);

  Matrix a2 = norm2.forward(x1);
  mlp_pre_ = fc1.forward(a2);
  Matrix act = gelu_forward(mlp_pre_);
  Matrix y = x1 + fc2.forward(act);
  has_cache_ = true;
  return y;
}

Matrix EncoderBlock::backward(const Matrix& grad_out) {
  if (!has_cache_) throw StateError("EncoderBlock backward called before forward");
  const int dh = dim_ / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP branch.
  Matrix g_act = fc2.backward(grad_out);
  Matrix g_pre = gelu_backward(mlp_pre_, g_act);
  Matrix g_a2 = fc1.backward(g_pre);
  Matrix g_x1 = grad_out + norm2.backward(g_a2);

  // Attention branch.
  Matrix g_ctx = out_proj.backward(g_x1);
  Matrix g_qkv = Matrix::Zero(batch_ * tokens_, 3 * dim_);
  for (Index b = 0; b < batch_; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto Q = qkv_out_.block(b * tokens_, h * dh, tokens_, dh);
      auto K = qkv_out_.block(b * tokens_, dim_ + h * dh, tokens_, dh);
      auto V = qkv_out_.block(b * tokens_, 2 * dim_ + h * dh, tokens_, dh);
      auto A = attn_.block((b * heads + h) * tokens_, 0, tokens_, tokens_);
      auto G = g_ctx.block(b * tokens_, h * dh, tokens_, dh);
      Matrix g_attn = G * V.transpose();
      Matrix g_scores = softmax_backward(A, g_attn);
      g_qkv.block(b * tokens_, h * dh, tokens_, dh).noalias() = (g_scores * K) * scale;
      g_qkv.block(b * tokens_, dim_ + h * dh, tokens_, dh).noalias() =
          (g_scores.transpose() * Q) * scale;
      g_qkv.block(b * tokens_, 2 * dim_ + h * dh, tokens_, dh).noalias() = A.transpose() * G;
    }
  }
  Matrix g_a1 = qkv.backward(g_qkv);
  return g_x1 + norm1.backward(g_a1);
}

std::vector<DecorrelatedLinear*> EncoderBlock::decorr_site_layers(bool per_linear_mode) {
  std::vector<DecorrelatedLinear*> sites{&qkv, &fc1};
  if (per_linear_mode) {
    sites.push_back(&out_proj);
    sites.push_back(&fc2);
  }
  return sites;
}

void EncoderBlock::collect_parameters(const std::string& prefix, std::vector<ParamView>& out) {
  norm1.collect_parameters(prefix + ".norm1", out);
  qkv.collect_parameters(prefix + ".qkv", out);
  out_proj.collect_parameters(prefix + ".out_proj", out);
  norm2.collect_parameters(prefix + ".norm2", out);
  fc1.collect_parameters(prefix + ".fc1", out);
  fc2.collect_parameters(prefix + ".fc2", out);
}

void EncoderBlock::fuse() {
  qkv.fuse();
  out_proj.fuse();
  fc1.fuse();
  fc2.fuse();
}

}  // namespace dbp
