#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dbpmae/common.hpp"
#include "dbpmae/decorr.hpp"
#include "dbpmae/rng.hpp"

namespace dbp {

// Named view over one parameter tensor and its gradient. The optimizer and the
// checkpoint writer iterate these; decorrelation matrices are deliberately not
// part of the list (they have their own update rule).
struct ParamView {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  long size = 0;
  long rows = 0;
  long cols = 0;  // 0 for vectors
};

// Affine layer with an optional decorrelation matrix in front:
// out = (R x) W^T + b when R is present, x W^T + b otherwise.
// The (decorrelated) input of the last forward is cached; the backward pass
// and the correlation estimate both read it.
class DecorrelatedLinear {
 public:
  Matrix weight;  // out_dim x in_dim
  Vector bias;
  std::optional<DecorrelationMatrix> decorr;
  Matrix grad_weight;
  Vector grad_bias;

  DecorrelatedLinear() = default;
  DecorrelatedLinear(int in_dim, int out_dim, Rng& rng);

  Matrix forward(const Matrix& x_batch);
  // Returns grad wrt the raw input x. Fills grad_weight / grad_bias. R gets
  // no gradient; it acts as a constant linear factor inside the map.
  Matrix backward(const Matrix& grad_out);

  const Matrix& cached_input() const { return cached_input_; }
  bool has_cache() const { return has_cache_; }
  void clear_cache();

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }

  // Fold R into the weight and drop it. No-op when R is absent.
  void fuse();

  void collect_parameters(const std::string& prefix, std::vector<ParamView>& out);

 private:
  Matrix cached_input_;  // z = R x (or x when R is absent)
  bool has_cache_ = false;
};

// Layer normalization over the feature axis with learnable scale and shift.
class LayerNorm {
 public:
  Vector gamma, beta;
  Vector grad_gamma, grad_beta;
  double eps = 1e-6;

  LayerNorm() = default;
  explicit LayerNorm(int dim);

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& grad_out);

  void collect_parameters(const std::string& prefix, std::vector<ParamView>& out);

 private:
  Matrix cached_norm_;   // normalized rows, pre scale/shift
  Vector cached_inv_std_;
  bool has_cache_ = false;
};

// Exact (Gaussian CDF) GELU.
Matrix gelu_forward(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& grad_out);

// Row-wise softmax.
Matrix softmax_forward(const Matrix& logits);
Matrix softmax_backward(const Matrix& softmax_out, const Matrix& grad_out);

// Pre-norm transformer block:
//   x <- x + out_proj(attention(norm1(x)))
//   x <- x + fc2(gelu(fc1(norm2(x))))
// Decorrelation sites in the default mode are the QKV input and the MLP first
// linear input; per-linear mode extends them to out_proj and fc2.
class EncoderBlock {
 public:
  LayerNorm norm1, norm2;
  DecorrelatedLinear qkv;       // dim -> 3*dim
  DecorrelatedLinear out_proj;  // dim -> dim
  DecorrelatedLinear fc1;       // dim -> mlp_ratio*dim
  DecorrelatedLinear fc2;       // mlp_ratio*dim -> dim
  int heads = 1;

  EncoderBlock() = default;
  EncoderBlock(int dim, int heads, int mlp_ratio, Rng& rng);

  // x is (batch * tokens) x dim; rows of one image are contiguous.
  Matrix forward(const Matrix& x, Index batch, Index tokens);
  Matrix backward(const Matrix& grad_out);

  // Attention weights of the last forward, stacked as (batch*heads*tokens) x tokens.
  const Matrix& last_attention_weights() const { return attn_; }

  std::vector<DecorrelatedLinear*> decorr_site_layers(bool per_linear_mode);
  void collect_parameters(const std::string& prefix, std::vector<ParamView>& out);
  void fuse();

 private:
  int dim_ = 0;
  Index batch_ = 0, tokens_ = 0;
  Matrix qkv_out_;   // (B*T) x 3*dim
  Matrix attn_;      // (B*H*T) x T softmax weights
  Matrix ctx_;       // (B*T) x dim attention output before projection
  Matrix mlp_pre_;   // fc1 output, pre-GELU
  bool has_cache_ = false;
};

}  // namespace dbp
