#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbpmae/layers.hpp"

namespace dbp {

struct MaeConfig {
  int image_size = 32;
  int patch_size = 4;
  int channels = 3;
  int embed_dim = 64;
  int depth = 3;
  int heads = 4;
  int decoder_embed_dim = 32;
  int decoder_depth = 2;
  int decoder_heads = 4;
  int mlp_ratio = 4;
  double mask_ratio = 0.75;
  bool loss_on_masked_only = true;
  bool norm_pix_targets = false;  // per-patch target normalization, off by default

  int grid() const { return image_size / patch_size; }
  int patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  void validate() const;
};

struct MaskPlan {
  std::vector<int> visible;  // sorted patch indices
  std::vector<int> masked;   // sorted patch indices
  uint64_t seed = 0;
};

// Non-overlapping patches in raster order; each patch flattened channel-major
// then row-major. image points at C*H*W values, channel plane contiguous.
Matrix patchify(const double* image, int channels, int height, int width, int patch_size);
void unpatchify(const Matrix& patches, int channels, int height, int width, int patch_size,
                double* image);

// |masked| = round(mask_ratio * P), chosen uniformly without replacement.
MaskPlan make_mask(int num_patches, double mask_ratio, Rng& rng);

// Fixed 2-D sine/cosine position embedding on a square patch grid.
Matrix sincos_position_embedding(int grid, int dim);

// Mean squared reconstruction error. With masked_only, the mean runs over the
// masked patches of each image (all pixel entries), then over the batch.
// grad_out, when given, receives dLoss/dReconstruction.
double mae_loss(const Matrix& reconstruction, const Matrix& target_patches,
                const std::vector<MaskPlan>& plans, bool masked_only, bool norm_pix_targets,
                Matrix* grad_out = nullptr);

struct SiteRef {
  std::string name;
  DecorrelatedLinear* layer;
};

// Masked-autoencoder ViT. The encoder consumes only the visible patches; the
// decoder fills masked positions with a learned token and predicts every patch
// in pixel space.
class MaeModel {
 public:
  MaeConfig cfg;
  DecorrelatedLinear patch_embed;
  std::vector<EncoderBlock> enc_blocks;
  LayerNorm enc_norm;
  DecorrelatedLinear decoder_embed;
  Vector mask_token;
  Vector grad_mask_token;
  std::vector<EncoderBlock> dec_blocks;
  LayerNorm dec_norm;
  DecorrelatedLinear pred_head;
  Matrix enc_pos;  // P x embed_dim, fixed
  Matrix dec_pos;  // P x decoder_embed_dim, fixed

  MaeModel(const MaeConfig& cfg, uint64_t init_seed);

  // patches: (B*P) x patch_dim, rows of one image contiguous. Per-image masks
  // are derived from mask_seed. Returns the (B*P) x patch_dim reconstruction.
  const Matrix& forward(const Matrix& patches, Index batch, uint64_t mask_seed);
  void backward(const Matrix& grad_reconstruction);

  const Matrix& reconstruction() const { return recon_; }
  const std::vector<MaskPlan>& plans() const { return plans_; }
  const Matrix& encoder_output() const { return enc_out_; }

  double loss(const Matrix& target_patches, Matrix* grad_out = nullptr) const;

  // Layers whose inputs are decorrelation sites under the given scope. The
  // list is a pure function of the config; R may or may not be attached.
  std::vector<SiteRef> decorr_sites(DecorrScope scope, bool per_linear_mode);
  void attach_decorrelation(DecorrScope scope, bool per_linear_mode);
  bool any_decorrelation() const;
  void fuse_all();

  std::vector<ParamView> parameters();  // excludes decorrelation matrices
  void zero_grads();

 private:
  std::vector<MaskPlan> plans_;
  Index batch_ = 0;
  Index visible_ = 0;
  Matrix enc_out_;  // (B*V) x embed_dim after final encoder norm
  Matrix recon_;
  bool has_cache_ = false;
};

}  // namespace dbp
