#include "dbpmae/mae.hpp"

#include <cmath>

namespace dbp {

void MaeConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || channels <= 0)
    throw ConfigError("mae: image_size, patch_size and channels must be positive");
  if (image_size % patch_size != 0)
    throw ConfigError("mae: image_size " + std::to_string(image_size) +
                      " not divisible by patch_size " + std::to_string(patch_size));
  if (depth < 1 || decoder_depth < 1) throw ConfigError("mae: depth must be at least 1");
  if (embed_dim % heads != 0)
    throw ConfigError("mae: embed_dim not divisible by heads");
  if (decoder_embed_dim % decoder_heads != 0)
    throw ConfigError("mae: decoder_embed_dim not divisible by decoder_heads");
  if (embed_dim % 4 != 0 || decoder_embed_dim % 4 != 0)
    throw ConfigError("mae: embedding dims must be multiples of 4 for the 2-D position code");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0))
    throw ConfigError("mae: mask_ratio must lie in [0, 1)");
  if (mlp_ratio < 1) throw ConfigError("mae: mlp_ratio must be at least 1");
}

Matrix patchify(const double* image, int channels, int height, int width, int patch_size) {
  if (height % patch_size != 0 || width % patch_size != 0)
    throw ShapeError("patchify: image dims not divisible by patch size");
  const int gh = height / patch_size, gw = width / patch_size;
  Matrix out(gh * gw, patch_size * patch_size * channels);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const Index row = gy * gw + gx;
      for (int c = 0; c < channels; ++c) {
        for (int py = 0; py < patch_size; ++py) {
          for (int px = 0; px < patch_size; ++px) {
            out(row, c * patch_size * patch_size + py * patch_size + px) =
                image[(c * height + gy * patch_size + py) * width + gx * patch_size + px];
          }
        }
      }
    }
  }
  return out;
}

void unpatchify(const Matrix& patches, int channels, int height, int width, int patch_size,
                double* image) {
  if (height % patch_size != 0 || width % patch_size != 0)
    throw ShapeError("unpatchify: image dims not divisible by patch size");
  const int gh = height / patch_size, gw = width / patch_size;
  if (patches.rows() != gh * gw || patches.cols() != patch_size * patch_size * channels)
    throw ShapeError("unpatchify: patch matrix shape mismatch");
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const Index row = gy * gw + gx;
      for (int c = 0; c < channels; ++c) {
        for (int py = 0; py < patch_size; ++py) {
          for (int px = 0; px < patch_size; ++px) {
            image[(c * height + gy * patch_size + py) * width + gx * patch_size + px] =
                patches(row, c * patch_size * patch_size + py * patch_size + px);
          }
        }
      }
    }
  }
}

MaskPlan make_mask(int num_patches, double mask_ratio, Rng& rng) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0))
    throw ConfigError("make_mask: mask_ratio must lie in [0, 1)");
  const int m = static_cast<int>(std::lround(mask_ratio * num_patches));
  std::vector<int> order(num_patches);
  for (int i = 0; i < num_patches; ++i) order[i] = i;
  rng.shuffle(order);
  MaskPlan plan;
  plan.masked.assign(order.begin(), order.begin() + m);
  plan.visible.assign(order.begin() + m, order.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

Matrix sincos_position_embedding(int grid, int dim) {
  if (dim % 4 != 0) throw ConfigError("sincos_position_embedding: dim must be a multiple of 4");
  const int quarter = dim / 4;
  std::vector<double> omega(quarter);
  for (int k = 0; k < quarter; ++k)
    omega[k] = 1.0 / std::pow(10000.0, static_cast<double>(k) / quarter);
  Matrix pos(grid * grid, dim);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const Index row = gy * grid + gx;
      for (int k = 0; k < quarter; ++k) {
        pos(row, k) = std::sin(gy * omega[k]);
        pos(row, quarter + k) = std::cos(gy * omega[k]);
        pos(row, 2 * quarter + k) = std::sin(gx * omega[k]);
        pos(row, 3 * quarter + k) = std::cos(gx * omega[k]);
      }
    }
  }
  return pos;
}

double mae_loss(const Matrix& reconstruction, const Matrix& target_patches,
                const std::vector<MaskPlan>& plans, bool masked_only, bool norm_pix_targets,
                Matrix* grad_out) {
  if (reconstruction.rows() != target_patches.rows() ||
      reconstruction.cols() != target_patches.cols())
    throw ShapeError("mae_loss: reconstruction/target shape mismatch");
  const Index batch = static_cast<Index>(plans.size());
  if (batch == 0 || reconstruction.rows() % batch != 0)
    throw ShapeError("mae_loss: plan count does not divide row count");
  const Index P = reconstruction.rows() / batch;
  const Index pd = reconstruction.cols();
  if (grad_out) grad_out->setZero(reconstruction.rows(), pd);

  double total = 0.0;
  for (Index b = 0; b < batch; ++b) {
    std::vector<int> all;
    const std::vector<int>* rows = &plans[static_cast<size_t>(b)].masked;
    if (!masked_only) {
      all.resize(static_cast<size_t>(P));
      for (Index p = 0; p < P; ++p) all[static_cast<size_t>(p)] = static_cast<int>(p);
      rows = &all;
    }
    if (rows->empty()) throw EmptyBatchError("mae_loss: no masked patches to score");
    const double denom = static_cast<double>(rows->size()) * static_cast<double>(pd);
    double img_loss = 0.0;
    for (int p : *rows) {
      const Index r = b * P + p;
      Eigen::RowVectorXd target = target_patches.row(r);
      if (norm_pix_targets) {
        const double mean = target.mean();
        const double var = (target.array() - mean).square().mean();
        target = ((target.array() - mean) / std::sqrt(var + 1e-6)).matrix();
      }
      Eigen::RowVectorXd diff = reconstruction.row(r) - target;
      img_loss += diff.squaredNorm();
      if (grad_out) grad_out->row(r) = diff * (2.0 / (denom * static_cast<double>(batch)));
    }
    total += img_loss / denom;
  }
  return total / static_cast<double>(batch);
}

// ---------------------------------------------------------------------------
// MaeModel

MaeModel::MaeModel(const MaeConfig& config, uint64_t init_seed) : cfg(config) {
  cfg.validate();
  Rng rng(mix_seed(init_seed, 0x6d6165696e6974ULL));
  patch_embed = DecorrelatedLinear(cfg.patch_dim(), cfg.embed_dim, rng);
  enc_blocks.reserve(static_cast<size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i)
    enc_blocks.emplace_back(cfg.embed_dim, cfg.heads, cfg.mlp_ratio, rng);
  enc_norm = LayerNorm(cfg.embed_dim);
  decoder_embed = DecorrelatedLinear(cfg.embed_dim, cfg.decoder_embed_dim, rng);
  mask_token.resize(cfg.decoder_embed_dim);
  for (Index i = 0; i < mask_token.size(); ++i) mask_token(i) = 0.02 * rng.normal();
  grad_mask_token = Vector::Zero(cfg.decoder_embed_dim);
  dec_blocks.reserve(static_cast<size_t>(cfg.decoder_depth));
  for (int i = 0; i < cfg.decoder_depth; ++i)
    dec_blocks.emplace_back(cfg.decoder_embed_dim, cfg.decoder_heads, cfg.mlp_ratio, rng);
  dec_norm = LayerNorm(cfg.decoder_embed_dim);
  pred_head = DecorrelatedLinear(cfg.decoder_embed_dim, cfg.patch_dim(), rng);
  enc_pos = sincos_position_embedding(cfg.grid(), cfg.embed_dim);
  dec_pos = sincos_position_embedding(cfg.grid(), cfg.decoder_embed_dim);
}

const Matrix& MaeModel::forward(const Matrix& patches, Index batch, uint64_t mask_seed) {
  const Index P = cfg.patches();
  if (patches.rows() != batch * P || patches.cols() != cfg.patch_dim())
    throw ShapeError("mae_forward: patch matrix shape mismatch");

  plans_.clear();
  plans_.reserve(static_cast<size_t>(batch));
  for (Index b = 0; b < batch; ++b) {
    const uint64_t s = mix_seed(mask_seed, static_cast<uint64_t>(b));
    Rng rng(s);
    MaskPlan plan = make_mask(static_cast<int>(P), cfg.mask_ratio, rng);
    plan.seed = s;
    plans_.push_back(std::move(plan));
  }
  const Index V = static_cast<Index>(plans_.front().visible.size());
  if (V == 0) throw ConfigError("mae_forward: mask ratio leaves no visible patches");
  batch_ = batch;
  visible_ = V;

  // Gather visible patches, embed, add position code.
  Matrix vis(batch * V, cfg.patch_dim());
  for (Index b = 0; b < batch; ++b)
    for (Index j = 0; j < V; ++j)
      vis.row(b * V + j) = patches.row(b * P + plans_[static_cast<size_t>(b)].visible[static_cast<size_t>(j)]);
  Matrix x = patch_embed.forward(vis);
  for (Index b = 0; b < batch; ++b)
    for (Index j = 0; j < V; ++j)
      x.row(b * V + j) += enc_pos.row(plans_[static_cast<size_t>(b)].visible[static_cast<size_t>(j)]);

  for (auto& block : enc_blocks) x = block.forward(x, batch, V);
  enc_out_ = enc_norm.forward(x);

  // Decoder: embed encoded tokens, scatter with mask tokens, add positions.
  Matrix dec_vis = decoder_embed.forward(enc_out_);
  Matrix dec(batch * P, cfg.decoder_embed_dim);
  for (Index b = 0; b < batch; ++b) {
    const auto& plan = plans_[static_cast<size_t>(b)];
    for (int p : plan.masked) dec.row(b * P + p) = mask_token.transpose();
    for (Index j = 0; j < V; ++j) dec.row(b * P + plan.visible[static_cast<size_t>(j)]) = dec_vis.row(b * V + j);
    for (Index p = 0; p < P; ++p) dec.row(b * P + p) += dec_pos.row(p);
  }
  for (auto& block : dec_blocks) dec = block.forward(dec, batch, P);
  recon_ = pred_head.forward(dec_norm.forward(dec));
  has_cache_ = true;
  return recon_;
}

void MaeModel::backward(const Matrix& grad_reconstruction) {
  if (!has_cache_) throw StateError("mae backward called before forward");
  const Index P = cfg.patches();
  const Index V = visible_;

  Matrix g = pred_head.backward(grad_reconstruction);
  g = dec_norm.backward(g);
  for (auto it = dec_blocks.rbegin(); it != dec_blocks.rend(); ++it) g = it->backward(g);

  // Split the decoder-input gradient into visible-token and mask-token parts.
  grad_mask_token.setZero();
  Matrix g_vis(batch_ * V, cfg.decoder_embed_dim);
  for (Index b = 0; b < batch_; ++b) {
    const auto& plan = plans_[static_cast<size_t>(b)];
    for (int p : plan.masked) grad_mask_token += g.row(b * P + p).transpose();
    for (Index j = 0; j < V; ++j) g_vis.row(b * V + j) = g.row(b * P + plan.visible[static_cast<size_t>(j)]);
  }

  Matrix ge = decoder_embed.backward(g_vis);
  ge = enc_norm.backward(ge);
  for (auto it = enc_blocks.rbegin(); it != enc_blocks.rend(); ++it) ge = it->backward(ge);
  patch_embed.backward(ge);  // gradient wrt pixels is discarded
}

double MaeModel::loss(const Matrix& target_patches, Matrix* grad_out) const {
  if (!has_cache_) throw StateError("mae loss requested before forward");
  return mae_loss(recon_, target_patches, plans_, cfg.loss_on_masked_only, cfg.norm_pix_targets,
                  grad_out);
}

std::vector<SiteRef> MaeModel::decorr_sites(DecorrScope scope, bool per_linear_mode) {
  std::vector<SiteRef> sites;
  auto add_block_sites = [&](EncoderBlock& block, const std::string& prefix) {
    sites.push_back({prefix + ".qkv", &block.qkv});
    sites.push_back({prefix + ".fc1", &block.fc1});
    if (per_linear_mode) {
      sites.push_back({prefix + ".out_proj", &block.out_proj});
      sites.push_back({prefix + ".fc2", &block.fc2});
    }
  };
  if (scope == DecorrScope::EncoderOnly || scope == DecorrScope::FullModel) {
    sites.push_back({"patch_embed", &patch_embed});
    for (size_t i = 0; i < enc_blocks.size(); ++i)
      add_block_sites(enc_blocks[i], "enc.block" + std::to_string(i));
  }
  if (scope == DecorrScope::DecoderOnly || scope == DecorrScope::FullModel) {
    for (size_t i = 0; i < dec_blocks.size(); ++i)
      add_block_sites(dec_blocks[i], "dec.block" + std::to_string(i));
  }
  return sites;
}

void MaeModel::attach_decorrelation(DecorrScope scope, bool per_linear_mode) {
  for (auto& site : decorr_sites(scope, per_linear_mode))
    site.layer->decorr = DecorrelationMatrix(site.layer->in_dim(), site.name);
}

bool MaeModel::any_decorrelation() const {
  auto check = [](const DecorrelatedLinear& l) { return l.decorr.has_value(); };
  if (check(patch_embed) || check(decoder_embed) || check(pred_head)) return true;
  for (const auto& b : enc_blocks)
    if (check(b.qkv) || check(b.out_proj) || check(b.fc1) || check(b.fc2)) return true;
  for (const auto& b : dec_blocks)
    if (check(b.qkv) || check(b.out_proj) || check(b.fc1) || check(b.fc2)) return true;
  return false;
}

void MaeModel::fuse_all() {
  patch_embed.fuse();
  for (auto& b : enc_blocks) b.fuse();
  decoder_embed.fuse();
  for (auto& b : dec_blocks) b.fuse();
  pred_head.fuse();
}

std::vector<ParamView> MaeModel::parameters() {
  std::vector<ParamView> out;
  patch_embed.collect_parameters("patch_embed", out);
  for (size_t i = 0; i < enc_blocks.size(); ++i)
    enc_blocks[i].collect_parameters("enc.block" + std::to_string(i), out);
  enc_norm.collect_parameters("enc.norm", out);
  decoder_embed.collect_parameters("decoder_embed", out);
  out.push_back({"mask_token", mask_token.data(), grad_mask_token.data(), mask_token.size(),
                 mask_token.size(), 0});
  for (size_t i = 0; i < dec_blocks.size(); ++i)
    dec_blocks[i].collect_parameters("dec.block" + std::to_string(i), out);
  dec_norm.collect_parameters("dec.norm", out);
  pred_head.collect_parameters("pred_head", out);
  return out;
}

void MaeModel::zero_grads() {
  for (auto& p : parameters())
    for (long i = 0; i < p.size; ++i) p.grad[i] = 0.0;
}

}  // namespace dbp
