#include "dbpmae/trainer.hpp"

#include <chrono>
#include <filesystem>

#include "dbpmae/optim.hpp"

namespace dbp {

namespace {

// Stream tags keep the independent random consumers apart.
constexpr uint64_t kInitTag = 0x01;
constexpr uint64_t kOrderTag = 0x02;
constexpr uint64_t kAugTag = 0x03;
constexpr uint64_t kMaskTag = 0x04;
constexpr uint64_t kDbpTag = 0x05;
constexpr uint64_t kValMaskTag = 0x06;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Patchify a set of images into one (n*P) x patch_dim matrix. Augmentation is
// applied only on the training path; validation images are normalized only.
void assemble_batch(const Dataset& data, const std::vector<size_t>& ids, const MaeConfig& mae,
                    const NormStats& stats, const AugmentConfig* augment, uint64_t aug_seed_base,
                    size_t epoch_pos_base, Matrix& out) {
  const int C = mae.channels, H = mae.image_size, W = mae.image_size;
  const Index P = mae.patches();
  out.resize(static_cast<Index>(ids.size()) * P, mae.patch_dim());
  std::vector<double> img(static_cast<size_t>(C) * H * W);
  for (size_t k = 0; k < ids.size(); ++k) {
    const float* src = data.image(ids[k]);
    if (augment) {
      Rng rng(mix_seed(aug_seed_base, static_cast<uint64_t>(epoch_pos_base + k)));
      augment_image(src, C, H, W, *augment, stats, rng, img.data());
    } else {
      normalize_image(src, C, H, W, stats, img.data());
    }
    out.middleRows(static_cast<Index>(k) * P, P) = patchify(img.data(), C, H, W, mae.patch_size);
  }
}

}  // namespace

double evaluate_validation_loss(MaeModel& model, const Dataset& data, const NormStats& stats,
                                size_t val_begin, size_t val_end, int batch_size, uint64_t seed) {
  if (val_begin >= val_end) throw ShapeError("evaluate_validation_loss: empty split");
  double total = 0.0;
  size_t images = 0;
  Matrix patches;
  for (size_t start = val_begin, b = 0; start < val_end; start += static_cast<size_t>(batch_size), ++b) {
    const size_t stop = std::min(val_end, start + static_cast<size_t>(batch_size));
    std::vector<size_t> ids;
    for (size_t i = start; i < stop; ++i) ids.push_back(i);
    assemble_batch(data, ids, model.cfg, stats, nullptr, 0, 0, patches);
    model.forward(patches, static_cast<Index>(ids.size()), mix_seed(seed, kValMaskTag, b));
    total += model.loss(patches) * static_cast<double>(ids.size());
    images += ids.size();
  }
  return total / static_cast<double>(images);
}

RunResult run_training(const TrainConfig& config, const TrainerHooks* hooks) {
  config.validate();
  RunResult result;
  std::filesystem::create_directories(config.output_dir);
  result.metrics_path = config.output_dir + "/metrics.csv";
  result.best_checkpoint_path = config.output_dir + "/best.ckpt";
  result.last_checkpoint_path = config.output_dir + "/last.ckpt";

  Dataset data = config.use_synthetic ? generate_synthetic(config.synthetic)
                                      : load_dataset(config.dataset_path);
  const size_t val_count =
      std::max<size_t>(1, static_cast<size_t>(std::lround(config.val_fraction * data.count)));
  if (val_count >= data.count)
    throw ConfigError("run_training: validation split leaves no training images");
  const size_t train_count = data.count - val_count;
  const NormStats stats = compute_norm_stats(data, 0, train_count);

  MaeModel model(config.mae, mix_seed(config.seed, kInitTag));
  if (config.mode == TrainMode::DBP)
    model.attach_decorrelation(config.decorr.scope, config.decorr.per_linear_mode);
  // The site list is scope-dependent but mode-independent: a BP run measures
  // raw input correlations at the same places DBP would decorrelate.
  auto sites = model.decorr_sites(config.decorr.scope, config.decorr.per_linear_mode);

  AdamW optimizer(model.parameters(), config.adamw);
  const ScheduleConfig sched = config.schedule();

  const int nb = static_cast<int>((train_count + config.batch_size - 1) / config.batch_size);
  auto write_checkpoints = [&](int epoch, bool best) {
    std::array<uint64_t, 2> rng_state{config.seed, static_cast<uint64_t>(epoch + 1)};
    if (best)
      save_checkpoint(result.best_checkpoint_path, model, config, epoch, false, &optimizer,
                      rng_state);
    save_checkpoint(result.last_checkpoint_path, model, config, epoch, false, &optimizer,
                    rng_state);
  };

  if (config.epochs == 0) {
    write_checkpoints(-1, false);
    export_metrics(result.records, result.metrics_path);
    return result;
  }

  std::vector<size_t> order(train_count);
  Matrix patches, grad;
  double cum_train_seconds = 0.0;
  std::string failure_note;

  for (int epoch = 0; epoch < config.epochs && failure_note.empty(); ++epoch) {
    for (size_t i = 0; i < train_count; ++i) order[i] = i;
    Rng order_rng(mix_seed(config.seed, kOrderTag, static_cast<uint64_t>(epoch)));
    order_rng.shuffle(order);

    double epoch_loss = 0.0;
    size_t epoch_images = 0;
    double epoch_seconds = 0.0;
    double epoch_dbp_seconds = 0.0;

    const double t_epoch0 = now_seconds();
    for (int b = 0; b < nb; ++b) {
      const size_t start = static_cast<size_t>(b) * config.batch_size;
      const size_t stop = std::min(train_count, start + static_cast<size_t>(config.batch_size));
      std::vector<size_t> ids(order.begin() + start, order.begin() + stop);

      assemble_batch(data, ids, config.mae, stats,
                     &config.augment, mix_seed(config.seed, kAugTag, static_cast<uint64_t>(epoch)),
                     start, patches);
      model.forward(patches, static_cast<Index>(ids.size()),
                    mix_seed(config.seed, kMaskTag, static_cast<uint64_t>(epoch),
                             static_cast<uint64_t>(b)));
      const double loss = model.loss(patches, &grad);
      model.backward(grad);

      const double frac_epoch = epoch + static_cast<double>(b) / nb;
      optimizer.step(model.parameters(), lr_at(sched, frac_epoch));

      if (config.mode == TrainMode::DBP) {
        const double t0 = now_seconds();
        Rng dbp_rng(mix_seed(config.seed, kDbpTag, static_cast<uint64_t>(epoch),
                             static_cast<uint64_t>(b)));
        try {
          dbp_step(sites, config.decorr.eta, config.decorr.subsample_fraction,
                   config.decorr.stop_epoch, epoch, dbp_rng);
        } catch (const DivergenceError& e) {
          result.diverged = true;
          result.divergence_site = e.site_id;
          result.divergence_epoch = e.epoch;
          failure_note = "error: decorrelation divergence at epoch=" + std::to_string(e.epoch) +
                         " site=" + e.site_id;
          break;
        }
        epoch_dbp_seconds += now_seconds() - t0;
      }
      epoch_loss += loss * static_cast<double>(ids.size());
      epoch_images += ids.size();
    }
    epoch_seconds = now_seconds() - t_epoch0;
    if (config.deterministic_timing) {
      epoch_seconds = 1e-3 * nb;
      epoch_dbp_seconds = 0.0;
    }
    if (!failure_note.empty()) break;

    cum_train_seconds += epoch_seconds;
    result.total_dbp_seconds += epoch_dbp_seconds;

    // Residual correlation at the sites, measured on the last batch's cached
    // inputs before validation overwrites them.
    double mean_decorr = 0.0;
    int counted = 0;
    for (const auto& site : sites) {
      if (!site.layer->has_cache()) continue;
      mean_decorr += decorrelation_loss(off_diagonal_covariance(site.layer->cached_input()));
      ++counted;
    }
    if (counted > 0) mean_decorr /= counted;

    const double val_loss = evaluate_validation_loss(model, data, stats, train_count, data.count,
                                                     config.batch_size, config.seed);
    if (hooks && hooks->after_validation) hooks->after_validation(epoch, model);

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(epoch_images);
    rec.val_loss = val_loss;
    rec.mean_decorr_loss = mean_decorr;
    rec.wall_seconds = cum_train_seconds;
    rec.lr_W = lr_at(sched, epoch + static_cast<double>(nb - 1) / nb);
    const bool dbp_active = config.mode == TrainMode::DBP &&
                            (!config.decorr.stop_epoch || epoch < *config.decorr.stop_epoch);
    rec.lr_R = dbp_active ? config.decorr.eta : 0.0;
    result.records.push_back(rec);

    const bool improved = result.best_epoch < 0 || val_loss < result.best_val;
    if (improved) {
      result.best_val = val_loss;
      result.best_epoch = epoch;
    }
    write_checkpoints(epoch, improved);
  }

  result.total_train_seconds = cum_train_seconds;
  if (!result.records.empty()) result.final_val = result.records.back().val_loss;
  export_metrics(result.records, result.metrics_path, failure_note);
  return result;
}

}  // namespace dbp
