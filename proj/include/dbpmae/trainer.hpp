#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dbpmae/checkpoint.hpp"
#include "dbpmae/config.hpp"
#include "dbpmae/metrics.hpp"

namespace dbp {

struct TrainerHooks {
  // Test hook, called after each epoch's validation pass (outside the timed
  // training phase). Receives the live model; it must not mutate it.
  std::function<void(int epoch, const MaeModel& model)> after_validation;
};

struct RunResult {
  std::vector<MetricsRecord> records;
  double best_val = std::numeric_limits<double>::quiet_NaN();
  int best_epoch = -1;
  double final_val = std::numeric_limits<double>::quiet_NaN();
  double total_train_seconds = 0.0;
  double total_dbp_seconds = 0.0;  // time spent inside dbp_step only
  std::string metrics_path;
  std::string best_checkpoint_path;
  std::string last_checkpoint_path;
  bool diverged = false;
  std::string divergence_site;
  int divergence_epoch = -1;
};

// Full training run: seeded shuffling, augmentation, forward/backward, AdamW
// for the weights, the DBP update for the R matrices, per-epoch validation,
// metrics CSV and best/last checkpoints under config.output_dir.
RunResult run_training(const TrainConfig& config, const TrainerHooks* hooks = nullptr);

// Mean validation loss of a model over the tail split of a dataset, with the
// run's fixed validation masks. Exposed for checkpoint-equivalence tests.
double evaluate_validation_loss(MaeModel& model, const Dataset& data, const NormStats& stats,
                                size_t val_begin, size_t val_end, int batch_size, uint64_t seed);

}  // namespace dbp
