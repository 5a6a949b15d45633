#pragma once
#include <algorithm>

#include <string>

#include "dbpmae/data.hpp"
#include "dbpmae/decorr.hpp"
#include "dbpmae/mae.hpp"
#include "dbpmae/optim.hpp"

namespace dbp {

enum class TrainMode { BP, DBP };

std::string to_string(TrainMode mode);
TrainMode mode_from_string(const std::string& s);

// Everything a training run needs. Parsed from a flat key=value file with
// dotted section keys; unknown keys are errors.
struct TrainConfig {
  MaeConfig mae;
  DecorrConfig decorr;
  AdamWConfig adamw;
  double base_lr = 5e-4;
  int warmup_epochs = 3;
  double min_lr = 0.0;

  TrainMode mode = TrainMode::BP;
  int epochs = 60;
  int batch_size = 128;
  uint64_t seed = 0;
  double val_fraction = 0.10;
  std::string output_dir = "run_out";
  bool deterministic_timing = false;

  bool use_synthetic = true;
  std::string dataset_path;
  SyntheticSpec synthetic{4444, 3, 32, 4, 1234};

  AugmentConfig augment;

  // Warmup never exceeds the run length (zero-epoch runs are legal no-ops).
  ScheduleConfig schedule() const {
    return {base_lr, std::min(warmup_epochs, epochs), epochs, min_lr};
  }
  void validate() const;
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);

// Canonical dump: every key, fixed order, doubles in round-trip precision.
std::string serialize_config(const TrainConfig& cfg);

// Apply one "key=value" override to an existing config.
void apply_config_override(TrainConfig& cfg, const std::string& assignment);

}  // namespace dbp
