#pragma once

#include <vector>

#include "dbpmae/layers.hpp"
#include "dbpmae/mae.hpp"

namespace dbp {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  double epsilon = 1e-8;
};

// AdamW with decoupled weight decay. Operates on the model's parameter views;
// never touches decorrelation matrices.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const std::vector<ParamView>& params, AdamWConfig config);

  void step(const std::vector<ParamView>& params, double lr);

  long step_count() const { return step_count_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Vector>& first_moments() const { return m_; }
  const std::vector<Vector>& second_moments() const { return v_; }
  void restore(long step_count, std::vector<Vector> m, std::vector<Vector> v);

 private:
  AdamWConfig cfg_;
  long step_count_ = 0;
  std::vector<Vector> m_, v_;
};

struct ScheduleConfig {
  double base_lr = 5e-4;
  int warmup_epochs = 3;
  int total_epochs = 60;
  double min_lr = 0.0;

  void validate() const;
};

// Linear warmup from 0 to base_lr, then cosine decay to min_lr. epoch may be
// fractional; the trainer evaluates it per iteration.
double lr_at(const ScheduleConfig& schedule, double epoch);

// One DBP update over the given sites: subsample each site's cached input,
// estimate the off-diagonal covariance, and apply the R update. Skipped
// entirely once epoch reaches stop_epoch. Sites draw independent subsample
// streams forked from rng.
void dbp_step(const std::vector<SiteRef>& sites, double eta, double subsample_fraction,
              std::optional<int> stop_epoch, int epoch, Rng& rng);

}  // namespace dbp
