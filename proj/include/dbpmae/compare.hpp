#pragma once

#include <string>
#include <vector>

#include "dbpmae/trainer.hpp"

namespace dbp {

// Two-sided Welch t-test p-value for the difference of means. Degenerate
// zero-variance inputs map to 1.0 (equal means) or 0.0 (different means).
double welch_p_value(const std::vector<double>& a, const std::vector<double>& b);

struct PairedComparison {
  std::vector<uint64_t> seeds;
  std::vector<RunResult> bp_runs, dbp_runs;  // ordered like seeds

  // Per-seed scalars. "Reach" means: first 1-based epoch whose validation
  // loss is <= that seed's best BP validation loss (-1 when never reached).
  std::vector<double> bp_best_val;
  std::vector<int> bp_epochs_to_reach, dbp_epochs_to_reach;
  std::vector<double> bp_seconds_to_reach, dbp_seconds_to_reach;
  std::vector<double> bp_final_val, dbp_final_val;
  double p_value_final_val = 1.0;
};

// Runs BP and DBP once per seed with identical data order (only the mode and
// the seed differ), then aggregates. Runs execute on `jobs` worker threads;
// each run is fully independent. Artifacts land under out_dir/{bp,dbp}_seed<k>.
PairedComparison run_paired_comparison(const TrainConfig& base,
                                       const std::vector<uint64_t>& seeds, int jobs,
                                       const std::string& out_dir);

// Same protocol with per-mode hyperparameters (the grid search may pick a
// different weight learning rate for each regime). Everything data-related
// must match between the two configs; only optimizer settings may differ.
PairedComparison run_paired_comparison(const TrainConfig& bp_base, const TrainConfig& dbp_base,
                                       const std::vector<uint64_t>& seeds, int jobs,
                                       const std::string& out_dir);

// Per-epoch mean/std/stderr table plus the per-seed scalars, written under
// out_dir as summary_per_epoch.csv and summary.csv.
void write_comparison_summary(const PairedComparison& cmp, const std::string& out_dir);

struct SweepResult {
  double lr_W = 0.0;
  double lr_R = 0.0;  // 0 runs the cell as plain BP
  double best_train = 0.0, best_val = 0.0;
  double final_train = 0.0, final_val = 0.0;
  bool failed = false;
  std::string error;
};

// Short-budget grid search over (lr_W, lr_R). Cell failures are recorded and
// the sweep continues. Results are written to out_dir/sweep.csv.
std::vector<SweepResult> sweep(const TrainConfig& base, const std::vector<double>& lr_w_grid,
                               const std::vector<double>& lr_r_grid, int epoch_budget, int jobs,
                               const std::string& out_dir);

}  // namespace dbp
