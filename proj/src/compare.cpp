#include "dbpmae/compare.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

namespace dbp {

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

void run_tasks(std::vector<std::function<void()>>& tasks, int jobs) {
  jobs = std::max(1, jobs);
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      tasks[i]();
    }
  };
  if (jobs == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

int first_epoch_reaching(const std::vector<MetricsRecord>& records, double threshold) {
  for (const auto& r : records)
    if (r.val_loss <= threshold) return r.epoch + 1;
  return -1;
}

double seconds_at_epoch(const std::vector<MetricsRecord>& records, int one_based_epoch) {
  if (one_based_epoch < 1 || one_based_epoch > static_cast<int>(records.size())) return -1.0;
  return records[static_cast<size_t>(one_based_epoch - 1)].wall_seconds;
}

}  // namespace

double welch_p_value(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw ShapeError("welch_p_value: need at least two samples per group");
  const double ma = mean_of(a), mb = mean_of(b);
  const double va = sample_var(a, ma), vb = sample_var(b, mb);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double se2 = va / na + vb / nb;
  if (se2 < 1e-300) return std::abs(ma - mb) < 1e-300 ? 1.0 : 0.0;
  const double t = (ma - mb) / std::sqrt(se2);
  const double df = se2 * se2 / ((va / na) * (va / na) / (na - 1.0) +
                                 (vb / nb) * (vb / nb) / (nb - 1.0));
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(dist, -std::abs(t));
}

PairedComparison run_paired_comparison(const TrainConfig& base,
                                       const std::vector<uint64_t>& seeds, int jobs,
                                       const std::string& out_dir) {
  return run_paired_comparison(base, base, seeds, jobs, out_dir);
}

PairedComparison run_paired_comparison(const TrainConfig& bp_base, const TrainConfig& dbp_base,
                                       const std::vector<uint64_t>& seeds, int jobs,
                                       const std::string& out_dir) {
  if (seeds.size() < 2)
    throw ConfigError("run_paired_comparison: need at least two seeds");
  if (bp_base.synthetic.seed != dbp_base.synthetic.seed ||
      bp_base.dataset_path != dbp_base.dataset_path ||
      bp_base.epochs != dbp_base.epochs || bp_base.batch_size != dbp_base.batch_size)
    throw ConfigError("run_paired_comparison: the two regimes must share data and budget");
  std::filesystem::create_directories(out_dir);

  PairedComparison cmp;
  cmp.seeds = seeds;
  cmp.bp_runs.resize(seeds.size());
  cmp.dbp_runs.resize(seeds.size());
  std::vector<std::string> errors(2 * seeds.size());

  std::vector<std::function<void()>> tasks;
  for (size_t i = 0; i < seeds.size(); ++i) {
    for (int mode = 0; mode < 2; ++mode) {
      tasks.push_back([&, i, mode] {
        TrainConfig cfg = mode == 0 ? bp_base : dbp_base;
        cfg.seed = seeds[i];
        cfg.mode = mode == 0 ? TrainMode::BP : TrainMode::DBP;
        cfg.output_dir = out_dir + "/" + (mode == 0 ? "bp" : "dbp") + "_seed" +
                         std::to_string(seeds[i]);
        try {
          (mode == 0 ? cmp.bp_runs[i] : cmp.dbp_runs[i]) = run_training(cfg);
        } catch (const std::exception& e) {
          errors[2 * i + static_cast<size_t>(mode)] =
              std::string(mode == 0 ? "bp" : "dbp") + " seed " + std::to_string(seeds[i]) +
              ": " + e.what();
        }
      });
    }
  }
  run_tasks(tasks, jobs);
  for (const auto& err : errors)
    if (!err.empty()) throw Error("run_paired_comparison: " + err);

  for (size_t i = 0; i < seeds.size(); ++i) {
    const auto& bp = cmp.bp_runs[i];
    const auto& dbp = cmp.dbp_runs[i];
    if (bp.records.empty() || dbp.records.empty())
      throw Error("run_paired_comparison: empty run for seed " + std::to_string(seeds[i]));
    const double threshold = bp.best_val;
    cmp.bp_best_val.push_back(threshold);
    cmp.bp_epochs_to_reach.push_back(first_epoch_reaching(bp.records, threshold));
    cmp.dbp_epochs_to_reach.push_back(first_epoch_reaching(dbp.records, threshold));
    cmp.bp_seconds_to_reach.push_back(seconds_at_epoch(bp.records, cmp.bp_epochs_to_reach.back()));
    cmp.dbp_seconds_to_reach.push_back(
        seconds_at_epoch(dbp.records, cmp.dbp_epochs_to_reach.back()));
    cmp.bp_final_val.push_back(bp.final_val);
    cmp.dbp_final_val.push_back(dbp.final_val);
  }
  cmp.p_value_final_val = welch_p_value(cmp.bp_final_val, cmp.dbp_final_val);
  return cmp;
}

void write_comparison_summary(const PairedComparison& cmp, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const size_t n = cmp.seeds.size();

  size_t epochs = 0;
  for (const auto& r : cmp.bp_runs) epochs = std::max(epochs, r.records.size());

  std::ofstream per_epoch(out_dir + "/summary_per_epoch.csv", std::ios::binary);
  per_epoch << "epoch";
  for (const char* mode : {"bp", "dbp"})
    for (const char* metric : {"train_loss", "val_loss", "mean_decorr_loss", "wall_seconds"})
      per_epoch << ',' << mode << '_' << metric << "_mean,"
                << mode << '_' << metric << "_std," << mode << '_' << metric << "_stderr";
  per_epoch << "\n";
  auto metric_value = [](const MetricsRecord& r, int m) {
    switch (m) {
      case 0: return r.train_loss;
      case 1: return r.val_loss;
      case 2: return r.mean_decorr_loss;
      default: return r.wall_seconds;
    }
  };
  for (size_t e = 0; e < epochs; ++e) {
    per_epoch << e;
    for (const auto* runs : {&cmp.bp_runs, &cmp.dbp_runs}) {
      for (int m = 0; m < 4; ++m) {
        std::vector<double> vals;
        for (const auto& run : *runs)
          if (e < run.records.size()) vals.push_back(metric_value(run.records[e], m));
        const double mu = vals.empty() ? 0.0 : mean_of(vals);
        const double sd = vals.empty() ? 0.0 : std::sqrt(sample_var(vals, mu));
        const double se = vals.empty() ? 0.0 : sd / std::sqrt(static_cast<double>(vals.size()));
        per_epoch << ',' << format_metric(mu) << ',' << format_metric(sd) << ','
                  << format_metric(se);
      }
    }
    per_epoch << "\n";
  }

  std::ofstream scalars(out_dir + "/summary.csv", std::ios::binary);
  scalars << "seed,bp_best_val,bp_final_val,dbp_final_val,bp_epochs_to_reach,"
             "dbp_epochs_to_reach,bp_seconds_to_reach,dbp_seconds_to_reach\n";
  for (size_t i = 0; i < n; ++i) {
    scalars << cmp.seeds[i] << ',' << format_metric(cmp.bp_best_val[i]) << ','
            << format_metric(cmp.bp_final_val[i]) << ',' << format_metric(cmp.dbp_final_val[i])
            << ',' << cmp.bp_epochs_to_reach[i] << ',' << cmp.dbp_epochs_to_reach[i] << ','
            << format_metric(cmp.bp_seconds_to_reach[i]) << ','
            << format_metric(cmp.dbp_seconds_to_reach[i]) << "\n";
  }
  scalars << "# welch_p_final_val = " << format_metric(cmp.p_value_final_val) << "\n";
}

std::vector<SweepResult> sweep(const TrainConfig& base, const std::vector<double>& lr_w_grid,
                               const std::vector<double>& lr_r_grid, int epoch_budget, int jobs,
                               const std::string& out_dir) {
  if (lr_w_grid.empty() || lr_r_grid.empty()) throw ConfigError("sweep: empty grid");
  if (epoch_budget < 1) throw ConfigError("sweep: epoch budget must be positive");
  std::filesystem::create_directories(out_dir);

  std::vector<SweepResult> results(lr_w_grid.size() * lr_r_grid.size());
  std::vector<std::function<void()>> tasks;
  for (size_t wi = 0; wi < lr_w_grid.size(); ++wi) {
    for (size_t ri = 0; ri < lr_r_grid.size(); ++ri) {
      const size_t cell = wi * lr_r_grid.size() + ri;
      tasks.push_back([&, wi, ri, cell] {
        SweepResult& res = results[cell];
        res.lr_W = lr_w_grid[wi];
        res.lr_R = lr_r_grid[ri];
        TrainConfig cfg = base;
        cfg.base_lr = res.lr_W;
        cfg.epochs = epoch_budget;
        cfg.warmup_epochs = std::min(cfg.warmup_epochs, epoch_budget);
        if (res.lr_R > 0.0) {
          cfg.mode = TrainMode::DBP;
          cfg.decorr.eta = res.lr_R;
        } else {
          cfg.mode = TrainMode::BP;
        }
        cfg.output_dir =
            out_dir + "/cell_w" + std::to_string(wi) + "_r" + std::to_string(ri);
        try {
          RunResult run = run_training(cfg);
          if (run.diverged)
            throw Error("diverged at epoch " + std::to_string(run.divergence_epoch) +
                        " site " + run.divergence_site);
          res.final_train = run.records.back().train_loss;
          res.final_val = run.records.back().val_loss;
          res.best_val = run.best_val;
          res.best_train = run.records.front().train_loss;
          for (const auto& r : run.records) res.best_train = std::min(res.best_train, r.train_loss);
        } catch (const std::exception& e) {
          res.failed = true;
          res.error = e.what();
        }
      });
    }
  }
  run_tasks(tasks, jobs);

  std::ofstream out(out_dir + "/sweep.csv", std::ios::binary);
  out << "lr_W,lr_R,best_train,best_val,final_train,final_val,status\n";
  for (const auto& r : results) {
    out << format_metric(r.lr_W) << ',' << format_metric(r.lr_R) << ','
        << format_metric(r.best_train) << ',' << format_metric(r.best_val) << ','
        << format_metric(r.final_train) << ',' << format_metric(r.final_val) << ','
        << (r.failed ? ("failed: " + r.error) : std::string("ok")) << "\n";
  }
  return results;
}

}  // namespace dbp
