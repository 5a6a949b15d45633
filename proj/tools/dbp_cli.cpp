// Experiment runner: train / compare / sweep / fuse / gen-data.
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "dbpmae/compare.hpp"

namespace {

dbp::TrainConfig build_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
  dbp::TrainConfig cfg;
  if (!config_path.empty()) cfg = dbp::load_config_file(config_path);
  for (const auto& assignment : overrides) dbp::apply_config_override(cfg, assignment);
  cfg.validate();
  return cfg;
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  size_t start = 0;
  while (start <= csv.size()) {
    size_t comma = csv.find(',', start);
    if (comma == std::string::npos) comma = csv.size();
    const std::string item = csv.substr(start, comma - start);
    if (!item.empty()) out.push_back(std::stod(item));
    start = comma + 1;
  }
  return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<uint64_t> out;
  size_t start = 0;
  while (start <= csv.size()) {
    size_t comma = csv.find(',', start);
    if (comma == std::string::npos) comma = csv.size();
    const std::string item = csv.substr(start, comma - start);
    if (!item.empty()) out.push_back(std::stoull(item));
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decorrelated-backpropagation MAE pre-training harness"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::vector<std::string> overrides;
  std::string seeds_csv = "1,2,3,4,5";
  std::string lr_w_csv = "0.0005,0.001,0.002";
  std::string lr_r_csv = "0,0.0005,0.001";
  int jobs = 2;
  int sweep_epochs = 15;
  bool print_config = false;

  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key = value lines)");
    cmd->add_option("--set", overrides, "override, e.g. --set train.epochs=10")
        ->take_all();
    cmd->add_option("--out", out_override, "override train.output_dir");
  };

  auto* train = app.add_subcommand("train", "run one training run");
  add_config_opts(train);
  train->add_flag("--print-config", print_config, "print the resolved config and exit");

  double bp_lr = 0.0, dbp_lr = 0.0;
  auto* compare = app.add_subcommand("compare", "paired BP vs DBP runs over seeds");
  add_config_opts(compare);
  compare->add_option("--seeds", seeds_csv, "comma-separated seed list");
  compare->add_option("--jobs", jobs, "parallel runs");
  compare->add_option("--bp-lr", bp_lr, "weight lr for the BP arm (default: optim.lr)");
  compare->add_option("--dbp-lr", dbp_lr, "weight lr for the DBP arm (default: optim.lr)");

  auto* sweep_cmd = app.add_subcommand("sweep", "grid search over lr_W x lr_R");
  add_config_opts(sweep_cmd);
  sweep_cmd->add_option("--lr-w", lr_w_csv, "comma-separated weight learning rates");
  sweep_cmd->add_option("--lr-r", lr_r_csv, "comma-separated R learning rates (0 = BP)");
  sweep_cmd->add_option("--epochs", sweep_epochs, "per-cell epoch budget");
  sweep_cmd->add_option("--jobs", jobs, "parallel cells");

  std::string fuse_in, fuse_out;
  auto* fuse = app.add_subcommand("fuse", "fold R matrices into the weights of a checkpoint");
  fuse->add_option("--input", fuse_in, "checkpoint to read")->required();
  fuse->add_option("--output", fuse_out, "fused checkpoint to write")->required();

  std::string gen_out;
  dbp::SyntheticSpec gen_spec{4096, 3, 32, 4, 0};
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic correlated dataset");
  gen->add_option("--out", gen_out, "output DBPTNSR1 file")->required();
  gen->add_option("--count", gen_spec.count, "number of images");
  gen->add_option("--channels", gen_spec.channels, "channels per image");
  gen->add_option("--size", gen_spec.size, "image side length");
  gen->add_option("--correlation-length", gen_spec.correlation_length,
                  "Gaussian blur radius (0 = white noise)");
  gen->add_option("--seed", gen_spec.seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      dbp::TrainConfig cfg = build_config(config_path, overrides);
      if (!out_override.empty()) cfg.output_dir = out_override;
      if (print_config) {
        std::cout << dbp::serialize_config(cfg);
        return 0;
      }
      dbp::RunResult res = dbp::run_training(cfg);
      if (res.diverged) {
        std::cerr << "diverged at epoch " << res.divergence_epoch << " site "
                  << res.divergence_site << "\n";
        return 3;
      }
      std::cout << "metrics: " << res.metrics_path << "\n";
      if (!res.records.empty())
        std::cout << "best val " << res.best_val << " at epoch " << res.best_epoch << "\n";
    } else if (*compare) {
      dbp::TrainConfig cfg = build_config(config_path, overrides);
      const std::string out_dir = out_override.empty() ? cfg.output_dir : out_override;
      dbp::TrainConfig bp_cfg = cfg, dbp_cfg = cfg;
      if (bp_lr > 0.0) bp_cfg.base_lr = bp_lr;
      if (dbp_lr > 0.0) dbp_cfg.base_lr = dbp_lr;
      auto cmp = dbp::run_paired_comparison(bp_cfg, dbp_cfg, parse_seed_list(seeds_csv), jobs,
                                            out_dir);
      dbp::write_comparison_summary(cmp, out_dir);
      std::cout << "welch p (final val): " << cmp.p_value_final_val << "\n";
      for (size_t i = 0; i < cmp.seeds.size(); ++i)
        std::cout << "seed " << cmp.seeds[i] << ": bp reaches its best at epoch "
                  << cmp.bp_epochs_to_reach[i] << ", dbp reaches it at epoch "
                  << cmp.dbp_epochs_to_reach[i] << "\n";
      std::cout << "summary: " << out_dir << "/summary.csv\n";
    } else if (*sweep_cmd) {
      dbp::TrainConfig cfg = build_config(config_path, overrides);
      const std::string out_dir = out_override.empty() ? cfg.output_dir : out_override;
      auto results = dbp::sweep(cfg, parse_double_list(lr_w_csv), parse_double_list(lr_r_csv),
                                sweep_epochs, jobs, out_dir);
      for (const auto& r : results)
        std::printf("lr_W=%-10g lr_R=%-10g best_val=%-12g final_val=%-12g %s\n", r.lr_W, r.lr_R,
                    r.best_val, r.final_val, r.failed ? r.error.c_str() : "ok");
      std::cout << "grid: " << out_dir << "/sweep.csv\n";
    } else if (*fuse) {
      dbp::LoadedCheckpoint ck = dbp::load_checkpoint(fuse_in);
      dbp::save_checkpoint(fuse_out, *ck.model, ck.config, ck.epoch, true, nullptr,
                           ck.rng_state);
      std::cout << "fused checkpoint written to " << fuse_out << "\n";
    } else if (*gen) {
      dbp::save_dataset(gen_out, dbp::generate_synthetic(gen_spec));
      std::cout << "dataset written to " << gen_out << "\n";
    }
  } catch (const dbp::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const dbp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
