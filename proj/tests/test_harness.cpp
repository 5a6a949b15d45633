#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "dbpmae/compare.hpp"
#include "oracles.hpp"

using namespace dbp;

namespace {

std::string scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "dbpmae_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small-but-real configuration that trains in well under a second per epoch.
TrainConfig tiny_config(const std::string& out_dir) {
  TrainConfig cfg;
  cfg.mae.image_size = 16;
  cfg.mae.embed_dim = 16;
  cfg.mae.heads = 4;
  cfg.mae.depth = 1;
  cfg.mae.decoder_embed_dim = 8;
  cfg.mae.decoder_heads = 2;
  cfg.mae.decoder_depth = 1;
  cfg.synthetic = {64, 3, 16, 2, 5};
  cfg.batch_size = 16;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.seed = 3;
  cfg.deterministic_timing = true;
  cfg.output_dir = out_dir;
  return cfg;
}

double f32_cast(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

TEST_CASE("config: defaults, round trip, overrides") {
  TrainConfig def;
  std::string text = serialize_config(def);
  TrainConfig back = parse_config_text(text);
  CHECK(serialize_config(back) == text);

  TrainConfig cfg = parse_config_text("train.mode = dbp\ndecorr.eta = 1e-3\n# comment\n");
  CHECK(cfg.mode == TrainMode::DBP);
  CHECK(cfg.decorr.eta == 1e-3);

  apply_config_override(cfg, "decorr.stop_epoch=40");
  REQUIRE(cfg.decorr.stop_epoch.has_value());
  CHECK(*cfg.decorr.stop_epoch == 40);
  apply_config_override(cfg, "decorr.stop_epoch=none");
  CHECK_FALSE(cfg.decorr.stop_epoch.has_value());
}

TEST_CASE("config: unknown keys and malformed values fail fast") {
  CHECK_THROWS_AS(parse_config_text("nonsense.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("train.epochs = soon\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("decorr.scope = everything\n"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("mae.depth = 1\nbad.key = 2\n"),
                       doctest::Contains("line 2"), ConfigError);
}

TEST_CASE("config: validation catches inconsistent settings") {
  TrainConfig cfg;
  cfg.mae.image_size = 30;  // not divisible by patch 4
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.mode = TrainMode::DBP;
  cfg.decorr.eta = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.use_synthetic = false;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // file source without a path
}

TEST_CASE("export_metrics: header-only file for empty records") {
  const std::string dir = scratch_dir("metrics_empty");
  export_metrics({}, dir + "/m.csv");
  CHECK(read_bytes(dir + "/m.csv") ==
        "epoch,train_loss,val_loss,mean_decorr_loss,wall_seconds,lr_W,lr_R\n");
}

TEST_CASE("export_metrics: three records give four lines and parse back") {
  const std::string dir = scratch_dir("metrics_three");
  std::vector<MetricsRecord> records;
  Rng rng(1);
  for (int e = 0; e < 3; ++e) {
    MetricsRecord r;
    r.epoch = e;
    r.train_loss = rng.uniform();
    r.val_loss = rng.uniform();
    r.mean_decorr_loss = rng.uniform() * 1e-3;
    r.wall_seconds = e + rng.uniform();
    r.lr_W = 5e-4;
    r.lr_R = 0.0;
    records.push_back(r);
  }
  const std::string path = dir + "/m.csv";
  export_metrics(records, path);

  std::string bytes = read_bytes(path);
  CHECK(std::count(bytes.begin(), bytes.end(), '\n') == 4);

  auto back = parse_metrics_csv(path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].epoch == records[i].epoch);
    CHECK(back[i].train_loss == doctest::Approx(records[i].train_loss).epsilon(1e-8));
    CHECK(back[i].val_loss == doctest::Approx(records[i].val_loss).epsilon(1e-8));
    CHECK(back[i].wall_seconds == doctest::Approx(records[i].wall_seconds).epsilon(1e-8));
  }
}

TEST_CASE("welch_p_value: degenerate and frozen reference cases") {
  CHECK(welch_p_value({0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}) == 1.0);
  CHECK(welch_p_value({0.3, 0.3}, {0.4, 0.4}) == 0.0);
  // equal means, unequal variances
  CHECK(welch_p_value({1.0, 2.0, 3.0, 4.0}, {1.5, 2.5, 3.5}) ==
        doctest::Approx(1.0).epsilon(1e-12));
  // frozen scipy.stats.ttest_ind(..., equal_var=False) value
  CHECK(welch_p_value({0.3200, 0.3100, 0.3300, 0.3000, 0.3150},
                      {0.3000, 0.2950, 0.3100, 0.2900, 0.3050}) ==
        doctest::Approx(0.0432058600696225).epsilon(1e-9));
}

TEST_CASE("checkpoint: unfused round trip is exact at file level and f32 at value level") {
  const std::string dir = scratch_dir("ckpt_roundtrip");
  TrainConfig cfg = tiny_config(dir);
  cfg.mode = TrainMode::DBP;
  cfg.decorr.eta = 1e-3;
  MaeModel model(cfg.mae, 17);
  model.attach_decorrelation(cfg.decorr.scope, false);
  Rng rng(2);
  for (auto& site : model.decorr_sites(cfg.decorr.scope, false))
    site.layer->decorr->values +=
        0.01 * oracle::random_matrix(site.layer->in_dim(), site.layer->in_dim(), rng);

  const std::string p1 = dir + "/a.ckpt";
  save_checkpoint(p1, model, cfg, 4, false, nullptr, {cfg.seed, 5});
  LoadedCheckpoint ck = load_checkpoint(p1);
  CHECK(ck.epoch == 4);
  CHECK_FALSE(ck.fused);
  CHECK(ck.rng_state[0] == cfg.seed);
  CHECK(ck.rng_state[1] == 5);

  auto orig = model.parameters();
  auto loaded = ck.model->parameters();
  REQUIRE(orig.size() == loaded.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i].name == loaded[i].name);
    for (long k = 0; k < orig[i].size; ++k)
      CHECK(loaded[i].value[k] == f32_cast(orig[i].value[k]));
  }
  for (auto& site : ck.model->decorr_sites(cfg.decorr.scope, false))
    CHECK(site.layer->decorr.has_value());

  const std::string p2 = dir + "/b.ckpt";
  save_checkpoint(p2, *ck.model, ck.config, ck.epoch, false, nullptr, ck.rng_state);
  CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("checkpoint: identity fusion stores the same weight bytes") {
  const std::string dir = scratch_dir("ckpt_identity_fuse");
  TrainConfig cfg = tiny_config(dir);
  cfg.mode = TrainMode::DBP;
  MaeModel model(cfg.mae, 18);
  model.attach_decorrelation(cfg.decorr.scope, false);  // R = I everywhere

  save_checkpoint(dir + "/unfused.ckpt", model, cfg, 0, false);
  save_checkpoint(dir + "/fused.ckpt", model, cfg, 0, true);
  LoadedCheckpoint a = load_checkpoint(dir + "/unfused.ckpt");
  LoadedCheckpoint b = load_checkpoint(dir + "/fused.ckpt");
  CHECK_FALSE(b.model->any_decorrelation());
  auto pa = a.model->parameters(), pb = b.model->parameters();
  for (size_t i = 0; i < pa.size(); ++i)
    for (long k = 0; k < pa[i].size; ++k) CHECK(pa[i].value[k] == pb[i].value[k]);
}

TEST_CASE("checkpoint: fused model forward matches within float tolerance") {
  const std::string dir = scratch_dir("ckpt_fuse_fwd");
  TrainConfig cfg = tiny_config(dir);
  cfg.mode = TrainMode::DBP;
  MaeModel model(cfg.mae, 19);
  model.attach_decorrelation(cfg.decorr.scope, false);
  Rng rng(3);
  for (auto& site : model.decorr_sites(cfg.decorr.scope, false))
    site.layer->decorr->values +=
        0.02 * oracle::random_matrix(site.layer->in_dim(), site.layer->in_dim(), rng);

  save_checkpoint(dir + "/fused.ckpt", model, cfg, 0, true);
  LoadedCheckpoint fused = load_checkpoint(dir + "/fused.ckpt");

  Matrix patches = oracle::random_matrix(2 * cfg.mae.patches(), cfg.mae.patch_dim(), rng);
  Matrix a = model.forward(patches, 2, 9);
  Matrix b = fused.model->forward(patches, 2, 9);
  CHECK(oracle::rel_diff_inf(a, b) < 1e-5);
}

TEST_CASE("checkpoint: optimizer state survives the round trip") {
  const std::string dir = scratch_dir("ckpt_opt");
  TrainConfig cfg = tiny_config(dir);
  MaeModel model(cfg.mae, 20);
  auto params = model.parameters();
  AdamW opt(params, cfg.adamw);
  Rng rng(4);
  for (auto& p : params)
    for (long k = 0; k < p.size; ++k) p.grad[k] = 0.1 * rng.normal();
  opt.step(params, 1e-3);
  save_checkpoint(dir + "/o.ckpt", model, cfg, 0, false, &opt);
  LoadedCheckpoint ck = load_checkpoint(dir + "/o.ckpt");
  REQUIRE(ck.has_optimizer);
  CHECK(ck.opt_step == 1);
  REQUIRE(ck.opt_m.size() == params.size());
  const auto& m = opt.first_moments();
  for (size_t i = 0; i < params.size(); ++i)
    for (long k = 0; k < params[i].size; ++k)
      CHECK(ck.opt_m[i](k) == f32_cast(m[i](k)));
}

TEST_CASE("checkpoint: wrong magic and wrong version are distinct errors") {
  const std::string dir = scratch_dir("ckpt_bad");
  TrainConfig cfg = tiny_config(dir);
  MaeModel model(cfg.mae, 21);
  const std::string path = dir + "/c.ckpt";
  save_checkpoint(path, model, cfg, 0, false);
  std::string bytes = read_bytes(path);

  std::string corrupt = bytes;
  corrupt[0] = 'Z';
  std::ofstream(dir + "/bad1.ckpt", std::ios::binary) << corrupt;
  CHECK_THROWS_AS(load_checkpoint(dir + "/bad1.ckpt"), BadMagicError);

  corrupt = bytes;
  corrupt[8] = 9;
  std::ofstream(dir + "/bad2.ckpt", std::ios::binary) << corrupt;
  CHECK_THROWS_AS(load_checkpoint(dir + "/bad2.ckpt"), IoError);
}

TEST_CASE("run_training: zero epochs emit an initial checkpoint and an empty log") {
  const std::string dir = scratch_dir("run_zero");
  TrainConfig cfg = tiny_config(dir);
  cfg.epochs = 0;
  RunResult res = run_training(cfg);
  CHECK(res.records.empty());
  CHECK(read_bytes(res.metrics_path) ==
        "epoch,train_loss,val_loss,mean_decorr_loss,wall_seconds,lr_W,lr_R\n");
  LoadedCheckpoint ck = load_checkpoint(res.last_checkpoint_path);
  CHECK(ck.epoch == -1);
}

TEST_CASE("run_training: identical config and seed give byte-identical metrics") {
  const std::string d1 = scratch_dir("run_det_a");
  const std::string d2 = scratch_dir("run_det_b");
  TrainConfig a = tiny_config(d1);
  TrainConfig b = tiny_config(d2);
  RunResult ra = run_training(a);
  RunResult rb = run_training(b);
  CHECK(read_bytes(ra.metrics_path) == read_bytes(rb.metrics_path));
  CHECK(read_bytes(ra.last_checkpoint_path).substr(0, 9) ==
        read_bytes(rb.last_checkpoint_path).substr(0, 9));
}

TEST_CASE("run_training: BP keeps R out of the checkpoint but still reports the metric") {
  const std::string dir = scratch_dir("run_bp");
  TrainConfig cfg = tiny_config(dir);
  cfg.mode = TrainMode::BP;
  RunResult res = run_training(cfg);
  REQUIRE_FALSE(res.records.empty());
  for (const auto& r : res.records) {
    CHECK(r.mean_decorr_loss > 0.0);  // raw input correlations, measured not optimized
    CHECK(r.lr_R == 0.0);
  }
  LoadedCheckpoint ck = load_checkpoint(res.last_checkpoint_path);
  CHECK_FALSE(ck.model->any_decorrelation());
}

TEST_CASE("run_training: DBP with eta=0 reproduces the BP run bit for bit") {
  const std::string d1 = scratch_dir("run_eta0_bp");
  const std::string d2 = scratch_dir("run_eta0_dbp");
  TrainConfig bp = tiny_config(d1);
  bp.mode = TrainMode::BP;
  TrainConfig dbp = tiny_config(d2);
  dbp.mode = TrainMode::DBP;
  dbp.decorr.eta = 0.0;
  RunResult rb = run_training(bp);
  RunResult rd = run_training(dbp);
  REQUIRE(rb.records.size() == rd.records.size());
  for (size_t i = 0; i < rb.records.size(); ++i) {
    CHECK(rb.records[i].train_loss == rd.records[i].train_loss);
    CHECK(rb.records[i].val_loss == rd.records[i].val_loss);
    CHECK(rb.records[i].mean_decorr_loss == rd.records[i].mean_decorr_loss);
  }
}

TEST_CASE("run_training: stop_epoch freezes R exactly") {
  const std::string dir = scratch_dir("run_stop");
  TrainConfig cfg = tiny_config(dir);
  cfg.mode = TrainMode::DBP;
  cfg.decorr.eta = 1e-3;
  cfg.epochs = 6;
  cfg.decorr.stop_epoch = 2;

  // Snapshot every R right when the stop epoch is reached, then again later.
  std::vector<Matrix> at_stop;
  TrainerHooks hooks;
  hooks.after_validation = [&](int epoch, const MaeModel& model) {
    if (epoch == 1) {  // updates ran in epochs 0 and 1; frozen from epoch 2 on
      MaeModel copy = model;
      for (auto& site : copy.decorr_sites(DecorrScope::EncoderOnly, false))
        at_stop.push_back(site.layer->decorr->values);
    }
  };
  RunResult res = run_training(cfg, &hooks);
  REQUIRE_FALSE(at_stop.empty());

  LoadedCheckpoint final_ck = load_checkpoint(res.last_checkpoint_path);
  auto sites = final_ck.model->decorr_sites(DecorrScope::EncoderOnly, false);
  REQUIRE(sites.size() == at_stop.size());
  bool any_moved = false;
  for (size_t i = 0; i < sites.size(); ++i) {
    REQUIRE(sites[i].layer->decorr.has_value());
    // The checkpoint stores float32, so compare against the f32 cast.
    const Matrix& frozen = at_stop[i];
    const Matrix& loaded = sites[i].layer->decorr->values;
    for (Index r = 0; r < frozen.rows(); ++r)
      for (Index c = 0; c < frozen.cols(); ++c)
        CHECK(loaded(r, c) == f32_cast(frozen(r, c)));
    any_moved = any_moved || !oracle::bits_equal(frozen, Matrix::Identity(frozen.rows(),
                                                                          frozen.cols()));
  }
  CHECK(any_moved);  // the first two epochs really did update R
}

TEST_CASE("run_training: best checkpoint tracks the lowest validation loss") {
  const std::string dir = scratch_dir("run_best");
  TrainConfig cfg = tiny_config(dir);
  cfg.epochs = 4;
  RunResult res = run_training(cfg);
  REQUIRE(res.best_epoch >= 0);
  double best = res.records[0].val_loss;
  int best_epoch = 0;
  for (const auto& r : res.records)
    if (r.val_loss < best) {
      best = r.val_loss;
      best_epoch = r.epoch;
    }
  CHECK(res.best_epoch == best_epoch);
  CHECK(res.best_val == best);
  LoadedCheckpoint ck = load_checkpoint(res.best_checkpoint_path);
  CHECK(ck.epoch == best_epoch);
}

TEST_CASE("wall_seconds excludes validation time") {
  const std::string d1 = scratch_dir("wall_a");
  const std::string d2 = scratch_dir("wall_b");
  TrainConfig cfg = tiny_config(d1);
  cfg.deterministic_timing = false;
  cfg.synthetic.count = 512;
  cfg.batch_size = 32;
  cfg.epochs = 3;
  cfg.mae.embed_dim = 32;
  cfg.mae.depth = 2;

  RunResult plain = run_training(cfg);
  cfg.output_dir = d2;
  TrainerHooks hooks;
  hooks.after_validation = [](int, const MaeModel&) {
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
  };
  RunResult slowed = run_training(cfg, &hooks);

  const double a = plain.records.back().wall_seconds;
  const double b = slowed.records.back().wall_seconds;
  INFO("plain ", a, " slowed ", b);
  CHECK(std::abs(a - b) <= 0.05 * std::max(a, b) + 0.05);
  for (size_t i = 1; i < slowed.records.size(); ++i)
    CHECK(slowed.records[i].wall_seconds >= slowed.records[i - 1].wall_seconds);
}

TEST_CASE("paired comparison: structure, artifacts and degenerate p-value") {
  const std::string dir = scratch_dir("cmp");
  TrainConfig base = tiny_config(dir + "/unused");
  base.decorr.eta = 0.0;  // DBP arm degenerates to BP, all deltas vanish
  PairedComparison cmp = run_paired_comparison(base, {11, 22}, 2, dir);
  REQUIRE(cmp.bp_runs.size() == 2);
  REQUIRE(cmp.dbp_runs.size() == 2);
  CHECK(cmp.p_value_final_val == doctest::Approx(1.0).epsilon(1e-12));
  for (size_t i = 0; i < 2; ++i) {
    CHECK(cmp.bp_final_val[i] == cmp.dbp_final_val[i]);
    CHECK(cmp.bp_epochs_to_reach[i] == cmp.dbp_epochs_to_reach[i]);
  }
  write_comparison_summary(cmp, dir);
  CHECK(std::filesystem::exists(dir + "/summary.csv"));
  CHECK(std::filesystem::exists(dir + "/summary_per_epoch.csv"));
  CHECK(std::filesystem::exists(dir + "/bp_seed11/metrics.csv"));
  CHECK(std::filesystem::exists(dir + "/dbp_seed22/metrics.csv"));
  CHECK(read_bytes(dir + "/bp_seed11/metrics.csv") != read_bytes(dir + "/bp_seed22/metrics.csv"));
}

TEST_CASE("sweep: zero lr_R cell equals a plain BP run, grids enumerate fully") {
  const std::string dir = scratch_dir("sweep");
  TrainConfig base = tiny_config(dir + "/unused");
  base.epochs = 2;

  auto results = sweep(base, {5e-4, 1e-3}, {0.0, 1e-3}, 2, 2, dir);
  REQUIRE(results.size() == 4);
  for (const auto& r : results) CHECK_FALSE(r.failed);

  TrainConfig bp = base;
  bp.mode = TrainMode::BP;
  bp.base_lr = 5e-4;
  bp.epochs = 2;
  bp.output_dir = dir + "/direct_bp";
  RunResult direct = run_training(bp);
  const SweepResult* cell = nullptr;
  for (const auto& r : results)
    if (r.lr_W == 5e-4 && r.lr_R == 0.0) cell = &r;
  REQUIRE(cell != nullptr);
  CHECK(cell->final_val == direct.records.back().val_loss);
  CHECK(std::filesystem::exists(dir + "/sweep.csv"));
}

TEST_CASE("sweep: a diverging cell is recorded, the sweep continues") {
  const std::string dir = scratch_dir("sweep_diverge");
  TrainConfig base = tiny_config(dir + "/unused");
  base.epochs = 2;
  // An absurd decorrelation rate blows up R within an epoch.
  auto results = sweep(base, {5e-4}, {0.0, 1e6}, 2, 1, dir);
  REQUIRE(results.size() == 2);
  CHECK_FALSE(results[0].failed);
  CHECK(results[1].failed);
  CHECK_FALSE(results[1].error.empty());
}
