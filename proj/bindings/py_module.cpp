// Python bindings for the core operations: decorrelation math, masking,
// patch handling, the LR schedule, synthetic data, and whole training runs.
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dbpmae/compare.hpp"

namespace py = pybind11;
using namespace dbp;

namespace {

DecorrelationMatrix make_r(const Matrix& values, const std::string& site_id) {
  if (values.rows() != values.cols())
    throw ShapeError("decorrelation matrix must be square");
  DecorrelationMatrix r(static_cast<int>(values.rows()), site_id);
  r.values = values;
  return r;
}

py::dict record_to_dict(const MetricsRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["train_loss"] = r.train_loss;
  d["val_loss"] = r.val_loss;
  d["mean_decorr_loss"] = r.mean_decorr_loss;
  d["wall_seconds"] = r.wall_seconds;
  d["lr_W"] = r.lr_W;
  d["lr_R"] = r.lr_R;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Decorrelated backpropagation for masked-autoencoder pre-training";

  py::register_exception<Error>(m, "DbpError");

  m.def(
      "decorrelate",
      [](const Matrix& r, const Matrix& x, const std::string& site_id) {
        return decorrelate(make_r(r, site_id), x);
      },
      py::arg("r"), py::arg("x"), py::arg("site_id") = "site",
      "Apply z = R x to every row of the batch.");

  m.def(
      "off_diagonal_covariance",
      [](const Matrix& z) {
        auto est = off_diagonal_covariance(z);
        return py::make_tuple(est.off_diag, est.sample_count);
      },
      py::arg("z"), "Uncentered covariance with a zeroed diagonal; returns (C, sample_count).");

  m.def(
      "update_decorrelation",
      [](const Matrix& r, const Matrix& c, double eta, const std::string& site_id) {
        DecorrelationMatrix rm = make_r(r, site_id);
        CorrelationEstimate est{c, 1};
        update_decorrelation(rm, est, eta);
        return rm.values;
      },
      py::arg("r"), py::arg("c"), py::arg("eta"), py::arg("site_id") = "site",
      "One iteration of R <- R - eta C R.");

  m.def(
      "decorrelation_loss",
      [](const Matrix& c) { return decorrelation_loss(CorrelationEstimate{c, 1}); },
      py::arg("c"), "Mean squared off-diagonal entry of C.");

  m.def(
      "subsample_rows",
      [](const Matrix& z, double fraction, uint64_t seed) {
        Rng rng(seed);
        return subsample_rows(z, fraction, rng);
      },
      py::arg("z"), py::arg("fraction"), py::arg("seed") = 0,
      "max(1, ceil(fraction*N)) rows, uniform without replacement, seeded.");

  m.def(
      "fuse_weights",
      [](const Matrix& w, const Matrix& r, const std::string& site_id) {
        return fuse_weights(w, make_r(r, site_id));
      },
      py::arg("w"), py::arg("r"), py::arg("site_id") = "site", "Fused weight W R.");

  m.def(
      "make_mask",
      [](int num_patches, double mask_ratio, uint64_t seed) {
        Rng rng(seed);
        MaskPlan plan = make_mask(num_patches, mask_ratio, rng);
        return py::make_tuple(plan.visible, plan.masked);
      },
      py::arg("num_patches"), py::arg("mask_ratio"), py::arg("seed") = 0,
      "Returns (visible_indices, masked_indices), both sorted.");

  m.def(
      "patchify",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> image, int patch_size) {
        if (image.ndim() != 3) throw ShapeError("patchify expects a C x H x W array");
        return patchify(image.data(), static_cast<int>(image.shape(0)),
                        static_cast<int>(image.shape(1)), static_cast<int>(image.shape(2)),
                        patch_size);
      },
      py::arg("image"), py::arg("patch_size"),
      "Split C x H x W into P x (patch^2 * C) raster-ordered patches.");

  m.def(
      "unpatchify",
      [](const Matrix& patches, int channels, int height, int width, int patch_size) {
        py::array_t<double> out({channels, height, width});
        unpatchify(patches, channels, height, width, patch_size, out.mutable_data());
        return out;
      },
      py::arg("patches"), py::arg("channels"), py::arg("height"), py::arg("width"),
      py::arg("patch_size"));

  m.def(
      "lr_at",
      [](double base_lr, int warmup_epochs, int total_epochs, double min_lr, double epoch) {
        return lr_at(ScheduleConfig{base_lr, warmup_epochs, total_epochs, min_lr}, epoch);
      },
      py::arg("base_lr"), py::arg("warmup_epochs"), py::arg("total_epochs"),
      py::arg("min_lr"), py::arg("epoch"), "Cosine schedule with linear warmup.");

  m.def(
      "generate_synthetic",
      [](uint32_t count, uint32_t channels, uint32_t size, int correlation_length,
         uint64_t seed) {
        Dataset data = generate_synthetic({count, channels, size, correlation_length, seed});
        py::array_t<float> out({static_cast<int>(count), static_cast<int>(channels),
                                static_cast<int>(size), static_cast<int>(size)});
        std::copy(data.values.begin(), data.values.end(), out.mutable_data());
        return out;
      },
      py::arg("count"), py::arg("channels") = 3, py::arg("size") = 32,
      py::arg("correlation_length") = 4, py::arg("seed") = 0,
      "Blurred, per-image standardized Gaussian noise, as a count x C x H x W array.");

  m.def("save_dataset", [](const std::string& path, py::array_t<float, py::array::c_style | py::array::forcecast> images) {
    if (images.ndim() != 4) throw ShapeError("save_dataset expects N x C x H x W");
    Dataset data;
    data.count = static_cast<uint32_t>(images.shape(0));
    data.channels = static_cast<uint32_t>(images.shape(1));
    data.height = static_cast<uint32_t>(images.shape(2));
    data.width = static_cast<uint32_t>(images.shape(3));
    data.values.assign(images.data(), images.data() + images.size());
    save_dataset(path, data);
  });

  m.def("load_dataset", [](const std::string& path) {
    Dataset data = load_dataset(path);
    py::array_t<float> out({static_cast<int>(data.count), static_cast<int>(data.channels),
                            static_cast<int>(data.height), static_cast<int>(data.width)});
    std::copy(data.values.begin(), data.values.end(), out.mutable_data());
    return out;
  });

  m.def(
      "welch_p_value",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        return welch_p_value(a, b);
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "run_training",
      [](const std::string& config_text) {
        TrainConfig cfg = parse_config_text(config_text);
        cfg.validate();
        RunResult res;
        {
          py::gil_scoped_release release;
          res = run_training(cfg);
        }
        py::dict out;
        py::list records;
        for (const auto& r : res.records) records.append(record_to_dict(r));
        out["records"] = records;
        out["best_val"] = res.best_val;
        out["best_epoch"] = res.best_epoch;
        out["final_val"] = res.final_val;
        out["metrics_path"] = res.metrics_path;
        out["best_checkpoint_path"] = res.best_checkpoint_path;
        out["last_checkpoint_path"] = res.last_checkpoint_path;
        out["diverged"] = res.diverged;
        return out;
      },
      py::arg("config_text"),
      "Run one training run from a key=value config string; returns the metrics.");

  m.def("default_config", [] { return serialize_config(TrainConfig{}); },
        "Canonical config text with every key at its default.");
}
