#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbpmae/common.hpp"
#include "dbpmae/rng.hpp"

namespace dbp {

// Contiguous float32 image stack, count x channels x height x width.
struct Dataset {
  uint32_t count = 0;
  uint32_t channels = 0;
  uint32_t height = 0;
  uint32_t width = 0;
  std::vector<float> values;

  size_t image_elems() const {
    return static_cast<size_t>(channels) * height * width;
  }
  const float* image(size_t i) const { return values.data() + i * image_elems(); }
  float* image(size_t i) { return values.data() + i * image_elems(); }
};

struct SyntheticSpec {
  uint32_t count = 0;
  uint32_t channels = 3;
  uint32_t size = 32;
  int correlation_length = 4;  // Gaussian blur radius; 0 gives white noise
  uint64_t seed = 0;
};

// White Gaussian noise blurred per channel with an isotropic Gaussian kernel,
// then standardized per image to zero mean / unit variance.
Dataset generate_synthetic(const SyntheticSpec& spec);

// DBPTNSR1 container: 8-byte magic, count/channels/height/width as u32,
// one dtype byte (0 = float32), then the payload. Everything little-endian.
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

enum class Interpolation { Bilinear, Bicubic };

struct AugmentConfig {
  bool random_crop = true;
  double min_scale = 0.2;  // crop area as a fraction of the source area
  double max_scale = 1.0;
  bool hflip = true;
  Interpolation interpolation = Interpolation::Bilinear;
};

// Per-channel statistics of a dataset slice, used for normalization.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

NormStats compute_norm_stats(const Dataset& data, size_t begin, size_t end);

// Mirror an image horizontally, in place. Applying it twice restores the input.
void hflip_image(double* image, int channels, int height, int width);

// Resize a square crop back to the source resolution.
void resize_image(const double* src, int channels, int src_h, int src_w, double* dst, int dst_h,
                  int dst_w, Interpolation interp);

// Random resized crop + horizontal flip + per-channel normalization. src is
// the raw float image; dst receives channels*height*width doubles.
void augment_image(const float* src, int channels, int height, int width,
                   const AugmentConfig& cfg, const NormStats& stats, Rng& rng, double* dst);

// Normalization only; the deterministic path used for validation batches.
void normalize_image(const float* src, int channels, int height, int width,
                     const NormStats& stats, double* dst);

}  // namespace dbp
