#include "dbpmae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dbp {

namespace {

constexpr char kMagic[8] = {'D', 'B', 'P', 'T', 'N', 'S', 'R', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

// Separable Gaussian blur with clamped borders. sigma = radius / 2, kernel
// support [-radius, radius].
void gaussian_blur_plane(std::vector<double>& plane, int h, int w, int radius) {
  if (radius <= 0) return;
  const double sigma = radius / 2.0;
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    sum += kernel[static_cast<size_t>(k + radius)];
  }
  for (auto& v : kernel) v /= sum;

  std::vector<double> tmp(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        int xx = std::clamp(x + k, 0, w - 1);
        acc += kernel[static_cast<size_t>(k + radius)] * plane[static_cast<size_t>(y * w + xx)];
      }
      tmp[static_cast<size_t>(y * w + x)] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        int yy = std::clamp(y + k, 0, h - 1);
        acc += kernel[static_cast<size_t>(k + radius)] * tmp[static_cast<size_t>(yy * w + x)];
      }
      plane[static_cast<size_t>(y * w + x)] = acc;
    }
  }
}

double cubic_kernel(double t) {
  // Catmull-Rom (a = -0.5).
  const double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.count == 0 || spec.channels == 0 || spec.size == 0)
    throw ConfigError("generate_synthetic: count, channels and size must be positive");
  if (spec.correlation_length < 0)
    throw ConfigError("generate_synthetic: correlation_length must be non-negative");
  Dataset data;
  data.count = spec.count;
  data.channels = spec.channels;
  data.height = spec.size;
  data.width = spec.size;
  data.values.resize(static_cast<size_t>(spec.count) * data.image_elems());

  const int h = static_cast<int>(spec.size), w = static_cast<int>(spec.size);
  const size_t plane = static_cast<size_t>(h) * w;
  Rng rng(mix_seed(spec.seed, 0x73796e7468ULL));
  std::vector<double> img(data.image_elems());
  for (uint32_t i = 0; i < spec.count; ++i) {
    for (auto& v : img) v = rng.normal();
    for (uint32_t c = 0; c < spec.channels; ++c) {
      std::vector<double> ch(img.begin() + c * plane, img.begin() + (c + 1) * plane);
      gaussian_blur_plane(ch, h, w, spec.correlation_length);
      std::copy(ch.begin(), ch.end(), img.begin() + c * plane);
    }
    double mean = 0.0;
    for (double v : img) mean += v;
    mean /= static_cast<double>(img.size());
    double var = 0.0;
    for (double v : img) var += (v - mean) * (v - mean);
    var /= static_cast<double>(img.size());
    const double inv_std = 1.0 / std::max(std::sqrt(var), 1e-12);
    float* out = data.image(i);
    for (size_t k = 0; k < img.size(); ++k)
      out[k] = static_cast<float>((img[k] - mean) * inv_std);
  }
  return data;
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_dataset: cannot open '" + path + "' for writing");
  out.write(kMagic, 8);
  write_u32(out, data.count);
  write_u32(out, data.channels);
  write_u32(out, data.height);
  write_u32(out, data.width);
  const unsigned char dtype = 0;  // float32 little-endian
  out.write(reinterpret_cast<const char*>(&dtype), 1);
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(data.values.data()),
            static_cast<std::streamsize>(data.values.size() * sizeof(float)));
  if (!out) throw IoError("save_dataset: write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("load_dataset: cannot open '" + path + "'");
  const std::streamsize file_size = in.tellg();
  in.seekg(0);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw BadMagicError("load_dataset: '" + path + "' is not a DBPTNSR1 file");
  Dataset data;
  data.count = read_u32(in);
  data.channels = read_u32(in);
  data.height = read_u32(in);
  data.width = read_u32(in);
  unsigned char dtype = 0xff;
  in.read(reinterpret_cast<char*>(&dtype), 1);
  if (!in) throw LengthMismatchError("load_dataset: truncated header in '" + path + "'");
  if (dtype != 0)
    throw DtypeMismatchError("load_dataset: unsupported dtype code " + std::to_string(dtype));
  const size_t expected = static_cast<size_t>(data.count) * data.image_elems();
  const std::streamsize header = 8 + 4 * 4 + 1;
  if (file_size != header + static_cast<std::streamsize>(expected * sizeof(float)))
    throw LengthMismatchError("load_dataset: payload length does not match header of '" + path +
                              "'");
  data.values.resize(expected);
  in.read(reinterpret_cast<char*>(data.values.data()),
          static_cast<std::streamsize>(expected * sizeof(float)));
  if (!in) throw LengthMismatchError("load_dataset: short read in '" + path + "'");
  return data;
}

NormStats compute_norm_stats(const Dataset& data, size_t begin, size_t end) {
  if (begin >= end || end > data.count) throw ShapeError("compute_norm_stats: bad range");
  NormStats stats;
  stats.mean.assign(data.channels, 0.0);
  stats.stddev.assign(data.channels, 0.0);
  const size_t plane = static_cast<size_t>(data.height) * data.width;
  const double n = static_cast<double>((end - begin) * plane);
  for (size_t i = begin; i < end; ++i) {
    const float* img = data.image(i);
    for (uint32_t c = 0; c < data.channels; ++c)
      for (size_t k = 0; k < plane; ++k) stats.mean[c] += img[c * plane + k];
  }
  for (auto& m : stats.mean) m /= n;
  for (size_t i = begin; i < end; ++i) {
    const float* img = data.image(i);
    for (uint32_t c = 0; c < data.channels; ++c)
      for (size_t k = 0; k < plane; ++k) {
        const double d = img[c * plane + k] - stats.mean[c];
        stats.stddev[c] += d * d;
      }
  }
  for (auto& s : stats.stddev) s = std::max(std::sqrt(s / n), 1e-12);
  return stats;
}

void hflip_image(double* image, int channels, int height, int width) {
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y) {
      double* row = image + (static_cast<size_t>(c) * height + y) * width;
      std::reverse(row, row + width);
    }
}

void resize_image(const double* src, int channels, int src_h, int src_w, double* dst, int dst_h,
                  int dst_w, Interpolation interp) {
  const double sy = static_cast<double>(src_h) / dst_h;
  const double sx = static_cast<double>(src_w) / dst_w;
  for (int c = 0; c < channels; ++c) {
    const double* plane = src + static_cast<size_t>(c) * src_h * src_w;
    double* out = dst + static_cast<size_t>(c) * dst_h * dst_w;
    for (int y = 0; y < dst_h; ++y) {
      const double fy = (y + 0.5) * sy - 0.5;
      for (int x = 0; x < dst_w; ++x) {
        const double fx = (x + 0.5) * sx - 0.5;
        double value = 0.0;
        if (interp == Interpolation::Bilinear) {
          const int y0 = static_cast<int>(std::floor(fy));
          const int x0 = static_cast<int>(std::floor(fx));
          const double wy = fy - y0, wx = fx - x0;
          auto at = [&](int yy, int xx) {
            yy = std::clamp(yy, 0, src_h - 1);
            xx = std::clamp(xx, 0, src_w - 1);
            return plane[static_cast<size_t>(yy) * src_w + xx];
          };
          value = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
                  wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
        } else {
          const int y0 = static_cast<int>(std::floor(fy));
          const int x0 = static_cast<int>(std::floor(fx));
          double weight_sum = 0.0;
          for (int dy = -1; dy <= 2; ++dy) {
            for (int dx = -1; dx <= 2; ++dx) {
              const double wgt = cubic_kernel(fy - (y0 + dy)) * cubic_kernel(fx - (x0 + dx));
              const int yy = std::clamp(y0 + dy, 0, src_h - 1);
              const int xx = std::clamp(x0 + dx, 0, src_w - 1);
              value += wgt * plane[static_cast<size_t>(yy) * src_w + xx];
              weight_sum += wgt;
            }
          }
          value /= weight_sum;
        }
        out[static_cast<size_t>(y) * dst_w + x] = value;
      }
    }
  }
}

void augment_image(const float* src, int channels, int height, int width,
                   const AugmentConfig& cfg, const NormStats& stats, Rng& rng, double* dst) {
  std::vector<double> work(static_cast<size_t>(channels) * height * width);
  if (cfg.random_crop) {
    const double scale = rng.uniform(cfg.min_scale, cfg.max_scale);
    int side = static_cast<int>(std::lround(std::sqrt(scale) * std::min(height, width)));
    side = std::clamp(side, 1, std::min(height, width));
    const int top = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(height - side + 1)));
    const int left = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(width - side + 1)));
    std::vector<double> crop(static_cast<size_t>(channels) * side * side);
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          crop[(static_cast<size_t>(c) * side + y) * side + x] =
              src[(static_cast<size_t>(c) * height + top + y) * width + left + x];
    resize_image(crop.data(), channels, side, side, work.data(), height, width,
                 cfg.interpolation);
  } else {
    for (size_t k = 0; k < work.size(); ++k) work[k] = src[k];
  }
  if (cfg.hflip && rng.uniform() < 0.5) hflip_image(work.data(), channels, height, width);
  const size_t plane = static_cast<size_t>(height) * width;
  for (int c = 0; c < channels; ++c)
    for (size_t k = 0; k < plane; ++k)
      dst[c * plane + k] = (work[c * plane + k] - stats.mean[static_cast<size_t>(c)]) /
                           stats.stddev[static_cast<size_t>(c)];
}

void normalize_image(const float* src, int channels, int height, int width,
                     const NormStats& stats, double* dst) {
  const size_t plane = static_cast<size_t>(height) * width;
  for (int c = 0; c < channels; ++c)
    for (size_t k = 0; k < plane; ++k)
      dst[c * plane + k] = (src[c * plane + k] - stats.mean[static_cast<size_t>(c)]) /
                           stats.stddev[static_cast<size_t>(c)];
}

}  // namespace dbp
