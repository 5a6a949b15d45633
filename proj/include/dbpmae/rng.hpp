#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace dbp {

uint64_t splitmix64(uint64_t& state);

// Combine a seed with stream tags so independent consumers (data order, masks,
// augmentation, DBP subsampling, weight init) never share a stream.
uint64_t mix_seed(uint64_t a, uint64_t b);
uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c);
uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c, uint64_t d);

// xoshiro256++ with splitmix64 seeding. Bit-reproducible on every platform,
// and the whole state is four words, so it serializes trivially.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t next_u64();
  // Unbiased integer in [0, n).
  uint64_t uniform_int(uint64_t n);
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Box-Muller without the cached second draw; state stays four words.
  double normal();

  Rng fork(uint64_t stream) const;

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), uniform without replacement, returned in
  // ascending order so that k == n is the identity selection.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k);

 private:
  std::array<uint64_t, 4> state_{};
};

}  // namespace dbp
