#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dmfont {

// splitmix64 step; also used for seed derivation.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic random stream. All randomness in the toolkit flows through
// this generator so runs are reproducible from a single seed; per-step
// streams are derived with derive_seed rather than carrying mutable state
// across steps, which keeps checkpoint resume exact by construction.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0.
  int64_t uniform_int(int64_t n) { return int64_t(next_u64() % uint64_t(n)); }

  // Standard normal via Box-Muller, pairs cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (decltype(n) i = n - 1; i > 0; --i) {
      auto j = uniform_int(uint64_t(i) + 1);
      std::swap(first[i], first[j]);
    }
  }

  template <typename C>
  void shuffle(C& container) {
    shuffle(container.begin(), container.end());
  }

 private:
  uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// Derives an independent stream seed from (root seed, purpose tag, counter).
inline uint64_t derive_seed(uint64_t seed, std::string_view purpose, uint64_t counter = 0) {
  uint64_t h = 0xCBF29CE484222325ULL ^ seed;
  for (char c : purpose) {
    h ^= uint64_t(uint8_t(c));
    h *= 0x100000001B3ULL;
  }
  h ^= counter + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  uint64_t s = h;
  return splitmix64(s);
}

}  // namespace dmfont
