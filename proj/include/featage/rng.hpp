#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace featage::num {

// FNV-1a, used for stage-seed derivation and config snapshot hashes.
inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Deterministic RNG. The engine sequence is pinned by the standard; the
// value transforms below are ours, so draws are reproducible across
// toolchains (std::*_distribution makes no such promise).
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t raw() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    return static_cast<int>(eng_() % static_cast<uint64_t>(n));
  }

  // standard normal via Box-Muller; one value per call, no caching,
  // so the draw count stays easy to reason about
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

// Independent stream per pipeline stage: same base seed, distinct tags.
inline uint64_t derive_seed(uint64_t base, const std::string& tag) {
  return fnv1a64(tag) ^ (base * 0x9E3779B97F4A7C15ULL + 0x9E3779B97F4A7C15ULL);
}

inline uint64_t derive_seed(uint64_t base, const std::string& tag, uint64_t index) {
  return derive_seed(base, tag) ^ (0xBF58476D1CE4E5B9ULL * (index + 1));
}

}  // namespace featage::num
