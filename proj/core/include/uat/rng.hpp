#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

namespace uat {

// Bit-mix used to derive independent seed streams from a base seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x9e3779b9ull));
}

// Deterministic RNG. The raw engine is std::mt19937_64, but every variate
// transform is written out here so that sequences are identical across
// standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  void reseed(uint64_t seed) {
    eng_.seed(seed);
    have_spare_ = false;
  }

  uint64_t bits() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n), n > 0. Rejection sampling on the raw stream.
  int64_t below(int64_t n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t rem = std::numeric_limits<uint64_t>::max() % un;
    const uint64_t limit = std::numeric_limits<uint64_t>::max() - rem;
    uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return static_cast<int64_t>(x % un);
  }

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace uat
