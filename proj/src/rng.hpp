#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace spacap {

// Deterministic random stream. Only the mt19937_64 engine is used directly;
// uniform/normal draws are derived in-house so output is stable across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  double uniform() {  // [0, 1)
    return (bits() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t uniform_int(std::uint64_t n) {  // [0, n)
    return bits() % n;
  }

  bool coin() { return (bits() & 1) != 0; }

  double normal(double mean = 0.0, double sigma = 1.0) {
    // Box-Muller, one value per call
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + sigma * z;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace spacap
