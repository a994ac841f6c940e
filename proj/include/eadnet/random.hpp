#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace eadnet {

// Deterministic random stream. mt19937 output is fully specified by the
// standard; the std::*_distribution adapters are not, so the mappings to
// uniform/normal values are done here to keep results identical across
// standard library implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint32_t seed) : rng_(seed) {}

  std::uint32_t bits() { return rng_(); }

  // uniform in [0, 1) with 24-bit resolution
  double uniform() { return (rng_() >> 8) * (1.0 / 16777216.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) { return static_cast<int>(rng_() % static_cast<std::uint32_t>(n)); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-12);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937 rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace eadnet
