#pragma once

// Counter-based 64-bit generator: output n of stream k is
// splitmix64_mix(k + n * golden_gamma). Streams are cheap to derive, so every
// Monte Carlo realization gets its own reproducible stream regardless of
// which thread runs it.

#include <cmath>
#include <cstdint>
#include <limits>

namespace relloc {

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key = 0) : key_(splitmix64_mix(key ^ 0x6a09e667f3bcc909ULL)) {}

  // Stream for one realization: seed xor run index, remixed.
  static CounterRng for_stream(std::uint64_t seed, std::uint64_t stream) { return CounterRng(seed ^ splitmix64_mix(stream + 1)); }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64_mix(key_ + (counter_++) * kGamma); }

  // Uniform in [0, 1) with 53 bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_{0};
  double spare_{0.0};
  bool has_spare_{false};
};

}  // namespace relloc
