#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace vfg {

/// SplitMix64 (Steele, Lea, Flood 2014). The state advances by a fixed
/// odd increment and each output is a bijective mix of the state, so the
/// n-th draw depends only on (seed, n). All derived distributions below use
/// fixed, documented transforms so streams can be reproduced elsewhere.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), via the high 64 bits of a 128-bit product.
  std::uint64_t below(std::uint64_t n) {
    const auto wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  /// Box-Muller, cosine branch only: one normal per two uniforms.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Standard Laplace (unit scale) by inverse CDF.
  double laplace() {
    const double u = uniform() - 0.5;
    const double sign = u < 0.0 ? -1.0 : 1.0;
    return -sign * std::log1p(-2.0 * std::abs(u));
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Independent stream keyed by (this generator's seed state, stream id).
  [[nodiscard]] Rng fork(std::uint64_t stream) const {
    return Rng(mix(state_ ^ mix(stream * 0xD1B54A32D192ED03ULL + kGamma)));
  }

  [[nodiscard]] std::uint64_t state() const { return state_; }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

}  // namespace vfg
