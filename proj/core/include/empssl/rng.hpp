#pragma once

#include <cmath>
#include <cstdint>

namespace empssl {

/// Seedable splitmix64 generator. Substreams are derived by hashing the
/// current state with a key tuple, so a stream addressed by e.g.
/// (seed, epoch, step, image, patch) is the same no matter which thread
/// draws from it or in what order streams are created.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed + kGamma)) {}

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller. Draws two uniforms per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  /// New independent stream keyed by (this stream, keys...).
  template <class... Keys>
  Rng derive(Keys... keys) const {
    std::uint64_t h = state_;
    ((h = mix(h ^ mix(static_cast<std::uint64_t>(keys) + kGamma))), ...);
    return Rng(h, FromState{});
  }

 private:
  struct FromState {};
  Rng(std::uint64_t state, FromState) : state_(state) {}

  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace empssl
