#pragma once

#include <cmath>
#include <cstdint>

namespace revprop {

/// Counter-based random generator. A draw is a pure function of
/// (seed, stream_id, counter), so streams can be split freely and any
/// consumer sees the same sequence on every platform. Statistical
/// quality comes from a murmur-style 64-bit finalizer applied to the
/// combined key.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_(stream_id), counter_(0) {}

  /// Independent stream with the same seed; counter restarts at zero.
  Rng stream(std::uint64_t stream_id) const { return Rng(seed_, stream_id); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    std::uint64_t h = mix(seed_ ^ 0x9e3779b97f4a7c15ULL);
    h = mix(h ^ (stream_ * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL));
    h = mix(h ^ (counter_ * 0x2545f4914f6cdd1dULL + 0xd6e8feb86659fd93ULL));
    ++counter_;
    return h;
  }

  /// Uniform in [0, 1).
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; two uniforms per draw, none cached,
  /// so the counter advance per call is fixed.
  double next_normal() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Normal(0, sigma) rejected outside +/- 2 sigma.
  double next_trunc_normal(double sigma) {
    for (;;) {
      const double z = next_normal();
      if (z >= -2.0 && z <= 2.0) return z * sigma;
    }
  }

  /// Uniform integer in [lo, hi).
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    const auto range = static_cast<std::uint64_t>(hi - lo);
    return lo + static_cast<std::int64_t>(next_u64() % range);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 33;
    z *= 0xff51afd7ed558ccdULL;
    z ^= z >> 33;
    z *= 0xc4ceb9fe1a85ec53ULL;
    z ^= z >> 33;
    return z;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_;
};

}  // namespace revprop
