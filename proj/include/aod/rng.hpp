#pragma once

#include <cmath>
#include <cstdint>

namespace aod {

// Counter-free splitmix64 generator. Fully specified arithmetic, so streams
// are bit-identical across platforms and standard libraries, unlike
// std::normal_distribution. Every consumer derives its own stream from
// (seed, stream ids...) so parallel and serial execution draw the same
// numbers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derive an independent stream from up to three ids.
  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    std::uint64_t s = seed;
    s = mix(s ^ (0x9e3779b97f4a7c15ull + a));
    s = mix(s ^ (0xbf58476d1ce4e5b9ull + b));
    s = mix(s ^ (0x94d049bb133111ebull + c));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; one draw per call, the paired value is
  // discarded to keep the stream position independent of call parity.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n), n >= 1. Rejection-free multiply-shift is fine
  // at these scales.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) %
           n;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace aod
