#pragma once

#include <cstdint>
#include <cmath>

namespace phast {

// Counter-based PRNG. Each draw hashes (key, counter) with the SplitMix64
// finalizer, so a stream is a pure function of its key and the draw index:
// identical on every platform, cheap to fork, and trivially seekable.
//
// Stream layout used across the project:
//   key = mix(seed) ^ mix(stream_id * GAMMA + 1)
// so (seed, stream) pairs give independent streams (datasets fork one stream
// per trajectory, training forks one per epoch, control one per trial).
class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  CounterRng() : key_(mix64(0)), counter_(0) {}
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix64(seed) ^ mix64(stream * kGamma + 1)), counter_(0) {}

  // SplitMix64 finalizer (Steele, Lea, Flood 2014 constants).
  static std::uint64_t mix64(std::uint64_t z) {
    z += kGamma;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return mix64(key_ + kGamma * counter_++); }

  // Uniform on [0,1): top 53 bits, the standard double construction.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. Draw order is documented and fixed:
  // u1 then u2 are consumed, the cosine branch is returned first and the
  // sine branch is cached for the next call.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1]: shift the uniform away from zero so log() is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace phast
