#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace meshsim {

// splitmix64 step: bijective mixer, also used as the per-stream generator.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Named sub-streams. Every random quantity in a run is drawn from a stream
// keyed by (seed, purpose, a, b), so any worker can regenerate any stream
// locally and results do not depend on call interleaving.
enum class StreamPurpose : std::uint64_t {
  init = 1,
  centers = 2,
  data = 3,
  batch = 4,
  grad_noise = 5,
  mask = 6,
  experiment = 7,
};

class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream_id) : state_(seed) {
    absorb(0x6d657368ULL);  // domain tag
    absorb(stream_id);
  }

  static Rng derive(std::uint64_t seed, StreamPurpose purpose, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
    Rng r(seed, static_cast<std::uint64_t>(purpose));
    r.absorb(a);
    r.absorb(b);
    return r;
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in {0, ..., n-1}, rejection sampling (unbiased).
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t zone = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    while ((r = next_u64()) >= zone) {
    }
    return r % n;
  }

  // Standard normal via Box-Muller; u1 shifted into (0, 1].
  double next_gaussian() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  void absorb(std::uint64_t v) {
    state_ ^= v + 0x9e3779b97f4a7c15ULL + (state_ << 6) + (state_ >> 2);
    splitmix64(state_);
  }

  std::uint64_t state_;
};

}  // namespace meshsim
