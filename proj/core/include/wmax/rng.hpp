#pragma once

#include <cstdint>

namespace wmax {

// Splittable counter-style PRNG built on the splitmix64 finalizer.
//
// A stream is identified by a 64-bit state; `fork(key)` derives an
// independent stream from (state, key) without advancing the parent, so a
// fixed seed gives every (episode, unit) draw a reproducible value no matter
// how work is distributed over threads. Value semantics; copying a stream
// replays it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed + kGamma)) {}

  // Independent child stream; deterministic in (parent state, key).
  Rng fork(std::uint64_t key) const {
    return Rng(mix(state_ ^ mix(key + kGamma)));
  }

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace wmax
