// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace cudkit {

/// Deterministic RNG with a portable uniform transform. std::uniform_*
/// distributions are implementation-defined, which would break frozen test
/// values and bit-identical reruns across standard libraries, so values are
/// derived from the raw engine output directly.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo,hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0,n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  /// +1 or -1 with equal probability.
  int sign() { return (next_u64() & 1) ? 1 : -1; }

 private:
  uint64_t state_;
};

}  // namespace cudkit
