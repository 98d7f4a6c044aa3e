#pragma once

#include <cstdint>
#include <random>

#include "ttrec/common.hpp"

namespace ttrec {

/// splitmix64 finalizer; used to spread user seeds and derive substreams.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Deterministic RNG wrapper. One engine + persistent distributions so a
/// given (seed, stream) pair always yields the same value sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  /// Independent substream, e.g. one per TT-core or per data-batch.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    Rng r(0);
    r.engine_.seed(mix64(mix64(seed) ^ mix64(stream ^ 0xD1B54A32D192ED03ull)));
    return r;
  }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return unit_(engine_); }  // [0,1)

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() { return normal_(engine_); }  // N(0,1)

  /// Uniform integer in [lo, hi), hi > lo.
  index_t uniform_int(index_t lo, index_t hi) {
    return lo + static_cast<index_t>(std::uniform_int_distribution<std::uint64_t>(
                    0, static_cast<std::uint64_t>(hi - lo - 1))(engine_));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ttrec
