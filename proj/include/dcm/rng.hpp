#pragma once

#include <cstdint>

namespace dcm {

/// Position in a counter-based random stream. Equal states yield equal
/// streams on every platform.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

/// SplitMix64 over (seed, counter). Each draw advances the counter by one.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_{seed, 0} {}
  explicit Rng(RngState state) : state_(state) {}

  const RngState& state() const { return state_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (two draws per call).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream, e.g. one per parameter tensor.
  Rng fork(std::uint64_t salt);

 private:
  RngState state_;
};

}  // namespace dcm
