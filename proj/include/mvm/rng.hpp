#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mvm {

/// Seeded 64-bit Mersenne Twister with distribution helpers whose output
/// does not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection sampling (no modulo bias).
  uint64_t below(uint64_t n);

  /// Standard normal via Box-Muller.
  double normal();

  /// Normal(0, std) resampled until inside [-2 std, 2 std].
  double truncated_normal(double std);

  /// Text serialization of the full engine state.
  std::string state() const;
  void set_state(const std::string& text);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mvm
