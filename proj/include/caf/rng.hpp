#pragma once

#include <cstdint>

namespace caf {

/// Counter-based generator: the k-th 64-bit output is a pure function of
/// (seed, k), the SplitMix64 finalizer applied to seed + (k + 1) * golden.
/// Saving (seed, counter) and restoring it resumes the identical stream.
class Rng {
 public:
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
    friend bool operator==(const State&, const State&) = default;
  };

  explicit Rng(std::uint64_t seed = 0) : state_{seed, 0} {}
  explicit Rng(State state) : state_(state) {}

  State state() const noexcept { return state_; }
  std::uint64_t seed() const noexcept { return state_.seed; }
  std::uint64_t counter() const noexcept { return state_.counter; }

  std::uint64_t next_u64() noexcept;

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Uniform on [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal by Box-Muller; consumes exactly two outputs per call.
  double normal();

  /// Independent child stream, e.g. one per ablation cell.
  Rng fork(std::uint64_t stream_id) const noexcept;

 private:
  State state_;
};

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

}  // namespace caf
