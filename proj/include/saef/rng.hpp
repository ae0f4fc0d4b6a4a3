#pragma once

#include <cstdint>

namespace saef {

/// Counter-based random stream. Output i is a pure function of (key, i),
/// so a stream can be checkpointed by copying it and independent streams
/// are derived from one master seed without sharing state.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  /// Stream `index` of the family rooted at `master_seed`.
  static RngStream derive(std::uint64_t master_seed, std::uint64_t index);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  /// Uniform integer in [0, n) by multiply-shift; n > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller; consumes exactly two outputs and keeps no cache.
  double normal() noexcept;
  /// Student-t with `dof` degrees of freedom (heavy-tailed test draws).
  double student_t(double dof) noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z) noexcept;

}  // namespace saef
