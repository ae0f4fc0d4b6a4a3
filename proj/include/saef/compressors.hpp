#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "saef/linalg.hpp"

namespace saef {

enum class CompressorKind { identity, sign_scaled, topk };

std::string_view to_string(CompressorKind kind);
CompressorKind parse_compressor_kind(std::string_view name);

/// Which compressor to run and how. `topk_fraction` is set iff kind == topk.
struct CompressorSpec {
  CompressorKind kind = CompressorKind::identity;
  std::optional<double> topk_fraction;
  bool layerwise = false;

  static CompressorSpec identity() { return {}; }
  static CompressorSpec sign_scaled(bool layerwise = false) {
    return {CompressorKind::sign_scaled, std::nullopt, layerwise};
  }
  static CompressorSpec topk(double fraction, bool layerwise = false) {
    return {CompressorKind::topk, fraction, layerwise};
  }

  /// Throws std::invalid_argument when the fields are inconsistent.
  void validate() const;

  friend bool operator==(const CompressorSpec&, const CompressorSpec&) = default;
};

/// C(v) as consumed by the receiver, plus its size on the wire.
struct CompressedMessage {
  ParamVector decoded;
  std::uint64_t encoded_bytes = 0;
};

// Wire sizes. A sign-scaled block is one bit per coordinate plus a 32-bit
// scale; a Top-K entry is a 32-bit index and a 64-bit value.
inline constexpr std::uint64_t kFullPrecisionBytes = 8;
inline constexpr std::uint64_t kSignScaleBytes = 4;
inline constexpr std::uint64_t kTopkEntryBytes = 4 + 8;

/// Number of entries Top-K keeps on a block of length d: max(1, floor(f*d)).
/// A 1e-9 slack absorbs products such as 0.29 * 100 = 28.999999999999996.
std::size_t topk_count(double fraction, std::size_t d);

/// Size of one compressed block of length d.
std::uint64_t encoded_size(const CompressorSpec& spec, std::size_t d);
/// Size of one compressed message, summing blocks when layer-wise.
std::uint64_t encoded_size(const CompressorSpec& spec, std::size_t d,
                           const BlockPartition* partition);

CompressedMessage compress_identity(std::span<const double> v);
/// (||v||_1 / d) * sign(v), sign(0) = 0.
CompressedMessage compress_sign_scaled(std::span<const double> v);
/// Keeps the k largest |v_i|, ties to the lower index, zeros the rest.
CompressedMessage compress_topk(std::span<const double> v, double fraction);

/// Runs `spec` over v. When spec.layerwise, `partition` must be given and
/// each block is compressed on its own; otherwise it must be null.
CompressedMessage apply(const CompressorSpec& spec, std::span<const double> v,
                        const BlockPartition* partition = nullptr);

/// Worst-case delta in ||C(v) - v||^2 <= (1 - delta) ||v||^2.
double guaranteed_delta(const CompressorSpec& spec, std::size_t d);
/// Layer-wise: the minimum over blocks. Non-layer-wise specs use the full dimension.
double guaranteed_delta(const CompressorSpec& spec, const BlockPartition& partition);

struct DeltaCheck {
  bool holds = true;
  /// ||C(v) - v||^2 / ||v||^2, or 0 for a zero input.
  double ratio = 0.0;
  double delta = 1.0;
  bool degenerate = false;
};

DeltaCheck check_delta_property(const CompressorSpec& spec, std::span<const double> v,
                                const BlockPartition* partition = nullptr);

}  // namespace saef
