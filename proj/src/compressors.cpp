#include "saef/compressors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace saef {

std::string_view to_string(CompressorKind kind) {
  switch (kind) {
    case CompressorKind::identity: return "identity";
    case CompressorKind::sign_scaled: return "sign_scaled";
    case CompressorKind::topk: return "topk";
  }
  return "?";
}

CompressorKind parse_compressor_kind(std::string_view name) {
  if (name == "identity") return CompressorKind::identity;
  if (name == "sign_scaled") return CompressorKind::sign_scaled;
  if (name == "topk") return CompressorKind::topk;
  throw std::invalid_argument("unknown compressor kind '" + std::string(name) + "'");
}

void CompressorSpec::validate() const {
  if (kind == CompressorKind::topk) {
    if (!topk_fraction) throw std::invalid_argument("topk compressor needs topk_fraction");
    if (!(*topk_fraction > 0.0 && *topk_fraction <= 1.0))
      throw std::invalid_argument("topk_fraction must lie in (0, 1]");
  } else if (topk_fraction) {
    throw std::invalid_argument("topk_fraction is only valid for the topk compressor");
  }
}

std::size_t topk_count(double fraction, std::size_t d) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("topk fraction must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d) + 1e-9));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(d, 1));
}

std::uint64_t encoded_size(const CompressorSpec& spec, std::size_t d) {
  switch (spec.kind) {
    case CompressorKind::identity: return kFullPrecisionBytes * d;
    case CompressorKind::sign_scaled: return (d + 7) / 8 + kSignScaleBytes;
    case CompressorKind::topk: return kTopkEntryBytes * topk_count(spec.topk_fraction.value(), d);
  }
  return 0;
}

std::uint64_t encoded_size(const CompressorSpec& spec, std::size_t d,
                           const BlockPartition* partition) {
  if (!spec.layerwise) return encoded_size(spec, d);
  if (!partition) throw std::invalid_argument("layer-wise compression needs a partition");
  require_same_length(partition->dimension(), d, "encoded_size");
  std::uint64_t total = 0;
  for (std::size_t b : partition->sizes()) total += encoded_size(spec, b);
  return total;
}

namespace {

void sign_scaled_into(std::span<const double> v, std::span<double> out) {
  const double scale = l1_norm(v) / static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] > 0.0 ? scale : (v[i] < 0.0 ? -scale : 0.0);
  }
}

void topk_into(std::span<const double> v, std::size_t k, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  if (k >= v.size()) {
    std::copy(v.begin(), v.end(), out.begin());
    return;
  }
  std::vector<std::uint32_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0u);
  // Strict total order: larger magnitude first, then lower index.
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(v[a]);
    const double mb = std::abs(v[b]);
    return ma > mb || (ma == mb && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  for (std::size_t j = 0; j < k; ++j) out[idx[j]] = v[idx[j]];
}

void compress_block(const CompressorSpec& spec, std::span<const double> v, std::span<double> out) {
  switch (spec.kind) {
    case CompressorKind::identity:
      std::copy(v.begin(), v.end(), out.begin());
      break;
    case CompressorKind::sign_scaled:
      sign_scaled_into(v, out);
      break;
    case CompressorKind::topk:
      topk_into(v, topk_count(*spec.topk_fraction, v.size()), out);
      break;
  }
}

}  // namespace

CompressedMessage compress_identity(std::span<const double> v) {
  return saef::apply(CompressorSpec::identity(), v);
}

CompressedMessage compress_sign_scaled(std::span<const double> v) {
  return saef::apply(CompressorSpec::sign_scaled(), v);
}

CompressedMessage compress_topk(std::span<const double> v, double fraction) {
  return saef::apply(CompressorSpec::topk(fraction), v);
}

CompressedMessage apply(const CompressorSpec& spec, std::span<const double> v,
                        const BlockPartition* partition) {
  spec.validate();
  if (v.empty()) throw DimensionError("cannot compress an empty vector");
  require_finite(v, "compress");
  if (spec.layerwise != (partition != nullptr))
    throw std::invalid_argument(spec.layerwise ? "layer-wise compression needs a partition"
                                               : "partition given for a whole-vector compressor");

  CompressedMessage msg{ParamVector(v.size()), 0};
  if (!spec.layerwise) {
    compress_block(spec, v, msg.decoded.span());
    msg.encoded_bytes = encoded_size(spec, v.size());
    return msg;
  }
  require_same_length(partition->dimension(), v.size(), "compress");
  for (std::size_t b = 0; b < partition->num_blocks(); ++b) {
    const auto in = block_view(v, *partition, b);
    compress_block(spec, in, block_view(msg.decoded.span(), *partition, b));
    msg.encoded_bytes += encoded_size(spec, in.size());
  }
  return msg;
}

double guaranteed_delta(const CompressorSpec& spec, std::size_t d) {
  spec.validate();
  if (d == 0) throw DimensionError("delta of an empty vector");
  switch (spec.kind) {
    case CompressorKind::identity: return 1.0;
    case CompressorKind::sign_scaled: return 1.0 / static_cast<double>(d);
    case CompressorKind::topk:
      return static_cast<double>(topk_count(*spec.topk_fraction, d)) / static_cast<double>(d);
  }
  return 1.0;
}

double guaranteed_delta(const CompressorSpec& spec, const BlockPartition& partition) {
  if (!spec.layerwise) return guaranteed_delta(spec, partition.dimension());
  double delta = 1.0;
  for (std::size_t b : partition.sizes()) delta = std::min(delta, guaranteed_delta(spec, b));
  return delta;
}

DeltaCheck check_delta_property(const CompressorSpec& spec, std::span<const double> v,
                                const BlockPartition* partition) {
  DeltaCheck out;
  if (!spec.layerwise) partition = nullptr;
  out.delta = partition ? guaranteed_delta(spec, *partition) : guaranteed_delta(spec, v.size());
  const double norm_sq = l2_norm_sq(v);
  if (norm_sq == 0.0) {
    out.degenerate = true;
    return out;
  }
  const auto msg = saef::apply(spec, v, partition);
  double err = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = msg.decoded[i] - v[i];
    err += r * r;
  }
  out.ratio = err / norm_sq;
  out.holds = err <= (1.0 - out.delta) * norm_sq;
  return out;
}

}  // namespace saef
