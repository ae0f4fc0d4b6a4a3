#include "saef/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace saef {

void ParamVector::set_zero() noexcept { std::fill(values_.begin(), values_.end(), 0.0); }

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

BlockPartition BlockPartition::whole(std::size_t d) {
  if (d == 0) throw DimensionError("partition of an empty vector");
  return BlockPartition({0, d});
}

BlockPartition BlockPartition::from_sizes(std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw DimensionError("partition needs at least one block");
  std::vector<std::size_t> offsets{0};
  for (std::size_t s : sizes) {
    if (s == 0) throw DimensionError("partition block is empty");
    offsets.push_back(offsets.back() + s);
  }
  return BlockPartition(std::move(offsets));
}

BlockPartition BlockPartition::from_ranges(std::span<const Range> ranges) {
  if (ranges.empty()) throw DimensionError("partition needs at least one block");
  std::vector<std::size_t> offsets{0};
  for (const auto& r : ranges) {
    if (r.begin != offsets.back())
      throw DimensionError("partition ranges must be contiguous starting at 0");
    if (r.end <= r.begin) throw DimensionError("partition block is empty");
    offsets.push_back(r.end);
  }
  return BlockPartition(std::move(offsets));
}

BlockPartition::Range BlockPartition::block(std::size_t i) const {
  if (i >= num_blocks())
    throw std::out_of_range("block index " + std::to_string(i) + " out of range (" +
                            std::to_string(num_blocks()) + " blocks)");
  return {offsets_[i], offsets_[i + 1]};
}

std::vector<std::size_t> BlockPartition::sizes() const {
  std::vector<std::size_t> out;
  out.reserve(num_blocks());
  for (std::size_t i = 0; i + 1 < offsets_.size(); ++i) out.push_back(offsets_[i + 1] - offsets_[i]);
  return out;
}

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
}

void require_finite(std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]))
      throw NonFiniteError(std::string(what) + ": non-finite entry at index " + std::to_string(i));
  }
}

ParamVector axpy(double alpha, std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "axpy");
  ParamVector out(y);
  axpy_inplace(alpha, x, out.span());
  return out;
}

void axpy_inplace(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_length(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
  require_finite(y, "axpy");
}

ParamVector subtract(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "subtract");
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  require_finite(out, "subtract");
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l1_norm(std::span<const double> v) noexcept {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

double l2_norm_sq(std::span<const double> v) noexcept {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double linf_norm(std::span<const double> v) noexcept {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

std::span<double> block_view(std::span<double> v, const BlockPartition& p, std::size_t i) {
  require_same_length(v.size(), p.dimension(), "block_view");
  const auto r = p.block(i);
  return v.subspan(r.begin, r.size());
}

std::span<const double> block_view(std::span<const double> v, const BlockPartition& p,
                                   std::size_t i) {
  require_same_length(v.size(), p.dimension(), "block_view");
  const auto r = p.block(i);
  return v.subspan(r.begin, r.size());
}

ParamVector mean(std::span<const ParamVector> vs) {
  if (vs.empty()) throw std::invalid_argument("mean of an empty list");
  const ParamVector& first = vs.front();
  const std::size_t d = first.size();
  // Accumulate deviations from the first vector so that identical inputs
  // reproduce it bitwise: a plain sum of K copies rounds for most K.
  ParamVector acc(d);
  for (const auto& v : vs.subspan(1)) {
    require_same_length(v.size(), d, "mean");
    for (std::size_t i = 0; i < d; ++i) acc[i] += v[i] - first[i];
  }
  const double k = static_cast<double>(vs.size());
  for (std::size_t i = 0; i < d; ++i) acc[i] = first[i] + acc[i] / k;
  require_finite(acc, "mean");
  return acc;
}

}  // namespace saef
