#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace saef {

/// Thrown when two operands disagree on length or a partition does not fit.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation would produce (or was handed) NaN or Inf.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Flat dense vector of 64-bit reals. Holds parameters, errors, momentum
/// buffers and aggregated deltas. The length is fixed at construction.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t d, double fill = 0.0) : values_(d, fill) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  explicit ParamVector(std::span<const double> values)
      : values_(values.begin(), values.end()) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  operator std::span<const double>() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  const std::vector<double>& values() const noexcept { return values_; }

  void set_zero() noexcept;
  bool all_finite() const noexcept;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

/// Contiguous, disjoint, non-empty index ranges that tile [0, d). Used to
/// compress each model layer independently.
class BlockPartition {
 public:
  struct Range {
    std::size_t begin;
    std::size_t end;
    std::size_t size() const noexcept { return end - begin; }
  };

  /// One block covering [0, d).
  static BlockPartition whole(std::size_t d);
  /// Blocks of the given sizes, laid out in order.
  static BlockPartition from_sizes(std::span<const std::size_t> sizes);
  /// Blocks from explicit ranges. Throws DimensionError unless the ranges
  /// tile [0, back().end) without gaps or empty members.
  static BlockPartition from_ranges(std::span<const Range> ranges);

  std::size_t num_blocks() const noexcept { return offsets_.size() - 1; }
  std::size_t dimension() const noexcept { return offsets_.back(); }
  Range block(std::size_t i) const;
  std::vector<std::size_t> sizes() const;

  friend bool operator==(const BlockPartition&, const BlockPartition&) = default;

 private:
  explicit BlockPartition(std::vector<std::size_t> offsets) : offsets_(std::move(offsets)) {}
  std::vector<std::size_t> offsets_{0};
};

void require_same_length(std::size_t a, std::size_t b, const char* what);
void require_finite(std::span<const double> v, const char* what);

/// alpha * x + y.
ParamVector axpy(double alpha, std::span<const double> x, std::span<const double> y);
/// y += alpha * x in place.
void axpy_inplace(double alpha, std::span<const double> x, std::span<double> y);
/// a - b.
ParamVector subtract(std::span<const double> a, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b);
double l1_norm(std::span<const double> v) noexcept;
double l2_norm_sq(std::span<const double> v) noexcept;
double linf_norm(std::span<const double> v) noexcept;

/// Writable view of block i of v. Writes go straight to the parent vector.
std::span<double> block_view(std::span<double> v, const BlockPartition& p, std::size_t i);
std::span<const double> block_view(std::span<const double> v, const BlockPartition& p,
                                   std::size_t i);

/// Elementwise mean, accumulated in list order as deviations from the first
/// vector and divided once. Bitwise reproducible, and K identical inputs
/// return that input exactly.
ParamVector mean(std::span<const ParamVector> vs);

}  // namespace saef
