#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saef/linalg.hpp"
#include "saef/rng.hpp"

namespace saef {

/// One stochastic draw xi. Finite-sum objectives fill `indices` (sampled
/// with replacement); the quadratic fills `noise` instead.
struct Minibatch {
  std::vector<std::uint32_t> indices;
  std::vector<double> noise;
};

/// Smoothness and noise constants used by the bound calculators.
struct ModelConstants {
  double L = 0.0;         // smoothness
  double sigma_sq = 0.0;  // stochastic-gradient variance
  double M_sq = 0.0;      // full-gradient bound
  bool exact = false;     // L (and sigma_sq where noted) known in closed form
  bool sigma_estimated = true;
  bool M_estimated = true;
};

/// F(x) = E f(x; xi) with a stochastic-gradient oracle. Implementations are
/// immutable after construction; all randomness comes in through the stream
/// passed to sample().
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual const BlockPartition& partition() const = 0;

  virtual double loss(std::span<const double> x) const = 0;
  virtual void gradient(std::span<const double> x, std::span<double> out) const = 0;
  /// Loss and gradient together; finite-sum models share the forward pass.
  virtual double loss_and_gradient(std::span<const double> x, std::span<double> out) const;

  virtual Minibatch sample(RngStream& rng, std::size_t batch_size) const = 0;
  virtual void stochastic_gradient(std::span<const double> x, const Minibatch& batch,
                                   std::span<double> out) const = 0;

  virtual ParamVector initial_point() const { return ParamVector(dimension()); }
  /// Size of the finite sum, if the objective is one.
  virtual std::optional<std::size_t> num_samples() const { return std::nullopt; }
  /// min F, when known in closed form.
  virtual std::optional<double> optimal_value() const { return std::nullopt; }

  ParamVector full_gradient(std::span<const double> x) const;
  ParamVector stochastic_gradient(std::span<const double> x, const Minibatch& batch) const;
};

/// 0.5 x'Ax - b'x with A = Q diag(eigenvalues) Q', Q a random orthogonal matrix.
class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(std::vector<double> matrix, std::vector<double> linear,
                     std::vector<double> eigenvalues, double noise_std);

  std::string name() const override { return "quadratic"; }
  std::size_t dimension() const override { return d_; }
  const BlockPartition& partition() const override { return partition_; }
  double loss(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> out) const override;
  Minibatch sample(RngStream& rng, std::size_t batch_size) const override;
  void stochastic_gradient(std::span<const double> x, const Minibatch& batch,
                           std::span<double> out) const override;
  std::optional<double> optimal_value() const override { return optimal_value_; }

  /// Row-major d x d.
  std::span<const double> matrix() const { return matrix_; }
  std::span<const double> linear_term() const { return linear_; }
  std::span<const double> eigenvalues() const { return eigenvalues_; }
  const ParamVector& minimizer() const { return minimizer_; }
  double noise_std() const { return noise_std_; }

 private:
  std::size_t d_;
  std::vector<double> matrix_;
  std::vector<double> linear_;
  std::vector<double> eigenvalues_;
  double noise_std_;
  BlockPartition partition_;
  ParamVector minimizer_;
  double optimal_value_ = 0.0;
};

struct ObjectiveBundle {
  std::shared_ptr<const Objective> objective;
  ModelConstants constants;
};

/// n x p feature matrix (row-major) with one label per row.
struct Dataset {
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<double> features;
  std::vector<double> labels;

  std::span<const double> row(std::size_t i) const { return {features.data() + i * p, p}; }
  void validate() const;
};

enum class DatasetFormat { csv, libsvm };
DatasetFormat parse_dataset_format(std::string_view name);

/// Thrown for malformed dataset files; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// csv: comma-separated, label in the last column, no header.
/// libsvm: `label idx:val ...` with 1-based indices; `num_features` fixes p,
/// otherwise p is the largest index seen.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     std::optional<std::size_t> num_features = std::nullopt);
void write_dataset(const Dataset& data, const std::filesystem::path& path, DatasetFormat format);

/// Two-Gaussian binary classification data, labels in {-1, +1}. Class means
/// are +/- separation / sqrt(p) along the all-ones direction; per-feature
/// scales are log-spaced so the feature covariance has the given condition
/// number.
Dataset make_two_gaussians(std::size_t n, std::size_t p, std::uint64_t seed,
                           double separation = 2.0, double condition_number = 1.0);

/// F(x) = 0.5 x'Ax - b'x, eigenvalues of A log-spaced in [1, condition_number].
/// Stochastic gradients add isotropic Gaussian noise with E||noise||^2 =
/// noise_std^2 (independent of batch size).
ObjectiveBundle make_quadratic(std::size_t d, double condition_number, double noise_std,
                               std::uint64_t seed);

/// L2-regularised logistic regression on labels in {-1, +1} ({0, 1} is
/// mapped to {-1, +1}). sigma_sq and M_sq are estimated at the initial point
/// with `estimation_draws` minibatches of `batch_size`.
ObjectiveBundle make_logistic(Dataset data, double l2_reg, std::size_t batch_size = 1,
                              std::uint64_t seed = 0, std::size_t estimation_draws = 10000);

/// One-hidden-layer tanh network with squared loss, one block per tensor
/// (W1, b1, w2, b2). Constants are estimated and inflated by 1.2.
ObjectiveBundle make_mlp(Dataset data, std::size_t hidden, std::uint64_t seed,
                         std::size_t batch_size = 1);

inline constexpr double kEstimateSafetyFactor = 1.2;

/// Probe-based estimates: L from gradient differences over all probe pairs,
/// sigma_sq as the largest per-probe empirical noise variance, M_sq as the
/// largest ||grad F||^2. Probes are initial_point() plus N(0, radius^2 / d) noise.
ModelConstants estimate_constants(const Objective& obj, std::size_t probe_points,
                                  std::size_t samples, std::uint64_t seed,
                                  std::size_t batch_size = 1, double radius = 1.0);

struct GradientCheck {
  bool passed = true;
  double worst_relative_error = 0.0;
  std::size_t worst_point = 0;
  std::size_t worst_coordinate = 0;
};

/// Compares the analytic gradient with a fourth-order central difference of
/// loss(). `per_coordinate` checks each coordinate against
/// max(|a|, |b|, 1e-6); otherwise the vector relative error is used.
GradientCheck check_gradient(const Objective& obj, std::size_t points, double tolerance,
                             std::uint64_t seed, bool per_coordinate = false,
                             double radius = 1.0);

/// Directional derivatives at initial_point() along random unit directions
/// against a fourth-order central difference; O(directions) loss calls, so
/// it is cheap enough to run before every experiment.
GradientCheck check_directional_gradient(const Objective& obj, std::size_t directions,
                                         double tolerance, std::uint64_t seed);

}  // namespace saef
