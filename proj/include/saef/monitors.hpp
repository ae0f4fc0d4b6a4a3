#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "saef/diagnostics.hpp"
#include "saef/engine.hpp"

namespace saef {

struct Violation {
  std::string quantity;
  long iteration = -1;
  double measured = 0.0;
  double limit = 0.0;
};

/// Hard engine invariants checked after every iteration: all workers share
/// x exactly, the auxiliary variable follows the uncompressed momentum
/// recursion, and single-way runs keep the server error at zero.
class InvariantMonitor final : public RunObserver {
 public:
  static constexpr double kAuxTolerance = 1e-10;

  void on_iteration(const Simulator& sim, const IterationDetail& detail) override;

  bool ok() const { return !first_violation_; }
  const std::optional<Violation>& first_violation() const { return first_violation_; }
  /// Largest residual / (1 + ||x~_t||_inf) seen.
  double worst_aux_ratio() const { return worst_aux_ratio_; }
  double worst_divergence() const { return worst_divergence_; }
  long iterations_checked() const { return checked_; }

 private:
  void flag(std::string quantity, long t, double measured, double limit);

  std::optional<Violation> first_violation_;
  double worst_aux_ratio_ = 0.0;
  double worst_divergence_ = 0.0;
  long checked_ = 0;
};

/// Per-iteration series of the error norms with known upper bounds, plus a
/// running M^2 estimate: the largest ||grad F||^2 seen at the gradient query
/// points and at x.
class ErrorNormMonitor final : public RunObserver {
 public:
  struct Sample {
    long t;
    double worker_error;      // max_k ||e^(k)||^2
    double worker_deviation;  // (1/K) sum ||e_bar - e^(k)||^2
    double server_error;      // ||e||^2
    double mismatch_proxy;    // (1/K) sum ||e + e_bar - e^(k)||^2
  };

  explicit ErrorNormMonitor(bool track_M = true) : track_M_(track_M) {}

  void on_iteration(const Simulator& sim, const IterationDetail& detail) override;

  const std::vector<Sample>& samples() const { return samples_; }
  double M_sq_hat() const { return M_sq_hat_; }
  Sample maxima() const;

 private:
  bool track_M_;
  std::vector<Sample> samples_;
  double M_sq_hat_ = 0.0;
};

struct LemmaCheck {
  std::string quantity;
  double measured_max = 0.0;
  double rhs = 0.0;
  bool holds = true;
  long first_exceed = -1;
};

/// Compares the monitor's series maxima with the bound right-hand sides.
std::vector<LemmaCheck> check_lemma_bounds(const ErrorNormMonitor& monitor,
                                           const AppendixBounds& bounds);

/// Sliding-window estimate of the across-worker error variance against the
/// squared mean error.
class Proposition1Tracker final : public RunObserver {
 public:
  explicit Proposition1Tracker(std::size_t window = 50) : window_(window) {}

  void on_iteration(const Simulator& sim, const IterationDetail& detail) override;

  Proposition1Estimate current() const;
  /// Fraction of iterations whose window estimate satisfied the condition.
  double satisfied_fraction() const;

 private:
  std::size_t window_;
  std::deque<std::vector<ParamVector>> snapshots_;
  long evaluated_ = 0;
  long satisfied_ = 0;
};

}  // namespace saef
