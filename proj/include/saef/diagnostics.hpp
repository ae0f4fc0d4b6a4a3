#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saef/linalg.hpp"
#include "saef/models.hpp"
#include "saef/state.hpp"

namespace saef {

// ------------------------------------------------------------ state readouts

/// x~ = x - (e + mean_k e^(k)). Assumes every worker holds the same x.
ParamVector auxiliary_variable(std::span<const WorkerState> workers, const ServerState& server);
ParamVector mean_worker_error(std::span<const WorkerState> workers);
/// (1/K) sum_k ||mean_j e^(j) - e^(k)||^2.
double worker_deviation(std::span<const WorkerState> workers);
/// max over worker pairs of ||x^(i) - x^(j)||_inf.
double max_worker_divergence(std::span<const WorkerState> workers);

/// Error-norm parts of the gradient-mismatch bounds, with L and sigma dropped.
struct ErrorProxies {
  double proxy_ef = 0.0;    // ||e + e_bar||^2
  double proxy_saef = 0.0;  // (1/K) sum_k ||e + e_bar - e^(k)||^2
};
ErrorProxies error_proxies(std::span<const WorkerState> workers, const ServerState& server);

struct MismatchSample {
  long t = 0;
  /// Monte-Carlo epsilon_t on the iteration's own minibatches; NaN when not sampled.
  double eps_hat = 0.0;
  double proxy_ef = 0.0;
  double proxy_saef = 0.0;
  bool sampled = false;
};

/// (1/K) sum_k ||grad f(aux; xi_k) - grad_at_query_k||^2, where
/// grad_at_query_k = grad f(q_k; xi_k) was already computed by the step.
double gradient_mismatch(const Objective& obj, std::span<const double> aux,
                         std::span<const ParamVector> grads_at_query,
                         std::span<const Minibatch> batches);

/// epsilon_t from pre-step state: q_k = x - e^(k) for saef, x for ef/vanilla.
MismatchSample mismatch_estimate(std::span<const WorkerState> workers, const ServerState& server,
                                 const Objective& obj, FeedbackMode mode,
                                 std::span<const Minibatch> batches, long t = 0);

struct TrajectoryRecord {
  long t = 0;
  double eta = 0.0;
  double train_loss = 0.0;
  double aux_loss = 0.0;
  double grad_norm_sq = 0.0;
  double aux_grad_norm_sq = 0.0;
  MismatchSample mismatch;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::uint64_t averaging_bytes = 0;
};

// ------------------------------------------------------------ bound calculators

/// C = 2(1+d)(2-d)/(1-sqrt(1-d))^2 + (1+d)/d.
double lemma1_constant(double delta);
/// (1-d)/(1-sqrt(1-d))^2, the optimised Young's-inequality factor.
double error_growth_factor(double delta);
/// C (1-d)/(1-sqrt(1-d))^2 * eta_max^2 (M^2 + sigma^2) / (1-mu)^2.
double lemma1_bound(double delta, double eta_max, double mu, double M_sq, double sigma_sq);
/// h2(d) = (4/d^2)(1 + 16/d^2) - [3/4 + 2(1+d)(2-d)/(1-sqrt(1-d))^2 + (1+d)/d].
double corollary1_gap(double delta);

struct AppendixBounds {
  double worker_error = 0.0;      // E||e^(k)||^2
  double worker_deviation = 0.0;  // (1/K) sum ||e_bar - e^(k)||^2
  double server_error = 0.0;      // E||e||^2
  double mismatch_proxy = 0.0;    // (1/K) sum ||e + e_bar - e^(k)||^2
};

AppendixBounds appendix_error_bounds(double delta, double eta_max, double mu, std::size_t workers,
                                     double M_sq, double sigma_sq);

enum class TheoremKind { thm1, thm2, thm3_x, thm3_aux };
std::string_view to_string(TheoremKind kind);

struct TheoremInputs {
  double L = 0.0;
  double sigma_sq = 0.0;
  double M_sq = 0.0;
  double eta = 0.0;
  double mu = 0.0;
  long T = 1;
  std::size_t K = 1;
  double delta = 1.0;
  double f0_minus_fstar = 0.0;
};

struct BoundReport {
  TheoremKind kind = TheoremKind::thm2;
  bool applicable = true;
  std::string reason;
  double C_const = 0.0;
  double lemma1_rhs = 0.0;
  double alpha = 0.0;
  double optimization_term = 0.0;
  double variance_term = 0.0;
  double compression_term = 0.0;
  double theorem_rhs = 0.0;
  std::optional<double> lhs_measured;
  std::optional<bool> holds;
};

/// Right-hand side of the chosen convergence theorem. When the learning-rate
/// precondition fails the report is marked inapplicable and makes no claim.
BoundReport theorem_bound(TheoremKind kind, const TheoremInputs& in,
                          std::optional<double> lhs_measured = std::nullopt);

struct Proposition1Estimate {
  bool applicable = false;
  double var_e = 0.0;      // (1/K) sum ||e^(k) - e_bar||^2
  double mean_e_sq = 0.0;  // ||e_bar||^2
  bool satisfied = false;  // var_e <= mean_e_sq
};

/// Averages the across-worker variance and the squared mean over a window
/// of snapshots, each holding every worker's error. Needs K >= 2.
Proposition1Estimate proposition1_condition(std::span<const std::vector<ParamVector>> window);
Proposition1Estimate proposition1_condition(std::span<const WorkerState> workers);

}  // namespace saef
