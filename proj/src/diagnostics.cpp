#include "saef/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace saef {

namespace {

std::vector<ParamVector> worker_errors(std::span<const WorkerState> workers) {
  std::vector<ParamVector> es;
  es.reserve(workers.size());
  for (const auto& w : workers) es.push_back(w.e);
  return es;
}

void require_workers(std::span<const WorkerState> workers) {
  if (workers.empty()) throw std::invalid_argument("no workers");
}

void require_delta(double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in (0, 1]");
}

void require_momentum(double mu) {
  if (!(mu >= 0.0 && mu < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
}

}  // namespace

ParamVector mean_worker_error(std::span<const WorkerState> workers) {
  require_workers(workers);
  return mean(worker_errors(workers));
}

ParamVector auxiliary_variable(std::span<const WorkerState> workers, const ServerState& server) {
  require_workers(workers);
  const ParamVector e_bar = mean_worker_error(workers);
  const ParamVector& x = workers.front().x;
  require_same_length(server.e.size(), x.size(), "auxiliary_variable");
  ParamVector aux(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) aux[i] = x[i] - (server.e[i] + e_bar[i]);
  return aux;
}

double worker_deviation(std::span<const WorkerState> workers) {
  require_workers(workers);
  const ParamVector e_bar = mean_worker_error(workers);
  double s = 0.0;
  for (const auto& w : workers)
    for (std::size_t i = 0; i < e_bar.size(); ++i) {
      const double r = e_bar[i] - w.e[i];
      s += r * r;
    }
  return s / static_cast<double>(workers.size());
}

double max_worker_divergence(std::span<const WorkerState> workers) {
  require_workers(workers);
  // Pairwise inf-norm max equals the per-coordinate spread (max - min).
  const std::size_t d = workers.front().x.size();
  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double lo = workers.front().x[i];
    double hi = lo;
    for (const auto& w : workers) {
      lo = std::min(lo, w.x[i]);
      hi = std::max(hi, w.x[i]);
    }
    worst = std::max(worst, hi - lo);
  }
  return worst;
}

ErrorProxies error_proxies(std::span<const WorkerState> workers, const ServerState& server) {
  require_workers(workers);
  const ParamVector e_bar = mean_worker_error(workers);
  ErrorProxies p;
  const std::size_t d = e_bar.size();
  for (std::size_t i = 0; i < d; ++i) {
    const double total = server.e[i] + e_bar[i];
    p.proxy_ef += total * total;
  }
  for (const auto& w : workers) {
    for (std::size_t i = 0; i < d; ++i) {
      const double r = server.e[i] + e_bar[i] - w.e[i];
      p.proxy_saef += r * r;
    }
  }
  p.proxy_saef /= static_cast<double>(workers.size());
  return p;
}

double gradient_mismatch(const Objective& obj, std::span<const double> aux,
                         std::span<const ParamVector> grads_at_query,
                         std::span<const Minibatch> batches) {
  require_same_length(grads_at_query.size(), batches.size(), "gradient_mismatch");
  if (batches.empty()) throw std::invalid_argument("gradient_mismatch needs at least one worker");
  ParamVector g_aux(obj.dimension());
  double s = 0.0;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    obj.stochastic_gradient(aux, batches[k], g_aux.span());
    for (std::size_t i = 0; i < g_aux.size(); ++i) {
      const double r = g_aux[i] - grads_at_query[k][i];
      s += r * r;
    }
  }
  return s / static_cast<double>(batches.size());
}

MismatchSample mismatch_estimate(std::span<const WorkerState> workers, const ServerState& server,
                                 const Objective& obj, FeedbackMode mode,
                                 std::span<const Minibatch> batches, long t) {
  require_same_length(workers.size(), batches.size(), "mismatch_estimate");
  const ParamVector aux = auxiliary_variable(workers, server);
  std::vector<ParamVector> grads;
  grads.reserve(workers.size());
  for (std::size_t k = 0; k < workers.size(); ++k) {
    const auto& w = workers[k];
    const ParamVector q = mode == FeedbackMode::saef ? subtract(w.x, w.e) : w.x;
    grads.push_back(obj.stochastic_gradient(q, batches[k]));
  }
  const auto proxies = error_proxies(workers, server);
  MismatchSample out;
  out.t = t;
  out.eps_hat = gradient_mismatch(obj, aux, grads, batches);
  out.proxy_ef = proxies.proxy_ef;
  out.proxy_saef = proxies.proxy_saef;
  out.sampled = true;
  return out;
}

// ------------------------------------------------------------ bounds

double lemma1_constant(double delta) {
  require_delta(delta);
  const double gap = 1.0 - std::sqrt(1.0 - delta);
  return 2.0 * (1.0 + delta) * (2.0 - delta) / (gap * gap) + (1.0 + delta) / delta;
}

double error_growth_factor(double delta) {
  require_delta(delta);
  const double gap = 1.0 - std::sqrt(1.0 - delta);
  return (1.0 - delta) / (gap * gap);
}

double lemma1_bound(double delta, double eta_max, double mu, double M_sq, double sigma_sq) {
  require_delta(delta);
  require_momentum(mu);
  const double base = eta_max * eta_max * (M_sq + sigma_sq) / ((1.0 - mu) * (1.0 - mu));
  return lemma1_constant(delta) * error_growth_factor(delta) * base;
}

double corollary1_gap(double delta) {
  require_delta(delta);
  const double d2 = delta * delta;
  const double ef_factor = (4.0 / d2) * (1.0 + 16.0 / d2);
  return ef_factor - (0.75 + lemma1_constant(delta));
}

AppendixBounds appendix_error_bounds(double delta, double eta_max, double mu, std::size_t workers,
                                     double M_sq, double sigma_sq) {
  require_delta(delta);
  require_momentum(mu);
  if (workers == 0) throw std::invalid_argument("workers must be >= 1");
  const double base = eta_max * eta_max * (M_sq + sigma_sq) / ((1.0 - mu) * (1.0 - mu));
  const double growth = error_growth_factor(delta);
  const double gap = 1.0 - std::sqrt(1.0 - delta);
  const double k = static_cast<double>(workers);
  AppendixBounds b;
  b.worker_error = growth * base;
  b.worker_deviation = (k - 1.0) / k * growth * base;
  b.server_error = growth * 2.0 * (2.0 - delta) / (gap * gap) * base;
  b.mismatch_proxy = lemma1_constant(delta) * growth * base;
  return b;
}

std::string_view to_string(TheoremKind kind) {
  switch (kind) {
    case TheoremKind::thm1: return "thm1";
    case TheoremKind::thm2: return "thm2";
    case TheoremKind::thm3_x: return "thm3_x";
    case TheoremKind::thm3_aux: return "thm3_aux";
  }
  return "?";
}

BoundReport theorem_bound(TheoremKind kind, const TheoremInputs& in,
                          std::optional<double> lhs_measured) {
  require_delta(in.delta);
  require_momentum(in.mu);
  if (in.T < 1 || in.K < 1) throw std::invalid_argument("theorem_bound needs T >= 1 and K >= 1");

  BoundReport r;
  r.kind = kind;
  r.lhs_measured = lhs_measured;
  r.C_const = lemma1_constant(in.delta);
  r.lemma1_rhs = lemma1_bound(in.delta, in.eta, in.mu, in.M_sq, in.sigma_sq);

  const double eta = in.eta;
  const double L = in.L;
  const double mu = in.mu;
  const double T = static_cast<double>(in.T);
  const double K = static_cast<double>(in.K);
  const double growth = error_growth_factor(in.delta);
  const double noise = in.M_sq + in.sigma_sq;
  const double one_m = 1.0 - mu;
  r.alpha = 1.0 - eta * L / one_m - 2.0 * mu * mu * eta * eta * L * L / std::pow(one_m, 4);

  auto inapplicable = [&](std::string why) {
    r.applicable = false;
    r.reason = std::move(why);
    r.holds.reset();
    return r;
  };
  if (!(eta > 0.0)) return inapplicable("learning rate must be positive");

  switch (kind) {
    case TheoremKind::thm1: {
      if (mu != 0.0) return inapplicable("thm1 covers momentum-free SAEF-SGD (mu = 0)");
      if (!(eta < 3.0 / (4.0 * L))) return inapplicable("thm1 needs eta < 3/(4L)");
      const double den = 3.0 - 4.0 * eta * L;
      r.optimization_term = 4.0 * in.f0_minus_fstar / (eta * den * T);
      r.variance_term = 2.0 * eta * L * in.sigma_sq / (den * K);
      r.compression_term = r.C_const * growth * 4.0 * (eta * L + 1.0) * eta * eta * L * L / den * noise;
      break;
    }
    case TheoremKind::thm2: {
      if (mu != 0.0) return inapplicable("thm2 covers momentum-free SAEF-SGD (mu = 0)");
      if (!(eta < 3.0 / (2.0 * L))) return inapplicable("thm2 needs eta < 3/(2L)");
      const double den = 3.0 - 2.0 * eta * L;
      r.optimization_term = 4.0 * in.f0_minus_fstar / (eta * den * T);
      r.variance_term = 4.0 * eta * L * in.sigma_sq / (den * K);
      r.compression_term = (2.0 + 8.0 * r.C_const / den) * growth * eta * eta * L * L * noise;
      break;
    }
    case TheoremKind::thm3_x:
    case TheoremKind::thm3_aux: {
      if (!(r.alpha > 0.0)) return inapplicable("thm3 needs alpha > 0");
      const double a = r.alpha;
      r.optimization_term = 4.0 * one_m * in.f0_minus_fstar / (a * eta * T);
      r.variance_term = 2.0 * (1.0 + 2.0 * mu * mu * eta * L / std::pow(one_m, 3)) * eta * L *
                        in.sigma_sq / (a * one_m * K);
      const double common = growth * eta * eta * L * L * noise / (one_m * one_m);
      r.compression_term = kind == TheoremKind::thm3_x
                               ? (4.0 * r.C_const + 2.0 * a) * common / a
                               : (4.0 / a + 2.0) * r.C_const * common;
      break;
    }
  }
  r.theorem_rhs = r.optimization_term + r.variance_term + r.compression_term;
  if (lhs_measured) r.holds = *lhs_measured <= r.theorem_rhs;
  return r;
}

// ------------------------------------------------------------ worker error spread

Proposition1Estimate proposition1_condition(std::span<const std::vector<ParamVector>> window) {
  Proposition1Estimate out;
  if (window.empty() || window.front().size() < 2) return out;
  out.applicable = true;
  for (const auto& errors : window) {
    const ParamVector e_bar = mean(errors);
    double var = 0.0;
    for (const auto& e : errors)
      for (std::size_t i = 0; i < e.size(); ++i) var += (e[i] - e_bar[i]) * (e[i] - e_bar[i]);
    out.var_e += var / static_cast<double>(errors.size());
    out.mean_e_sq += l2_norm_sq(e_bar);
  }
  out.var_e /= static_cast<double>(window.size());
  out.mean_e_sq /= static_cast<double>(window.size());
  out.satisfied = out.var_e <= out.mean_e_sq;
  return out;
}

Proposition1Estimate proposition1_condition(std::span<const WorkerState> workers) {
  const std::vector<ParamVector> snapshot = worker_errors(workers);
  return proposition1_condition(std::span<const std::vector<ParamVector>>(&snapshot, 1));
}

}  // namespace saef
