#include "saef/monitors.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace saef {

void InvariantMonitor::flag(std::string quantity, long t, double measured, double limit) {
  if (!first_violation_) first_violation_ = Violation{std::move(quantity), t, measured, limit};
}

void InvariantMonitor::on_iteration(const Simulator& sim, const IterationDetail& det) {
  ++checked_;
  const auto workers = sim.workers();

  const double div = max_worker_divergence(workers);
  worst_divergence_ = std::max(worst_divergence_, div);
  if (div != 0.0) flag("worker_divergence", det.t, div, 0.0);

  const double K = static_cast<double>(workers.size());
  double residual = 0.0;
  for (std::size_t i = 0; i < det.aux_after.size(); ++i) {
    const double predicted = det.aux_before[i] - det.eta / K * det.momentum_sum[i];
    residual = std::max(residual, std::abs(det.aux_after[i] - predicted));
  }
  const double scale = 1.0 + linf_norm(det.aux_before);
  worst_aux_ratio_ = std::max(worst_aux_ratio_, residual / scale);
  if (!(residual <= kAuxTolerance * scale))
    flag("aux_recursion_residual", det.t, residual, kAuxTolerance * scale);

  if (sim.config().compression == CompressionMode::single_way) {
    const double s = linf_norm(sim.server().e);
    if (s != 0.0) flag("single_way_server_error", det.t, s, 0.0);
  }
}

void ErrorNormMonitor::on_iteration(const Simulator& sim, const IterationDetail& det) {
  const auto workers = sim.workers();
  const ServerState& server = sim.server();
  Sample s{det.t, 0.0, 0.0, 0.0, 0.0};
  for (const auto& w : workers) s.worker_error = std::max(s.worker_error, l2_norm_sq(w.e));
  s.worker_deviation = worker_deviation(workers);
  s.server_error = l2_norm_sq(server.e);
  s.mismatch_proxy = error_proxies(workers, server).proxy_saef;
  samples_.push_back(s);

  if (track_M_) {
    const Objective& obj = sim.objective();
    for (const auto& q : det.query_points) M_sq_hat_ = std::max(M_sq_hat_, l2_norm_sq(obj.full_gradient(q)));
    M_sq_hat_ = std::max(M_sq_hat_, det.record.grad_norm_sq);
  }
}

ErrorNormMonitor::Sample ErrorNormMonitor::maxima() const {
  Sample m{-1, 0.0, 0.0, 0.0, 0.0};
  for (const auto& s : samples_) {
    m.worker_error = std::max(m.worker_error, s.worker_error);
    m.worker_deviation = std::max(m.worker_deviation, s.worker_deviation);
    m.server_error = std::max(m.server_error, s.server_error);
    m.mismatch_proxy = std::max(m.mismatch_proxy, s.mismatch_proxy);
  }
  return m;
}

std::vector<LemmaCheck> check_lemma_bounds(const ErrorNormMonitor& monitor,
                                           const AppendixBounds& bounds) {
  using Field = double ErrorNormMonitor::Sample::*;
  struct Item {
    const char* name;
    Field field;
    double rhs;
  };
  const Item items[] = {
      {"worker_error", &ErrorNormMonitor::Sample::worker_error, bounds.worker_error},
      {"worker_deviation", &ErrorNormMonitor::Sample::worker_deviation, bounds.worker_deviation},
      {"server_error", &ErrorNormMonitor::Sample::server_error, bounds.server_error},
      {"mismatch_proxy", &ErrorNormMonitor::Sample::mismatch_proxy, bounds.mismatch_proxy},
  };
  std::vector<LemmaCheck> out;
  for (const auto& item : items) {
    LemmaCheck c{item.name, 0.0, item.rhs, true, -1};
    for (const auto& s : monitor.samples()) {
      const double v = s.*item.field;
      c.measured_max = std::max(c.measured_max, v);
      if (c.first_exceed < 0 && !(v <= item.rhs)) {
        c.first_exceed = s.t;
        c.holds = false;
      }
    }
    out.push_back(c);
  }
  return out;
}

void Proposition1Tracker::on_iteration(const Simulator& sim, const IterationDetail&) {
  const auto workers = sim.workers();
  if (workers.size() < 2 || window_ == 0) return;
  std::vector<ParamVector> es;
  es.reserve(workers.size());
  for (const auto& w : workers) es.push_back(w.e);
  snapshots_.push_back(std::move(es));
  if (snapshots_.size() > window_) snapshots_.pop_front();
  const auto est = current();
  ++evaluated_;
  if (est.satisfied) ++satisfied_;
}

Proposition1Estimate Proposition1Tracker::current() const {
  const std::vector<std::vector<ParamVector>> window(snapshots_.begin(), snapshots_.end());
  return proposition1_condition(std::span<const std::vector<ParamVector>>(window));
}

double Proposition1Tracker::satisfied_fraction() const {
  return evaluated_ == 0 ? 0.0 : static_cast<double>(satisfied_) / static_cast<double>(evaluated_);
}

}  // namespace saef
