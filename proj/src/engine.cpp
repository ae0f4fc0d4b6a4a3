#include "saef/engine.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>

namespace saef {

namespace {

WorkerStepResult momentum_step(WorkerState& w, ParamVector query, double eta, double mu,
                               const Objective& obj, const Minibatch& batch, double e_sign) {
  const std::size_t d = obj.dimension();
  require_same_length(w.x.size(), d, "worker step");
  require_same_length(w.e.size(), d, "worker step");
  require_same_length(w.m.size(), d, "worker step");

  WorkerStepResult r;
  r.gradient = ParamVector(d);
  obj.stochastic_gradient(query, batch, r.gradient.span());
  require_finite(r.gradient, "stochastic gradient");

  r.delta = ParamVector(d);
  for (std::size_t i = 0; i < d; ++i) {
    w.m[i] = mu * w.m[i] + r.gradient[i];
    const double x_local = query[i] - eta * w.m[i];
    r.delta[i] = (e_sign * w.e[i] + query[i]) - x_local;
  }
  require_finite(r.delta, "local model difference");
  r.query_point = std::move(query);
  return r;
}

}  // namespace

WorkerStepResult worker_step_saef(WorkerState& w, double eta, double mu, const Objective& obj,
                                  const Minibatch& batch, const FaultInjection& fault) {
  require_same_length(w.x.size(), w.e.size(), "worker step");
  ParamVector x_half = subtract(w.x, w.e);
  return momentum_step(w, std::move(x_half), eta, mu, obj, batch, fault.flip_delta_sign ? -1.0 : 1.0);
}

WorkerStepResult worker_step_ef(WorkerState& w, double eta, double mu, const Objective& obj,
                                const Minibatch& batch) {
  return momentum_step(w, w.x, eta, mu, obj, batch, 1.0);
}

LocalCompression local_compress(std::span<const double> delta, const CompressorSpec& spec,
                                const BlockPartition* partition) {
  LocalCompression out;
  out.msg = saef::apply(spec, delta, partition);
  out.new_e = subtract(delta, out.msg.decoded);
  return out;
}

CompressedMessage server_aggregate(std::span<const CompressedMessage> msgs, ServerState& s,
                                   const CompressorSpec& spec, const BlockPartition* partition,
                                   CompressionMode mode) {
  if (msgs.empty()) throw std::invalid_argument("server_aggregate needs at least one message");
  std::vector<ParamVector> decoded;
  decoded.reserve(msgs.size());
  for (const auto& m : msgs) {
    require_same_length(m.decoded.size(), s.e.size(), "server_aggregate");
    decoded.push_back(m.decoded);
  }
  const ParamVector avg = mean(decoded);
  ParamVector aggregate(avg.size());
  for (std::size_t i = 0; i < avg.size(); ++i) aggregate[i] = s.e[i] + avg[i];
  require_finite(aggregate, "server aggregate");

  CompressedMessage broadcast;
  if (mode == CompressionMode::double_way) {
    broadcast = saef::apply(spec, aggregate, partition);
    s.e = subtract(aggregate, broadcast.decoded);
  } else {
    broadcast.encoded_bytes = kFullPrecisionBytes * aggregate.size();
    broadcast.decoded = std::move(aggregate);
  }
  s.last_broadcast = broadcast;
  return broadcast;
}

void worker_reupdate(WorkerState& w, const CompressedMessage& broadcast) {
  require_same_length(w.x.size(), broadcast.decoded.size(), "worker_reupdate");
  for (std::size_t i = 0; i < w.x.size(); ++i) w.x[i] -= broadcast.decoded[i];
}

std::uint64_t error_average(std::span<WorkerState> workers) {
  if (workers.empty()) return 0;
  std::vector<ParamVector> es;
  es.reserve(workers.size());
  for (const auto& w : workers) es.push_back(w.e);
  const ParamVector e_bar = mean(es);
  for (auto& w : workers) w.e = e_bar;
  return static_cast<std::uint64_t>(workers.size()) * kFullPrecisionBytes * e_bar.size();
}

const BlockPartition* compressor_partition(const CompressorSpec& spec, const Objective& obj) {
  return spec.layerwise ? &obj.partition() : nullptr;
}

// ------------------------------------------------------------ Simulator

Simulator::Simulator(RunConfig config, std::shared_ptr<const Objective> objective)
    : config_(std::move(config)), objective_(std::move(objective)) {
  if (!objective_) throw std::invalid_argument("simulator needs an objective");
  config_.validate();
  if (config_.feedback == FeedbackMode::vanilla) config_.compressor = CompressorSpec::identity();
  partition_ = compressor_partition(config_.compressor, *objective_);

  const std::size_t d = objective_->dimension();
  ParamVector x0 = objective_->initial_point();
  require_same_length(x0.size(), d, "initial point");
  if (config_.init_perturbation > 0.0) {
    RngStream init = RngStream::derive(config_.seed, config_.workers);
    for (auto& v : x0) v += config_.init_perturbation * init.normal();
  }
  require_finite(x0, "initial point");

  workers_.reserve(config_.workers);
  for (std::size_t k = 0; k < config_.workers; ++k)
    workers_.push_back({x0, ParamVector(d), ParamVector(d), RngStream::derive(config_.seed, k)});
  server_.e = ParamVector(d);
}

WorkerStepResult Simulator::step_worker(std::size_t k, double eta, const Minibatch& batch) {
  auto& w = workers_[k];
  if (config_.feedback == FeedbackMode::saef)
    return worker_step_saef(w, eta, config_.momentum, *objective_, batch, config_.fault);
  return worker_step_ef(w, eta, config_.momentum, *objective_, batch);
}

void Simulator::run_workers(double eta, const std::vector<Minibatch>& batches,
                            std::vector<WorkerStepResult>& out) {
  const std::size_t K = workers_.size();
  const std::size_t n_threads = std::min(config_.threads, K);
  if (n_threads <= 1) {
    for (std::size_t k = 0; k < K; ++k) out[k] = step_worker(k, eta, batches[k]);
    return;
  }
  // Each worker owns its state and stream; results land in fixed slots.
  std::vector<std::exception_ptr> errors(n_threads);
  {
    std::vector<std::jthread> pool;
    pool.reserve(n_threads);
    for (std::size_t j = 0; j < n_threads; ++j) {
      pool.emplace_back([&, j] {
        try {
          for (std::size_t k = j; k < K; k += n_threads) out[k] = step_worker(k, eta, batches[k]);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

IterationDetail Simulator::step() {
  if (done()) throw std::logic_error("simulator already ran every iteration");
  const long t = t_;
  const std::size_t K = workers_.size();
  const Objective& obj = *objective_;

  IterationDetail det;
  det.t = t;
  det.eta = config_.lr.at(t);

  if (config_.averages_at(t)) {
    ledger_.averaging_bytes += error_average(workers_);
    det.averaged = true;
  }
  det.aux_before = auxiliary_variable(workers_, server_);
  det.proxies = error_proxies(workers_, server_);

  det.batches.reserve(K);
  for (auto& w : workers_) det.batches.push_back(obj.sample(w.rng, config_.batch_size));

  std::vector<WorkerStepResult> steps(K);
  run_workers(det.eta, det.batches, steps);

  det.momentum_sum = ParamVector(obj.dimension());
  for (const auto& w : workers_)
    for (std::size_t i = 0; i < w.m.size(); ++i) det.momentum_sum[i] += w.m[i];

  const bool sampled = config_.diag_every > 0 && t % config_.diag_every == 0;
  det.query_points.reserve(K);
  det.gradients.reserve(K);
  for (auto& s : steps) {
    det.query_points.push_back(std::move(s.query_point));
    det.gradients.push_back(std::move(s.gradient));
  }
  if (sampled) det.eps_hat = gradient_mismatch(obj, det.aux_before, det.gradients, det.batches);

  std::vector<CompressedMessage> msgs;
  msgs.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto lc = local_compress(steps[k].delta, config_.compressor, partition_);
    ledger_.uplink_bytes += lc.msg.encoded_bytes;
    workers_[k].e = std::move(lc.new_e);
    msgs.push_back(std::move(lc.msg));
  }

  const CompressedMessage broadcast =
      server_aggregate(msgs, server_, config_.compressor, partition_, config_.compression);
  ledger_.downlink_bytes += broadcast.encoded_bytes;
  for (auto& w : workers_) worker_reupdate(w, broadcast);
  require_finite(workers_.front().x, "parameters");

  det.aux_after = auxiliary_variable(workers_, server_);

  auto& rec = det.record;
  rec.t = t;
  rec.eta = det.eta;
  ParamVector g(obj.dimension());
  rec.train_loss = obj.loss_and_gradient(x(), g.span());
  rec.grad_norm_sq = l2_norm_sq(g);
  rec.aux_loss = obj.loss_and_gradient(det.aux_after, g.span());
  rec.aux_grad_norm_sq = l2_norm_sq(g);
  if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.aux_loss))
    throw NonFiniteError("loss became non-finite");
  rec.mismatch.t = t;
  rec.mismatch.sampled = sampled;
  rec.mismatch.eps_hat = sampled ? *det.eps_hat : std::numeric_limits<double>::quiet_NaN();
  rec.mismatch.proxy_ef = det.proxies.proxy_ef;
  rec.mismatch.proxy_saef = det.proxies.proxy_saef;
  rec.uplink_bytes = ledger_.uplink_bytes;
  rec.downlink_bytes = ledger_.downlink_bytes;
  rec.averaging_bytes = ledger_.averaging_bytes;

  ++t_;
  return det;
}

RunResult run(const RunConfig& config, std::shared_ptr<const Objective> objective,
              std::span<RunObserver* const> observers) {
  Simulator sim(config, std::move(objective));
  RunResult out;
  out.initial_loss = sim.objective().loss(sim.x());
  out.records.reserve(static_cast<std::size_t>(config.iterations));
  while (!sim.done()) {
    const long t = sim.iteration();
    try {
      IterationDetail det = sim.step();
      for (auto* o : observers) o->on_iteration(sim, det);
      out.records.push_back(std::move(det.record));
    } catch (const NonFiniteError& e) {
      out.aborted = true;
      out.abort_reason = e.what();
      out.abort_iteration = t;
      break;
    }
  }
  out.final_x = sim.x();
  out.ledger = sim.ledger();
  return out;
}

}  // namespace saef
