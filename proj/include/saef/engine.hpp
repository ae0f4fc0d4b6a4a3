#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saef/compressors.hpp"
#include "saef/diagnostics.hpp"
#include "saef/linalg.hpp"
#include "saef/models.hpp"
#include "saef/state.hpp"

namespace saef {

struct WorkerStepResult {
  ParamVector delta;
  /// Where the stochastic gradient was taken: x - e (saef) or x (ef).
  ParamVector query_point;
  ParamVector gradient;
};

/// Step-ahead branch. Updates w.m; leaves w.x and w.e untouched.
WorkerStepResult worker_step_saef(WorkerState& w, double eta, double mu, const Objective& obj,
                                  const Minibatch& batch, const FaultInjection& fault = {});
/// Plain error-feedback branch. Updates w.m; leaves w.x and w.e untouched.
WorkerStepResult worker_step_ef(WorkerState& w, double eta, double mu, const Objective& obj,
                                const Minibatch& batch);

struct LocalCompression {
  CompressedMessage msg;
  ParamVector new_e;
};
LocalCompression local_compress(std::span<const double> delta, const CompressorSpec& spec,
                                const BlockPartition* partition);

/// Averages the decoded messages in index order on top of s.e and returns
/// what the server broadcasts. Double-way compresses and keeps the residual
/// in s.e; single-way sends the aggregate at full precision.
CompressedMessage server_aggregate(std::span<const CompressedMessage> msgs, ServerState& s,
                                   const CompressorSpec& spec, const BlockPartition* partition,
                                   CompressionMode mode);

/// x <- x - broadcast, applied to the pre-iteration x.
void worker_reupdate(WorkerState& w, const CompressedMessage& broadcast);

/// Replaces each e^(k) with the mean; returns the all-reduce cost K * 8 * d.
std::uint64_t error_average(std::span<WorkerState> workers);

/// Partition to hand to the compressor: the objective's blocks when
/// layer-wise, else none.
const BlockPartition* compressor_partition(const CompressorSpec& spec, const Objective& obj);

struct IterationDetail {
  long t = 0;
  double eta = 0.0;
  bool averaged = false;
  /// x~_t after any averaging at the start of the iteration.
  ParamVector aux_before;
  /// x~_{t+1}, after the re-update.
  ParamVector aux_after;
  /// sum_k m^(k)_{t+1}, accumulated in worker order.
  ParamVector momentum_sum;
  ErrorProxies proxies;
  std::vector<Minibatch> batches;
  std::vector<ParamVector> query_points;
  std::vector<ParamVector> gradients;
  /// Filled on sampled iterations.
  std::optional<double> eps_hat;
  TrajectoryRecord record;
};

class Simulator {
 public:
  /// Validates the config and sets every worker to x0 with zero e and m.
  Simulator(RunConfig config, std::shared_ptr<const Objective> objective);

  /// Runs iteration `iteration()`. Throws NonFiniteError if any state
  /// becomes non-finite; the state is then left mid-iteration.
  IterationDetail step();

  long iteration() const { return t_; }
  bool done() const { return t_ >= config_.iterations; }
  const RunConfig& config() const { return config_; }
  const Objective& objective() const { return *objective_; }
  std::span<const WorkerState> workers() const { return workers_; }
  const ServerState& server() const { return server_; }
  const CommLedger& ledger() const { return ledger_; }
  const ParamVector& x() const { return workers_.front().x; }
  const BlockPartition* partition() const { return partition_; }

 private:
  WorkerStepResult step_worker(std::size_t k, double eta, const Minibatch& batch);
  void run_workers(double eta, const std::vector<Minibatch>& batches,
                   std::vector<WorkerStepResult>& out);

  RunConfig config_;
  std::shared_ptr<const Objective> objective_;
  const BlockPartition* partition_ = nullptr;
  std::vector<WorkerState> workers_;
  ServerState server_;
  CommLedger ledger_;
  long t_ = 0;
};

/// Called after each completed iteration, with the engine quiescent.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_iteration(const Simulator& sim, const IterationDetail& detail) = 0;
};

struct RunResult {
  std::vector<TrajectoryRecord> records;
  ParamVector final_x;
  /// F(x0), the starting loss.
  double initial_loss = 0.0;
  CommLedger ledger;
  bool aborted = false;
  std::string abort_reason;
  long abort_iteration = -1;
};

/// Runs config.iterations iterations. A non-finite state stops the run and
/// returns the records gathered so far.
RunResult run(const RunConfig& config, std::shared_ptr<const Objective> objective,
              std::span<RunObserver* const> observers = {});

}  // namespace saef
