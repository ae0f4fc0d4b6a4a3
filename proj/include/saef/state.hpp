#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "saef/compressors.hpp"
#include "saef/linalg.hpp"
#include "saef/rng.hpp"

namespace saef {

enum class FeedbackMode { vanilla, ef, saef };
enum class CompressionMode { single_way, double_way };
enum class AveragingScope { saef_only, both };

std::string_view to_string(FeedbackMode mode);
std::string_view to_string(CompressionMode mode);
std::string_view to_string(AveragingScope scope);
FeedbackMode parse_feedback_mode(std::string_view name);
CompressionMode parse_compression_mode(std::string_view name);
AveragingScope parse_averaging_scope(std::string_view name);

/// Piecewise-constant learning rate: entry (start, eta) applies from
/// iteration `start` until the next entry. The first entry starts at 0.
class LrSchedule {
 public:
  struct Piece {
    long start;
    double eta;
    friend bool operator==(const Piece&, const Piece&) = default;
  };

  LrSchedule() = default;
  explicit LrSchedule(double eta) : pieces_{{0, eta}} {}
  explicit LrSchedule(std::vector<Piece> pieces);

  double at(long t) const;
  double max_eta() const;
  bool is_constant() const { return pieces_.size() == 1; }
  const std::vector<Piece>& pieces() const { return pieces_; }

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;

 private:
  std::vector<Piece> pieces_{{0, 0.1}};
};

/// Test-only corruptions used to show that the invariant checks bite.
struct FaultInjection {
  /// Replaces Delta = e + x_half - x_local with -e + x_half - x_local in the
  /// step-ahead branch.
  bool flip_delta_sign = false;
  friend bool operator==(const FaultInjection&, const FaultInjection&) = default;
};

struct RunConfig {
  std::size_t workers = 1;
  long iterations = 1;
  LrSchedule lr{0.1};
  double momentum = 0.0;
  FeedbackMode feedback = FeedbackMode::saef;
  CompressionMode compression = CompressionMode::double_way;
  CompressorSpec compressor;
  /// nullopt means p = infinity (no error averaging).
  std::optional<long> averaging_period;
  AveragingScope averaging_scope = AveragingScope::saef_only;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  /// Iterations between gradient-mismatch samples; 0 disables them.
  long diag_every = 10;
  /// Worker-step parallelism inside one run; results do not depend on it.
  std::size_t threads = 1;
  /// Standard deviation of a perturbation of x0 drawn from the init stream.
  double init_perturbation = 0.0;
  FaultInjection fault;

  /// Throws std::invalid_argument describing the first inconsistent field.
  void validate() const;
  bool averages_at(long t) const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct WorkerState {
  ParamVector x;
  ParamVector e;
  ParamVector m;
  RngStream rng;
};

struct ServerState {
  ParamVector e;
  CompressedMessage last_broadcast;
};

struct CommLedger {
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::uint64_t averaging_bytes = 0;

  std::uint64_t total() const { return uplink_bytes + downlink_bytes + averaging_bytes; }
  friend bool operator==(const CommLedger&, const CommLedger&) = default;
};

}  // namespace saef
