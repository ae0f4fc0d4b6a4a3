#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "saef/engine.hpp"
#include "saef/models.hpp"
#include "saef/monitors.hpp"

namespace saef {

/// Bad configuration; `key()` is the dotted key path at fault (may be empty).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct ObjectiveSpec {
  std::string kind = "quadratic";  // quadratic | logistic | mlp
  std::uint64_t seed = 0;
  // quadratic
  std::size_t dimension = 100;
  double condition_number = 10.0;
  double noise_std = 0.1;
  // logistic / mlp: a dataset file, or synthetic two-Gaussian data
  std::filesystem::path data_path;
  DatasetFormat data_format = DatasetFormat::csv;
  std::optional<std::size_t> data_features;
  std::size_t data_n = 2000;
  std::size_t data_p = 50;
  double data_separation = 2.0;
  double data_condition_number = 1.0;
  double l2 = 1e-4;
  std::size_t hidden = 16;
};

struct ExperimentConfig {
  ObjectiveSpec objective;
  RunConfig run;
  std::optional<long> epochs;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "out";
  std::size_t proposition1_window = 50;
  // Sweep axes; empty means "use the run value".
  std::vector<double> sweep_topk_fraction;
  std::vector<std::optional<long>> sweep_averaging_period;
  std::vector<FeedbackMode> sweep_feedback;
};

/// Parses the flat `section.key = value` format. `base_dir` resolves relative
/// dataset paths. Throws ConfigError naming the offending key.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Keys accepted by parse_config, for documentation and error hints.
const std::vector<std::string>& known_config_keys();

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

struct PlannedRun {
  std::string name;
  /// Axis values without the seed; runs sharing this form one summary group.
  std::string group;
  std::map<std::string, std::string> axes;
  RunConfig config;
};

/// Cartesian product of the sweep axes and seeds, validated. Throws
/// ConfigError if any run is invalid.
std::vector<PlannedRun> plan_runs(const ExperimentConfig& cfg, const ObjectiveBundle& bundle);

ObjectiveBundle build_objective(const ObjectiveSpec& spec, std::size_t batch_size);

/// ceil(n / (K * batch)).
long iterations_per_epoch(std::size_t n, std::size_t workers, std::size_t batch_size);

/// Top-K fraction for a run with averaging period p whose total bytes over T
/// iterations match the p = infinity baseline at fraction f0 within 1%.
/// Returns nullopt when no k in [1, d] gets that close.
std::optional<double> match_bytes_fraction(double baseline_fraction, std::size_t d,
                                           std::size_t workers, long iterations, long period,
                                           CompressionMode mode);

struct RunOutcome {
  PlannedRun plan;
  RunResult result;
  std::optional<Violation> invariant_violation;
  double worst_aux_ratio = 0.0;
  ErrorNormMonitor::Sample error_maxima{};
  double M_sq_hat = 0.0;
  std::vector<LemmaCheck> lemma_checks;
  double delta = 1.0;
  Proposition1Estimate proposition1;
  double proposition1_satisfied_fraction = 0.0;
};

RunOutcome execute_run(const PlannedRun& plan, const ObjectiveBundle& bundle,
                       std::size_t proposition1_window = 50);

/// Runs every plan, at most `max_parallel` at a time. Results keep plan order.
std::vector<RunOutcome> execute_runs(const std::vector<PlannedRun>& plans,
                                     const ObjectiveBundle& bundle, std::size_t max_parallel,
                                     std::size_t proposition1_window = 50);

/// Parallelism cap: SAEF_SIM_THREADS if set, else hardware concurrency.
std::size_t sweep_parallelism();

// ------------------------------------------------------------ output

inline constexpr const char* kCsvHeader =
    "t,eta,train_loss,aux_loss,grad_norm_sq,eps_hat,proxy_ef,proxy_saef,uplink_bytes,"
    "downlink_bytes,averaging_bytes";

/// Shortest form is not used: always 17 significant digits.
std::string format_double(double v);
std::string trajectory_csv(const std::vector<TrajectoryRecord>& records);

struct CsvRow {
  long t = 0;
  double eta = 0.0;
  double train_loss = 0.0;
  double aux_loss = 0.0;
  double grad_norm_sq = 0.0;
  double eps_hat = 0.0;
  double proxy_ef = 0.0;
  double proxy_saef = 0.0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::uint64_t averaging_bytes = 0;
};
std::vector<CsvRow> read_trajectory_csv(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Summary JSON text aggregating the outcomes by group.
std::string summary_json(const ExperimentConfig& cfg, const ObjectiveBundle& bundle,
                         const std::vector<RunOutcome>& outcomes);
std::string run_meta_json(const ExperimentConfig& cfg, const RunOutcome& outcome);

/// Comparison JSON for trajectory CSVs; the first is the baseline. Throws
/// std::invalid_argument when the runs are incompatible.
std::string compare_json(const std::vector<std::filesystem::path>& csv_paths);

struct CommandOverrides {
  std::optional<std::filesystem::path> out;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<long> diag_every;
};

void apply_overrides(ExperimentConfig& cfg, const CommandOverrides& o);

/// `run`: executes the sweep and writes CSVs, meta sidecars and summary.json.
/// Returns 0, or 3 if any run aborted.
int command_run(const std::filesystem::path& config_path, const CommandOverrides& o,
                std::ostream& log);
/// `check-bounds`: 0 iff every invariant and lemma bound holds.
int command_check_bounds(const std::filesystem::path& config_path, const CommandOverrides& o,
                         std::ostream& log);

struct GenDataOptions {
  std::size_t n = 0;
  std::size_t p = 0;
  std::uint64_t seed = 0;
  DatasetFormat format = DatasetFormat::csv;
  double separation = 2.0;
  double condition_number = 1.0;
  std::filesystem::path out;
};
void command_gen_data(const GenDataOptions& o);

}  // namespace saef
