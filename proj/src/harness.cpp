#include "saef/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace saef {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = s.find(',');
    const auto item = trim(s.substr(0, pos));
    if (!item.empty()) out.push_back(item);
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + 1);
  }
  return out;
}

double to_double(const std::string& key, std::string_view v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end || !std::isfinite(out))
    throw ConfigError(key, "expected a number, got '" + std::string(v) + "'");
  return out;
}

long to_long(const std::string& key, std::string_view v) {
  long out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end)
    throw ConfigError(key, "expected an integer, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, std::string_view v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end)
    throw ConfigError(key, "expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

std::size_t to_size(const std::string& key, std::string_view v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

bool to_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + std::string(v) + "'");
}

std::optional<long> to_period(const std::string& key, std::string_view v) {
  if (v == "inf" || v == "infinity" || v == "none") return std::nullopt;
  const long p = to_long(key, v);
  if (p < 1) throw ConfigError(key, "averaging period must be >= 1 or inf");
  return p;
}

template <class F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

LrSchedule to_schedule(const std::string& key, std::string_view v) {
  if (v.find(':') == std::string_view::npos) {
    const double eta = to_double(key, v);
    return wrap(key, [&] { return LrSchedule(std::vector<LrSchedule::Piece>{{0, eta}}); });
  }
  std::vector<LrSchedule::Piece> pieces;
  for (auto item : split_list(v)) {
    const auto colon = item.find(':');
    if (colon == std::string_view::npos)
      throw ConfigError(key, "schedule entries look like start:eta");
    pieces.push_back({to_long(key, trim(item.substr(0, colon))),
                      to_double(key, trim(item.substr(colon + 1)))});
  }
  return wrap(key, [&] { return LrSchedule(std::move(pieces)); });
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, std::string_view)>;

struct FieldTable {
  std::vector<std::string> order;
  std::unordered_map<std::string, Setter> setters;

  void add(std::string key, Setter s) {
    order.push_back(key);
    setters.emplace(std::move(key), std::move(s));
  }
};

const FieldTable& field_table() {
  static const FieldTable table = [] {
    FieldTable t;
    using C = ExperimentConfig;
    using K = const std::string&;
    using V = std::string_view;
    t.add("objective.kind", [](C& c, K, V v) { c.objective.kind = std::string(v); });
    t.add("objective.seed", [](C& c, K k, V v) { c.objective.seed = to_u64(k, v); });
    t.add("objective.dimension", [](C& c, K k, V v) { c.objective.dimension = to_size(k, v); });
    t.add("objective.condition_number",
          [](C& c, K k, V v) { c.objective.condition_number = to_double(k, v); });
    t.add("objective.noise_std", [](C& c, K k, V v) { c.objective.noise_std = to_double(k, v); });
    t.add("objective.l2", [](C& c, K k, V v) { c.objective.l2 = to_double(k, v); });
    t.add("objective.hidden", [](C& c, K k, V v) { c.objective.hidden = to_size(k, v); });
    t.add("objective.data.path", [](C& c, K, V v) { c.objective.data_path = std::string(v); });
    t.add("objective.data.format", [](C& c, K k, V v) {
      c.objective.data_format = wrap(k, [&] { return parse_dataset_format(v); });
    });
    t.add("objective.data.features",
          [](C& c, K k, V v) { c.objective.data_features = to_size(k, v); });
    t.add("objective.data.n", [](C& c, K k, V v) { c.objective.data_n = to_size(k, v); });
    t.add("objective.data.p", [](C& c, K k, V v) { c.objective.data_p = to_size(k, v); });
    t.add("objective.data.separation",
          [](C& c, K k, V v) { c.objective.data_separation = to_double(k, v); });
    t.add("objective.data.condition_number",
          [](C& c, K k, V v) { c.objective.data_condition_number = to_double(k, v); });

    t.add("run.workers", [](C& c, K k, V v) { c.run.workers = to_size(k, v); });
    t.add("run.iterations", [](C& c, K k, V v) { c.run.iterations = to_long(k, v); });
    t.add("run.epochs", [](C& c, K k, V v) { c.epochs = to_long(k, v); });
    t.add("run.lr", [](C& c, K k, V v) { c.run.lr = to_schedule(k, v); });
    t.add("run.momentum", [](C& c, K k, V v) { c.run.momentum = to_double(k, v); });
    t.add("run.feedback", [](C& c, K k, V v) {
      c.run.feedback = wrap(k, [&] { return parse_feedback_mode(v); });
    });
    t.add("run.compression", [](C& c, K k, V v) {
      c.run.compression = wrap(k, [&] { return parse_compression_mode(v); });
    });
    t.add("run.averaging_period", [](C& c, K k, V v) { c.run.averaging_period = to_period(k, v); });
    t.add("run.averaging_scope", [](C& c, K k, V v) {
      c.run.averaging_scope = wrap(k, [&] { return parse_averaging_scope(v); });
    });
    t.add("run.batch_size", [](C& c, K k, V v) { c.run.batch_size = to_size(k, v); });
    t.add("run.threads", [](C& c, K k, V v) { c.run.threads = to_size(k, v); });
    t.add("run.init_perturbation",
          [](C& c, K k, V v) { c.run.init_perturbation = to_double(k, v); });

    t.add("compressor.kind", [](C& c, K k, V v) {
      c.run.compressor.kind = wrap(k, [&] { return parse_compressor_kind(v); });
    });
    t.add("compressor.topk_fraction",
          [](C& c, K k, V v) { c.run.compressor.topk_fraction = to_double(k, v); });
    t.add("compressor.layerwise",
          [](C& c, K k, V v) { c.run.compressor.layerwise = to_bool(k, v); });

    t.add("fault.flip_delta_sign",
          [](C& c, K k, V v) { c.run.fault.flip_delta_sign = to_bool(k, v); });

    t.add("seeds", [](C& c, K k, V v) { c.seeds = wrap(k, [&] { return parse_seed_list(v); }); });
    t.add("diag_every", [](C& c, K k, V v) { c.run.diag_every = to_long(k, v); });
    t.add("output.dir", [](C& c, K, V v) { c.output_dir = std::string(v); });
    t.add("diagnostics.proposition1_window",
          [](C& c, K k, V v) { c.proposition1_window = to_size(k, v); });

    t.add("sweep.topk_fraction", [](C& c, K k, V v) {
      c.sweep_topk_fraction.clear();
      for (auto item : split_list(v)) c.sweep_topk_fraction.push_back(to_double(k, item));
    });
    t.add("sweep.averaging_period", [](C& c, K k, V v) {
      c.sweep_averaging_period.clear();
      for (auto item : split_list(v)) c.sweep_averaging_period.push_back(to_period(k, item));
    });
    t.add("sweep.feedback", [](C& c, K k, V v) {
      c.sweep_feedback.clear();
      for (auto item : split_list(v))
        c.sweep_feedback.push_back(wrap(k, [&] { return parse_feedback_mode(item); }));
    });
    return t;
  }();
  return table;
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string compressor_tag(const CompressorSpec& spec) {
  std::string tag;
  switch (spec.kind) {
    case CompressorKind::identity: tag = "identity"; break;
    case CompressorKind::sign_scaled: tag = "sign"; break;
    case CompressorKind::topk: tag = "topk" + shortest(spec.topk_fraction.value_or(0.0)); break;
  }
  if (spec.layerwise) tag += "-lw";
  return tag;
}

std::string period_tag(const std::optional<long>& p) { return p ? std::to_string(*p) : "inf"; }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json stats(const std::vector<double>& v) {
  return {{"mean", mean_of(v)}, {"std", std_of(v)}, {"values", v}};
}

/// NaN and infinities have no JSON form; emit null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json objective_json(const ObjectiveSpec& s) {
  json j{{"kind", s.kind}, {"seed", s.seed}};
  if (s.kind == "quadratic") {
    j["dimension"] = s.dimension;
    j["condition_number"] = s.condition_number;
    j["noise_std"] = s.noise_std;
  } else {
    if (!s.data_path.empty()) {
      j["data_path"] = s.data_path.string();
      j["data_format"] = s.data_format == DatasetFormat::csv ? "csv" : "libsvm";
    } else {
      j["data_n"] = s.data_n;
      j["data_p"] = s.data_p;
      j["data_separation"] = s.data_separation;
      j["data_condition_number"] = s.data_condition_number;
    }
    if (s.kind == "logistic") j["l2"] = s.l2;
    if (s.kind == "mlp") j["hidden"] = s.hidden;
  }
  return j;
}

json run_config_json(const RunConfig& r) {
  json lr = json::array();
  for (const auto& p : r.lr.pieces()) lr.push_back({p.start, p.eta});
  json comp{{"kind", std::string(to_string(r.compressor.kind))},
            {"layerwise", r.compressor.layerwise}};
  if (r.compressor.topk_fraction) comp["topk_fraction"] = *r.compressor.topk_fraction;
  return {{"workers", r.workers},
          {"iterations", r.iterations},
          {"lr", lr},
          {"momentum", r.momentum},
          {"feedback", std::string(to_string(r.feedback))},
          {"compression", std::string(to_string(r.compression))},
          {"compressor", comp},
          {"averaging_period", r.averaging_period ? json(*r.averaging_period) : json("inf")},
          {"averaging_scope", std::string(to_string(r.averaging_scope))},
          {"batch_size", r.batch_size},
          {"seed", r.seed},
          {"diag_every", r.diag_every},
          {"init_perturbation", r.init_perturbation},
          {"flip_delta_sign", r.fault.flip_delta_sign}};
}

json constants_json(const ModelConstants& c) {
  return {{"L", c.L},
          {"sigma_sq", c.sigma_sq},
          {"M_sq", c.M_sq},
          {"exact", c.exact},
          {"sigma_estimated", c.sigma_estimated},
          {"M_estimated", c.M_estimated}};
}

json bound_json(const BoundReport& r) {
  json j{{"theorem", std::string(to_string(r.kind))},
         {"applicable", r.applicable},
         {"C", num(r.C_const)},
         {"lemma1_rhs", num(r.lemma1_rhs)},
         {"alpha", num(r.alpha)}};
  if (!r.applicable) {
    j["reason"] = r.reason;
    return j;
  }
  j["optimization_term"] = num(r.optimization_term);
  j["variance_term"] = num(r.variance_term);
  j["compression_term"] = num(r.compression_term);
  j["rhs"] = num(r.theorem_rhs);
  j["lhs_measured"] = r.lhs_measured ? num(*r.lhs_measured) : json(nullptr);
  j["holds"] = r.holds ? json(*r.holds) : json(nullptr);
  return j;
}

json lemma_json(const std::vector<LemmaCheck>& checks) {
  json arr = json::array();
  for (const auto& c : checks)
    arr.push_back({{"quantity", c.quantity},
                   {"measured_max", c.measured_max},
                   {"rhs", c.rhs},
                   {"holds", c.holds},
                   {"first_exceed", c.first_exceed}});
  return arr;
}

double time_average(const std::vector<TrajectoryRecord>& recs, double MismatchSample::*field) {
  if (recs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : recs) s += r.mismatch.*field;
  return s / static_cast<double>(recs.size());
}

double sampled_eps_average(const std::vector<TrajectoryRecord>& recs) {
  double s = 0.0;
  long n = 0;
  for (const auto& r : recs)
    if (r.mismatch.sampled) {
      s += r.mismatch.eps_hat;
      ++n;
    }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(n);
}

bool constants_asserted(const ModelConstants& c) { return c.exact && !c.sigma_estimated; }

fs::path csv_path_for(const fs::path& dir, const PlannedRun& p) { return dir / (p.name + ".csv"); }

fs::path meta_path_for_csv(const fs::path& csv) {
  fs::path m = csv;
  m.replace_extension(".meta.json");
  return m;
}

}  // namespace

// ------------------------------------------------------------ config

const std::vector<std::string>& known_config_keys() { return field_table().order; }

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  for (auto item : split_list(text)) seeds.push_back(to_u64("seeds", item));
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  std::unordered_set<std::uint64_t> seen;
  for (auto s : seeds)
    if (!seen.insert(s).second) throw ConfigError("seeds", "duplicate seed " + std::to_string(s));
  return seeds;
}

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir) {
  ExperimentConfig cfg;
  const auto& table = field_table();
  std::unordered_set<std::string> seen;
  bool topk_fraction_set = false;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("", "line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = table.setters.find(key);
    if (it == table.setters.end())
      throw ConfigError(key, "unknown key (line " + std::to_string(line_no) + ")");
    if (!seen.insert(key).second)
      throw ConfigError(key, "given twice (line " + std::to_string(line_no) + ")");
    if (value.empty()) throw ConfigError(key, "empty value");
    it->second(cfg, key, value);
    if (key == "compressor.topk_fraction") topk_fraction_set = true;
  }

  if (seen.count("run.iterations") && seen.count("run.epochs"))
    throw ConfigError("run.epochs", "set either run.iterations or run.epochs, not both");
  if (cfg.run.compressor.kind == CompressorKind::topk && !topk_fraction_set &&
      cfg.sweep_topk_fraction.empty())
    throw ConfigError("compressor.topk_fraction", "required for the topk compressor");
  if (!cfg.sweep_topk_fraction.empty() && cfg.run.compressor.kind != CompressorKind::topk)
    throw ConfigError("sweep.topk_fraction", "needs compressor.kind = topk");
  if (cfg.run.compressor.kind == CompressorKind::topk && !cfg.run.compressor.topk_fraction)
    cfg.run.compressor.topk_fraction = cfg.sweep_topk_fraction.front();
  if (cfg.objective.kind != "quadratic" && cfg.objective.kind != "logistic" &&
      cfg.objective.kind != "mlp")
    throw ConfigError("objective.kind", "expected quadratic, logistic or mlp");
  if (!cfg.objective.data_path.empty() && cfg.objective.data_path.is_relative() && !base_dir.empty())
    cfg.objective.data_path = base_dir / cfg.objective.data_path;
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

void apply_overrides(ExperimentConfig& cfg, const CommandOverrides& o) {
  if (o.out) cfg.output_dir = *o.out;
  if (o.seeds) {
    if (o.seeds->empty()) throw ConfigError("seeds", "at least one seed is required");
    cfg.seeds = *o.seeds;
  }
  if (o.diag_every) cfg.run.diag_every = *o.diag_every;
}

// ------------------------------------------------------------ planning

long iterations_per_epoch(std::size_t n, std::size_t workers, std::size_t batch_size) {
  if (workers == 0 || batch_size == 0) throw std::invalid_argument("workers and batch size must be >= 1");
  const std::size_t per = workers * batch_size;
  return static_cast<long>((n + per - 1) / per);
}

namespace {

ObjectiveBundle make_from_spec(const ObjectiveSpec& spec, std::size_t batch_size) {
  if (spec.kind == "quadratic")
    return wrap("objective", [&] {
      return make_quadratic(spec.dimension, spec.condition_number, spec.noise_std, spec.seed);
    });
  Dataset data;
  if (!spec.data_path.empty()) {
    data = load_dataset(spec.data_path, spec.data_format, spec.data_features);
  } else {
    data = wrap("objective.data", [&] {
      return make_two_gaussians(spec.data_n, spec.data_p, spec.seed, spec.data_separation,
                                spec.data_condition_number);
    });
  }
  if (spec.kind == "logistic")
    return wrap("objective", [&] { return make_logistic(std::move(data), spec.l2, batch_size, spec.seed); });
  if (spec.kind == "mlp")
    return wrap("objective", [&] { return make_mlp(std::move(data), spec.hidden, spec.seed, batch_size); });
  throw ConfigError("objective.kind", "expected quadratic, logistic or mlp");
}

}  // namespace

ObjectiveBundle build_objective(const ObjectiveSpec& spec, std::size_t batch_size) {
  ObjectiveBundle bundle = make_from_spec(spec, batch_size);
  const auto check = check_directional_gradient(*bundle.objective, 4, 1e-4, spec.seed);
  if (!check.passed)
    throw std::runtime_error("objective failed the gradient check (relative error " +
                             format_double(check.worst_relative_error) + ")");
  return bundle;
}

std::vector<PlannedRun> plan_runs(const ExperimentConfig& cfg, const ObjectiveBundle& bundle) {
  if (cfg.seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  RunConfig base = cfg.run;
  if (cfg.epochs) {
    const auto n = bundle.objective->num_samples();
    if (!n) throw ConfigError("run.epochs", "needs a finite-sum objective");
    if (*cfg.epochs < 0) throw ConfigError("run.epochs", "must be >= 0");
    base.iterations = *cfg.epochs * iterations_per_epoch(*n, base.workers, base.batch_size);
  }

  const std::vector<FeedbackMode> feedbacks =
      cfg.sweep_feedback.empty() ? std::vector<FeedbackMode>{base.feedback} : cfg.sweep_feedback;
  const std::vector<std::optional<double>> fractions = [&] {
    std::vector<std::optional<double>> f;
    if (cfg.sweep_topk_fraction.empty()) f.push_back(base.compressor.topk_fraction);
    for (double v : cfg.sweep_topk_fraction) f.push_back(v);
    return f;
  }();
  const std::vector<std::optional<long>> periods =
      cfg.sweep_averaging_period.empty() ? std::vector<std::optional<long>>{base.averaging_period}
                                         : cfg.sweep_averaging_period;

  std::vector<PlannedRun> plans;
  std::unordered_set<std::string> names;
  for (const auto fb : feedbacks)
    for (const auto& frac : fractions)
      for (const auto& p : periods)
        for (const auto seed : cfg.seeds) {
          PlannedRun plan;
          plan.config = base;
          plan.config.feedback = fb;
          plan.config.compressor.topk_fraction = frac;
          plan.config.averaging_period = p;
          plan.config.seed = seed;
          plan.axes = {{"feedback", std::string(to_string(fb))},
                       {"compressor", compressor_tag(plan.config.compressor)},
                       {"averaging_period", period_tag(p)}};
          plan.group = plan.axes["feedback"] + "_" + plan.axes["compressor"] + "_p" +
                       plan.axes["averaging_period"];
          plan.name = plan.group + "_seed" + std::to_string(seed);
          if (fb == FeedbackMode::vanilla) {
            if (plan.config.compressor.kind != CompressorKind::identity)
              throw ConfigError("run.feedback", "vanilla mode requires compressor.kind = identity");
          }
          wrap("run", [&] {
            plan.config.validate();
            return 0;
          });
          if (plan.config.compressor.layerwise &&
              bundle.objective->partition().dimension() != bundle.objective->dimension())
            throw ConfigError("compressor.layerwise", "objective partition does not fit");
          if (!names.insert(plan.name).second)
            throw ConfigError("sweep", "two runs share the name " + plan.name);
          plans.push_back(std::move(plan));
        }
  return plans;
}

std::optional<double> match_bytes_fraction(double baseline_fraction, std::size_t d,
                                           std::size_t workers, long iterations, long period,
                                           CompressionMode mode) {
  if (d == 0 || workers == 0 || iterations < 1 || period < 1)
    throw std::invalid_argument("match_bytes_fraction needs positive sizes");
  const auto T = static_cast<double>(iterations);
  const auto K = static_cast<double>(workers);
  auto total = [&](std::size_t k, long averaging_events) {
    const double up = K * static_cast<double>(k * kTopkEntryBytes);
    const double down = mode == CompressionMode::double_way
                            ? static_cast<double>(k * kTopkEntryBytes)
                            : static_cast<double>(kFullPrecisionBytes * d);
    return T * (up + down) +
           static_cast<double>(averaging_events) * K * static_cast<double>(kFullPrecisionBytes * d);
  };
  const double target = total(topk_count(baseline_fraction, d), 0);
  const long events = iterations / period;
  std::optional<double> best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= d; ++k) {
    const double gap = std::abs(total(k, events) - target) / target;
    if (gap < best_gap) {
      best_gap = gap;
      best = static_cast<double>(k) / static_cast<double>(d);
    }
  }
  if (best_gap > 0.01) return std::nullopt;
  return best;
}

// ------------------------------------------------------------ execution

RunOutcome execute_run(const PlannedRun& plan, const ObjectiveBundle& bundle,
                       std::size_t proposition1_window) {
  InvariantMonitor invariants;
  ErrorNormMonitor norms;
  Proposition1Tracker prop1(proposition1_window);
  RunObserver* observers[] = {&invariants, &norms, &prop1};

  RunOutcome out;
  out.plan = plan;
  out.result = run(plan.config, bundle.objective, observers);
  out.invariant_violation = invariants.first_violation();
  out.worst_aux_ratio = invariants.worst_aux_ratio();
  out.error_maxima = norms.maxima();
  out.M_sq_hat = norms.M_sq_hat();

  const auto& cfg = plan.config;
  const BlockPartition* part = compressor_partition(cfg.compressor, *bundle.objective);
  out.delta = part ? guaranteed_delta(cfg.compressor, *part)
                   : guaranteed_delta(cfg.compressor, bundle.objective->dimension());
  const auto bounds = appendix_error_bounds(out.delta, cfg.lr.max_eta(), cfg.momentum, cfg.workers,
                                            out.M_sq_hat, bundle.constants.sigma_sq);
  out.lemma_checks = check_lemma_bounds(norms, bounds);
  out.proposition1 = prop1.current();
  out.proposition1_satisfied_fraction = prop1.satisfied_fraction();
  return out;
}

std::size_t sweep_parallelism() {
  std::size_t cap = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SAEF_SIM_THREADS")) {
    std::size_t v = 0;
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc{} && ptr == s.data() + s.size() && v >= 1) cap = v;
  }
  return cap;
}

std::vector<RunOutcome> execute_runs(const std::vector<PlannedRun>& plans,
                                     const ObjectiveBundle& bundle, std::size_t max_parallel,
                                     std::size_t proposition1_window) {
  std::vector<RunOutcome> out(plans.size());
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(max_parallel, plans.size()));
  if (n_threads == 1) {
    for (std::size_t i = 0; i < plans.size(); ++i)
      out[i] = execute_run(plans[i], bundle, proposition1_window);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n_threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < n_threads; ++j)
      pool.emplace_back([&, j] {
        try {
          for (std::size_t i = next++; i < plans.size(); i = next++)
            out[i] = execute_run(plans[i], bundle, proposition1_window);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ------------------------------------------------------------ output

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

std::string trajectory_csv(const std::vector<TrajectoryRecord>& records) {
  std::string s = kCsvHeader;
  s += '\n';
  for (const auto& r : records) {
    s += std::to_string(r.t);
    for (double v : {r.eta, r.train_loss, r.aux_loss, r.grad_norm_sq, r.mismatch.eps_hat,
                     r.mismatch.proxy_ef, r.mismatch.proxy_saef}) {
      s += ',';
      s += format_double(v);
    }
    for (auto b : {r.uplink_bytes, r.downlink_bytes, r.averaging_bytes}) {
      s += ',';
      s += std::to_string(b);
    }
    s += '\n';
  }
  return s;
}

std::vector<CsvRow> read_trajectory_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != kCsvHeader)
    throw ParseError(path.string() + ": missing or unexpected header", 1);
  std::vector<CsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest = trim(line);
    while (true) {
      const auto pos = rest.find(',');
      cells.push_back(rest.substr(0, pos));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + 1);
    }
    if (cells.size() != 11) throw ParseError(path.string() + ": expected 11 columns", line_no);
    auto real = [&](std::string_view c) {
      if (c == "nan") return std::numeric_limits<double>::quiet_NaN();
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc{} || ptr != c.data() + c.size())
        throw ParseError(path.string() + ": bad number '" + std::string(c) + "'", line_no);
      return v;
    };
    auto integer = [&](std::string_view c) {
      std::uint64_t v = 0;
      const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc{} || ptr != c.data() + c.size())
        throw ParseError(path.string() + ": bad integer '" + std::string(c) + "'", line_no);
      return v;
    };
    CsvRow r;
    r.t = static_cast<long>(integer(cells[0]));
    r.eta = real(cells[1]);
    r.train_loss = real(cells[2]);
    r.aux_loss = real(cells[3]);
    r.grad_norm_sq = real(cells[4]);
    r.eps_hat = real(cells[5]);
    r.proxy_ef = real(cells[6]);
    r.proxy_saef = real(cells[7]);
    r.uplink_bytes = integer(cells[8]);
    r.downlink_bytes = integer(cells[9]);
    r.averaging_bytes = integer(cells[10]);
    rows.push_back(r);
  }
  return rows;
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string run_meta_json(const ExperimentConfig& cfg, const RunOutcome& o) {
  json j{{"name", o.plan.name},
         {"group", o.plan.group},
         {"axes", o.plan.axes},
         {"objective", objective_json(cfg.objective)},
         {"run", run_config_json(o.plan.config)},
         {"rows", o.result.records.size()},
         {"aborted", o.result.aborted},
         {"delta", o.delta},
         {"M_sq_hat", o.M_sq_hat},
         {"worst_aux_ratio", o.worst_aux_ratio},
         {"lemma_bounds", lemma_json(o.lemma_checks)},
         {"proposition1",
          {{"applicable", o.proposition1.applicable},
           {"var_e", o.proposition1.var_e},
           {"mean_e_sq", o.proposition1.mean_e_sq},
           {"satisfied", o.proposition1.satisfied},
           {"satisfied_fraction", o.proposition1_satisfied_fraction}}}};
  if (o.result.aborted) {
    j["abort_reason"] = o.result.abort_reason;
    j["abort_iteration"] = o.result.abort_iteration;
  }
  if (o.invariant_violation)
    j["invariant_violation"] = {{"quantity", o.invariant_violation->quantity},
                                {"iteration", o.invariant_violation->iteration},
                                {"measured", o.invariant_violation->measured},
                                {"limit", o.invariant_violation->limit}};
  return j.dump(2) + "\n";
}

std::string summary_json(const ExperimentConfig& cfg, const ObjectiveBundle& bundle,
                         const std::vector<RunOutcome>& outcomes) {
  const ModelConstants& k = bundle.constants;
  const double L = k.L;
  json groups = json::array();

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const RunOutcome*>> by_group;
  for (const auto& o : outcomes) {
    auto& g = by_group[o.plan.group];
    if (g.empty()) order.push_back(o.plan.group);
    g.push_back(&o);
  }

  for (const auto& name : order) {
    const auto& runs = by_group[name];
    const RunConfig& rc = runs.front()->plan.config;
    std::vector<double> final_loss, final_aux, final_grad, avg_ef, avg_saef, avg_eps, f0;
    std::vector<std::uint64_t> seeds;
    json run_names = json::array();
    double M_sq = 0.0;
    bool any_aborted = false;
    bool lemmas_hold = true;
    bool invariants_hold = true;
    for (const auto* o : runs) {
      const auto& recs = o->result.records;
      seeds.push_back(o->plan.config.seed);
      run_names.push_back(o->plan.name);
      any_aborted = any_aborted || o->result.aborted;
      invariants_hold = invariants_hold && !o->invariant_violation;
      for (const auto& c : o->lemma_checks) lemmas_hold = lemmas_hold && c.holds;
      M_sq = std::max(M_sq, o->M_sq_hat);
      f0.push_back(o->result.initial_loss);
      if (recs.empty()) continue;
      final_loss.push_back(recs.back().train_loss);
      final_aux.push_back(recs.back().aux_loss);
      final_grad.push_back(recs.back().grad_norm_sq);
      avg_ef.push_back(time_average(recs, &MismatchSample::proxy_ef));
      avg_saef.push_back(time_average(recs, &MismatchSample::proxy_saef));
      avg_eps.push_back(sampled_eps_average(recs));
    }

    // min over t of the seed-averaged squared gradient norm.
    std::optional<double> lhs_x, lhs_aux;
    const std::size_t T_common = [&] {
      std::size_t n = std::numeric_limits<std::size_t>::max();
      for (const auto* o : runs) n = std::min(n, o->result.records.size());
      return n;
    }();
    for (std::size_t t = 0; t < T_common; ++t) {
      double gx = 0.0, ga = 0.0;
      for (const auto* o : runs) {
        gx += o->result.records[t].grad_norm_sq;
        ga += o->result.records[t].aux_grad_norm_sq;
      }
      gx /= static_cast<double>(runs.size());
      ga /= static_cast<double>(runs.size());
      lhs_x = lhs_x ? std::min(*lhs_x, gx) : gx;
      lhs_aux = lhs_aux ? std::min(*lhs_aux, ga) : ga;
    }

    json theorems = json::array();
    const double fstar = bundle.objective->optimal_value().value_or(0.0);
    const double f0_max = f0.empty() ? 0.0 : *std::max_element(f0.begin(), f0.end());
    for (auto kind : {TheoremKind::thm1, TheoremKind::thm2, TheoremKind::thm3_x, TheoremKind::thm3_aux}) {
      const bool on_aux = kind == TheoremKind::thm1 || kind == TheoremKind::thm3_aux;
      BoundReport r;
      r.kind = kind;
      if (rc.feedback != FeedbackMode::saef) {
        r.applicable = false;
        r.reason = "the theorems are stated for saef";
      } else if (!rc.lr.is_constant()) {
        r.applicable = false;
        r.reason = "the theorems assume a constant learning rate";
      } else if (rc.iterations < 1) {
        r.applicable = false;
        r.reason = "no iterations";
      } else {
        TheoremInputs in;
        in.L = L;
        in.sigma_sq = k.sigma_sq;
        in.M_sq = M_sq;
        in.eta = rc.lr.at(0);
        in.mu = rc.momentum;
        in.T = rc.iterations;
        in.K = rc.workers;
        in.delta = runs.front()->delta;
        in.f0_minus_fstar = f0_max - fstar;
        r = theorem_bound(kind, in, on_aux ? lhs_aux : lhs_x);
      }
      json jr = bound_json(r);
      jr["lhs_estimator"] = on_aux ? "min_t seed-mean ||grad F(x~_t)||^2"
                                   : "min_t seed-mean ||grad F(x_t)||^2";
      theorems.push_back(jr);
    }

    json lemma_runs = json::array();
    for (const auto* o : runs)
      lemma_runs.push_back({{"run", o->plan.name}, {"checks", lemma_json(o->lemma_checks)}});

    const auto& last = runs.front()->result;
    json g{{"group", name},
           {"axes", runs.front()->plan.axes},
           {"seeds", seeds},
           {"runs", run_names},
           {"aborted", any_aborted},
           {"final_train_loss", stats(final_loss)},
           {"final_aux_loss", stats(final_aux)},
           {"final_grad_norm_sq", stats(final_grad)},
           {"time_avg_proxy_ef", {{"raw", stats(avg_ef)}, {"scaled_L2", L * L * mean_of(avg_ef)}}},
           {"time_avg_proxy_saef", {{"raw", stats(avg_saef)}, {"scaled_L2", L * L * mean_of(avg_saef)}}},
           {"time_avg_eps_hat", [&] {
              json arr = json::array();
              for (double v : avg_eps) arr.push_back(num(v));
              return arr;
            }()},
           {"bytes",
            {{"uplink", last.ledger.uplink_bytes},
             {"downlink", last.ledger.downlink_bytes},
             {"averaging", last.ledger.averaging_bytes},
             {"total", last.ledger.total()}}},
           {"delta", runs.front()->delta},
           {"M_sq_hat", M_sq},
           {"invariants_hold", invariants_hold},
           {"lemma_bounds_hold", lemmas_hold},
           {"lemma_bounds_asserted", constants_asserted(k)},
           {"lemma_bounds", lemma_runs},
           {"theorems", theorems}};
    groups.push_back(std::move(g));
  }

  json j{{"objective", objective_json(cfg.objective)},
         {"constants", constants_json(k)},
         {"std_convention", "sample (n - 1)"},
         {"groups", groups}};
  return j.dump(2) + "\n";
}

std::string compare_json(const std::vector<fs::path>& csv_paths) {
  if (csv_paths.empty()) throw std::invalid_argument("compare needs at least one run");
  struct Loaded {
    fs::path path;
    std::vector<CsvRow> rows;
    std::optional<json> meta;
  };
  std::vector<Loaded> runs;
  for (const auto& p : csv_paths) {
    Loaded l{p, read_trajectory_csv(p), std::nullopt};
    const fs::path mp = meta_path_for_csv(p);
    if (fs::exists(mp)) {
      std::ifstream in(mp);
      l.meta = json::parse(in);
    }
    runs.push_back(std::move(l));
  }
  const auto& base = runs.front();
  for (const auto& r : runs) {
    if (r.rows.size() != base.rows.size())
      throw std::invalid_argument("incompatible runs: " + r.path.string() + " has " +
                                  std::to_string(r.rows.size()) + " rows, baseline has " +
                                  std::to_string(base.rows.size()));
    if (r.meta && base.meta) {
      if ((*r.meta)["objective"] != (*base.meta)["objective"])
        throw std::invalid_argument("incompatible runs: objective differs for " + r.path.string());
      if ((*r.meta)["run"]["workers"] != (*base.meta)["run"]["workers"])
        throw std::invalid_argument("incompatible runs: worker count differs for " + r.path.string());
    }
  }

  json out_runs = json::array();
  for (const auto& r : runs) {
    json loss_delta = json::array(), aux_delta = json::array(), curve = json::array();
    double max_abs = 0.0;
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      const double d = r.rows[i].train_loss - base.rows[i].train_loss;
      const double a = r.rows[i].aux_loss - base.rows[i].aux_loss;
      max_abs = std::max({max_abs, std::abs(d), std::abs(a)});
      loss_delta.push_back(d);
      aux_delta.push_back(a);
      const auto& row = r.rows[i];
      curve.push_back({row.uplink_bytes + row.downlink_bytes + row.averaging_bytes, row.train_loss});
    }
    json final = nullptr;
    if (!r.rows.empty()) {
      const auto& f = r.rows.back();
      final = {{"train_loss", f.train_loss},
               {"aux_loss", f.aux_loss},
               {"grad_norm_sq", f.grad_norm_sq},
               {"total_bytes", f.uplink_bytes + f.downlink_bytes + f.averaging_bytes}};
    }
    out_runs.push_back({{"path", r.path.string()},
                        {"name", r.path.stem().string()},
                        {"train_loss_delta", loss_delta},
                        {"aux_loss_delta", aux_delta},
                        {"max_abs_delta", max_abs},
                        {"loss_vs_bytes", curve},
                        {"final", final}});
  }
  json j{{"baseline", base.path.string()}, {"rows", base.rows.size()}, {"runs", out_runs}};
  return j.dump(2) + "\n";
}

// ------------------------------------------------------------ commands

int command_run(const fs::path& config_path, const CommandOverrides& o, std::ostream& log) {
  ExperimentConfig cfg = load_config(config_path);
  apply_overrides(cfg, o);
  const ObjectiveBundle bundle = build_objective(cfg.objective, cfg.run.batch_size);
  const auto plans = plan_runs(cfg, bundle);

  const auto outcomes = execute_runs(plans, bundle, sweep_parallelism(), cfg.proposition1_window);

  fs::create_directories(cfg.output_dir);
  bool aborted = false;
  for (const auto& oc : outcomes) {
    const fs::path csv = csv_path_for(cfg.output_dir, oc.plan);
    write_file_atomic(csv, trajectory_csv(oc.result.records));
    write_file_atomic(meta_path_for_csv(csv), run_meta_json(cfg, oc));
    log << oc.plan.name << ": " << oc.result.records.size() << " rows";
    if (!oc.result.records.empty())
      log << ", final train_loss " << format_double(oc.result.records.back().train_loss);
    if (oc.result.aborted) {
      aborted = true;
      log << ", aborted at t=" << oc.result.abort_iteration << " (" << oc.result.abort_reason << ")";
    }
    log << "\n";
  }
  write_file_atomic(cfg.output_dir / "summary.json", summary_json(cfg, bundle, outcomes));
  return aborted ? 3 : 0;
}

int command_check_bounds(const fs::path& config_path, const CommandOverrides& o, std::ostream& log) {
  ExperimentConfig cfg = load_config(config_path);
  apply_overrides(cfg, o);
  const ObjectiveBundle bundle = build_objective(cfg.objective, cfg.run.batch_size);
  if (!constants_asserted(bundle.constants))
    throw ConfigError("objective.kind", "check-bounds needs an objective with exact constants");
  const auto plans = plan_runs(cfg, bundle);
  const auto outcomes = execute_runs(plans, bundle, sweep_parallelism(), cfg.proposition1_window);

  bool ok = true;
  for (const auto& oc : outcomes) {
    bool run_ok = true;
    if (oc.result.aborted) {
      log << "FAIL " << oc.plan.name << ": aborted at iteration " << oc.result.abort_iteration
          << " (" << oc.result.abort_reason << ")\n";
      run_ok = false;
    }
    if (run_ok && oc.invariant_violation) {
      const auto& v = *oc.invariant_violation;
      log << "FAIL " << oc.plan.name << ": " << v.quantity << " at iteration " << v.iteration
          << " measured " << format_double(v.measured) << " limit " << format_double(v.limit) << "\n";
      run_ok = false;
    }
    if (run_ok) {
      for (const auto& c : oc.lemma_checks) {
        if (c.holds) continue;
        log << "FAIL " << oc.plan.name << ": " << c.quantity << " at iteration " << c.first_exceed
            << " measured max " << format_double(c.measured_max) << " bound "
            << format_double(c.rhs) << "\n";
        run_ok = false;
        break;
      }
    }
    if (run_ok)
      log << "ok   " << oc.plan.name << ": invariants and lemma bounds hold (aux ratio "
          << format_double(oc.worst_aux_ratio) << ")\n";
    ok = ok && run_ok;
  }
  if (o.out) {
    json report = json::array();
    for (const auto& oc : outcomes)
      report.push_back({{"run", oc.plan.name},
                        {"invariants_hold", !oc.invariant_violation},
                        {"worst_aux_ratio", oc.worst_aux_ratio},
                        {"lemma_bounds", lemma_json(oc.lemma_checks)}});
    fs::create_directories(*o.out);
    write_file_atomic(*o.out / "bounds_report.json", report.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

void command_gen_data(const GenDataOptions& o) {
  if (o.n == 0) throw std::invalid_argument("--n must be >= 1");
  if (o.p == 0) throw std::invalid_argument("--p must be >= 1");
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  const Dataset data = make_two_gaussians(o.n, o.p, o.seed, o.separation, o.condition_number);
  const fs::path parent = o.out.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  fs::path tmp = o.out;
  tmp += ".tmp";
  write_dataset(data, tmp, o.format);
  fs::rename(tmp, o.out);
}

}  // namespace saef
