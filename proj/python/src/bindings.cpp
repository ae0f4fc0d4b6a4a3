#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "saef/harness.hpp"

namespace py = pybind11;
using namespace saef;

namespace {

py::array_t<double> to_array(std::span<const double> v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

CompressorSpec make_spec(const std::string& kind, std::optional<double> fraction) {
  CompressorSpec s;
  s.kind = parse_compressor_kind(kind);
  s.topk_fraction = fraction;
  s.validate();
  return s;
}

py::dict records_dict(const std::vector<TrajectoryRecord>& recs) {
  const auto n = static_cast<py::ssize_t>(recs.size());
  py::array_t<long> t(n);
  py::array_t<double> eta(n), train(n), aux(n), grad(n), eps(n), pef(n), psaef(n);
  py::array_t<std::uint64_t> up(n), down(n), avg(n);
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& r = recs[static_cast<std::size_t>(i)];
    t.mutable_at(i) = r.t;
    eta.mutable_at(i) = r.eta;
    train.mutable_at(i) = r.train_loss;
    aux.mutable_at(i) = r.aux_loss;
    grad.mutable_at(i) = r.grad_norm_sq;
    eps.mutable_at(i) = r.mismatch.eps_hat;
    pef.mutable_at(i) = r.mismatch.proxy_ef;
    psaef.mutable_at(i) = r.mismatch.proxy_saef;
    up.mutable_at(i) = r.uplink_bytes;
    down.mutable_at(i) = r.downlink_bytes;
    avg.mutable_at(i) = r.averaging_bytes;
  }
  py::dict d;
  d["t"] = t;
  d["eta"] = eta;
  d["train_loss"] = train;
  d["aux_loss"] = aux;
  d["grad_norm_sq"] = grad;
  d["eps_hat"] = eps;
  d["proxy_ef"] = pef;
  d["proxy_saef"] = psaef;
  d["uplink_bytes"] = up;
  d["downlink_bytes"] = down;
  d["averaging_bytes"] = avg;
  return d;
}

py::dict outcome_dict(const RunOutcome& o) {
  py::dict d;
  d["name"] = o.plan.name;
  d["group"] = o.plan.group;
  d["records"] = records_dict(o.result.records);
  d["final_x"] = to_array(o.result.final_x);
  d["initial_loss"] = o.result.initial_loss;
  d["aborted"] = o.result.aborted;
  d["abort_reason"] = o.result.abort_reason;
  d["invariants_hold"] = !o.invariant_violation.has_value();
  d["worst_aux_ratio"] = o.worst_aux_ratio;
  d["M_sq_hat"] = o.M_sq_hat;
  d["delta"] = o.delta;
  py::list lemmas;
  for (const auto& c : o.lemma_checks) {
    py::dict l;
    l["quantity"] = c.quantity;
    l["measured_max"] = c.measured_max;
    l["rhs"] = c.rhs;
    l["holds"] = c.holds;
    lemmas.append(l);
  }
  d["lemma_bounds"] = lemmas;
  return d;
}

py::dict report_dict(const BoundReport& r) {
  py::dict d;
  d["theorem"] = std::string(to_string(r.kind));
  d["applicable"] = r.applicable;
  d["reason"] = r.reason;
  d["C"] = r.C_const;
  d["lemma1_rhs"] = r.lemma1_rhs;
  d["alpha"] = r.alpha;
  d["optimization_term"] = r.optimization_term;
  d["variance_term"] = r.variance_term;
  d["compression_term"] = r.compression_term;
  d["rhs"] = r.theorem_rhs;
  d["lhs_measured"] = r.lhs_measured;
  d["holds"] = r.holds;
  return d;
}

TheoremKind parse_theorem(const std::string& s) {
  if (s == "thm1") return TheoremKind::thm1;
  if (s == "thm2") return TheoremKind::thm2;
  if (s == "thm3_x") return TheoremKind::thm3_x;
  if (s == "thm3_aux") return TheoremKind::thm3_aux;
  throw std::invalid_argument("unknown theorem '" + s + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Distributed compressed SGD simulator (error feedback and step-ahead error feedback)";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "compress",
      [](const std::string& kind, const py::array_t<double, py::array::c_style | py::array::forcecast>& v,
         std::optional<double> fraction) {
        const auto msg = saef::apply(make_spec(kind, fraction), from_array(v));
        return py::make_tuple(to_array(msg.decoded), msg.encoded_bytes);
      },
      py::arg("kind"), py::arg("v"), py::arg("fraction") = py::none(),
      "Compress v; returns (decoded, encoded_bytes).");
  m.def(
      "guaranteed_delta",
      [](const std::string& kind, std::size_t d, std::optional<double> fraction) {
        return guaranteed_delta(make_spec(kind, fraction), d);
      },
      py::arg("kind"), py::arg("d"), py::arg("fraction") = py::none());
  m.def("topk_count", &topk_count, py::arg("fraction"), py::arg("d"));

  m.def("lemma1_constant", &lemma1_constant, py::arg("delta"));
  m.def("lemma1_bound", &lemma1_bound, py::arg("delta"), py::arg("eta_max"), py::arg("mu"),
        py::arg("M_sq"), py::arg("sigma_sq"));
  m.def("corollary1_gap", &corollary1_gap, py::arg("delta"));
  m.def(
      "appendix_error_bounds",
      [](double delta, double eta, double mu, std::size_t K, double M_sq, double sigma_sq) {
        const auto b = appendix_error_bounds(delta, eta, mu, K, M_sq, sigma_sq);
        py::dict d;
        d["worker_error"] = b.worker_error;
        d["worker_deviation"] = b.worker_deviation;
        d["server_error"] = b.server_error;
        d["mismatch_proxy"] = b.mismatch_proxy;
        return d;
      },
      py::arg("delta"), py::arg("eta_max"), py::arg("mu"), py::arg("workers"), py::arg("M_sq"),
      py::arg("sigma_sq"));
  m.def(
      "theorem_bound",
      [](const std::string& kind, double L, double sigma_sq, double M_sq, double eta, double mu,
         long T, std::size_t K, double delta, double f0_minus_fstar, std::optional<double> lhs) {
        TheoremInputs in{L, sigma_sq, M_sq, eta, mu, T, K, delta, f0_minus_fstar};
        return report_dict(theorem_bound(parse_theorem(kind), in, lhs));
      },
      py::arg("kind"), py::arg("L"), py::arg("sigma_sq"), py::arg("M_sq"), py::arg("eta"),
      py::arg("mu"), py::arg("T"), py::arg("K"), py::arg("delta"), py::arg("f0_minus_fstar"),
      py::arg("lhs_measured") = py::none());

  m.def(
      "two_gaussians",
      [](std::size_t n, std::size_t p, std::uint64_t seed, double separation, double cond) {
        const auto data = make_two_gaussians(n, p, seed, separation, cond);
        py::array_t<double> X({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(p)});
        std::copy(data.features.begin(), data.features.end(), X.mutable_data());
        return py::make_tuple(X, to_array(data.labels));
      },
      py::arg("n"), py::arg("p"), py::arg("seed") = 0, py::arg("separation") = 2.0,
      py::arg("condition_number") = 1.0);

  m.def("known_config_keys", &known_config_keys);
  m.def(
      "run_config",
      [](const std::string& text, const std::string& base_dir) {
        const ExperimentConfig cfg = parse_config(text, base_dir);
        std::vector<RunOutcome> outcomes;
        {
          py::gil_scoped_release release;
          const ObjectiveBundle bundle = build_objective(cfg.objective, cfg.run.batch_size);
          const auto plans = plan_runs(cfg, bundle);
          outcomes = execute_runs(plans, bundle, sweep_parallelism(), cfg.proposition1_window);
        }
        py::list out;
        for (const auto& o : outcomes) out.append(outcome_dict(o));
        return out;
      },
      py::arg("config_text"), py::arg("base_dir") = "",
      "Run every configuration described by a config file's text.");
  m.def(
      "trajectory_csv",
      [](const std::string& text, const std::string& base_dir) {
        const ExperimentConfig cfg = parse_config(text, base_dir);
        const ObjectiveBundle bundle = build_objective(cfg.objective, cfg.run.batch_size);
        const auto plans = plan_runs(cfg, bundle);
        if (plans.size() != 1) throw std::invalid_argument("trajectory_csv needs a single-run config");
        return trajectory_csv(execute_run(plans.front(), bundle).result.records);
      },
      py::arg("config_text"), py::arg("base_dir") = "");
}
