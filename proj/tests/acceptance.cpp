// Acceptance gate: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.
//
// usage: saef_acceptance [configs_dir] [scratch_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "saef/harness.hpp"

using namespace saef;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<fs::path> csvs_in(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::shared_ptr<const Objective> ac_quadratic(std::size_t d, double noise = 0.1) {
  return make_quadratic(d, 10.0, noise, 0).objective;
}

// ------------------------------------------------------------ 1

Verdict lossless_collapse() {
  const auto t0 = Clock::now();
  const auto obj = ac_quadratic(100);
  Verdict v;
  long compared = 0;
  for (std::size_t K : {1u, 4u}) {
    for (double mu : {0.0, 0.9}) {
      RunConfig c;
      c.workers = K;
      c.iterations = 1000;
      c.lr = LrSchedule(0.01);
      c.momentum = mu;
      c.seed = 3;
      c.diag_every = 0;
      c.feedback = FeedbackMode::vanilla;
      Simulator van(c, obj);
      c.feedback = FeedbackMode::ef;
      Simulator ef(c, obj);
      c.feedback = FeedbackMode::saef;
      Simulator sa(c, obj);
      while (!van.done()) {
        const auto a = van.step().record;
        const auto b = ef.step().record;
        const auto s = sa.step().record;
        for (const Simulator* sim : {&van, &ef, &sa})
          for (const auto& w : sim->workers())
            if (!(w.x == sim->x())) {
              v.pass = false;
              v.detail = "worker divergence at t=" + std::to_string(a.t);
            }
        const bool same = van.x() == ef.x() && van.x() == sa.x() &&
                          a.train_loss == b.train_loss && a.train_loss == s.train_loss &&
                          a.aux_loss == b.aux_loss && a.aux_loss == s.aux_loss &&
                          a.grad_norm_sq == b.grad_norm_sq && a.grad_norm_sq == s.grad_norm_sq;
        if (!same && v.pass) {
          v.pass = false;
          v.detail = "K=" + std::to_string(K) + " mu=" + fmt(mu) + " differs at t=" + std::to_string(a.t);
        }
        ++compared;
      }
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 5.0) v.pass = false;
  if (v.detail.empty())
    v.detail = std::to_string(compared) + " iterations bitwise equal across vanilla/ef/saef";
  v.detail += ", " + fmt(secs) + " s (limit 5 s)";
  return v;
}

// ------------------------------------------------------------ 2

Verdict aux_recursion() {
  const auto t0 = Clock::now();
  const auto obj = ac_quadratic(100);
  const std::vector<CompressorSpec> comps{CompressorSpec::sign_scaled(), CompressorSpec::topk(0.01),
                                          CompressorSpec::topk(0.1)};
  Verdict v;
  double worst = 0.0;
  int configs = 0;
  for (auto fb : {FeedbackMode::ef, FeedbackMode::saef})
    for (const auto& comp : comps)
      for (auto mode : {CompressionMode::single_way, CompressionMode::double_way})
        for (std::optional<long> p : {std::optional<long>(5), std::optional<long>()}) {
          RunConfig c;
          c.workers = 4;
          c.iterations = 2000;
          c.lr = LrSchedule(0.005);
          c.momentum = 0.9;
          c.feedback = fb;
          c.compression = mode;
          c.compressor = comp;
          c.averaging_period = p;
          c.averaging_scope = AveragingScope::both;
          c.seed = 1;
          c.diag_every = 0;
          Simulator sim(c, obj);
          ++configs;
          auto aux_prev = oracle::aux(sim.workers(), sim.server());
          while (!sim.done()) {
            const double eta = c.lr.at(sim.iteration());
            sim.step();
            const auto aux = oracle::aux(sim.workers(), sim.server());
            double scale = 0.0, resid = 0.0;
            for (double a : aux_prev) scale = std::max(scale, std::abs(a));
            for (std::size_t i = 0; i < aux.size(); ++i) {
              double msum = 0.0;
              for (const auto& w : sim.workers()) msum += w.m[i];
              const double pred = aux_prev[i] - eta / 4.0 * msum;
              resid = std::max(resid, std::abs(aux[i] - pred));
            }
            const double ratio = resid / (1.0 + scale);
            worst = std::max(worst, ratio);
            if (!(ratio <= 1e-10) && v.pass) {
              v.pass = false;
              v.detail = std::string(to_string(fb)) + "/" + std::string(to_string(comp.kind)) +
                         " fails at t=" + std::to_string(sim.iteration() - 1) + "; ";
            }
            aux_prev = aux;
          }
        }
  const double secs = seconds_since(t0);
  if (secs >= 60.0) v.pass = false;
  v.detail += std::to_string(configs) + " configs, worst residual ratio " + fmt(worst) +
              " (limit 1e-10), " + fmt(secs) + " s (limit 60 s)";
  return v;
}

// ------------------------------------------------------------ 3

Verdict delta_law() {
  RngStream rng(2024);
  const std::vector<std::size_t> dims{1, 2, 3, 10, 100};
  const std::vector<CompressorSpec> comps{CompressorSpec::identity(), CompressorSpec::sign_scaled(),
                                          CompressorSpec::topk(0.01), CompressorSpec::topk(0.1),
                                          CompressorSpec::topk(0.5)};
  long draws = 0, violations = 0;
  double worst_sign_rel = 0.0;
  for (std::size_t d : dims) {
    for (const auto& spec : comps) {
      const double delta = guaranteed_delta(spec, d);
      for (int n = 0; n < 10000; ++n) {
        std::vector<double> v(d);
        for (auto& x : v) x = (n % 2 == 0) ? rng.normal() : rng.student_t(3.0);
        const auto c = saef::apply(spec, v);
        const double err = oracle::sq_dist(c.decoded, v);
        const double nv = oracle::sq_norm(v);
        if (!(err <= (1.0 - delta) * nv)) ++violations;
        ++draws;
        if (spec.kind == CompressorKind::sign_scaled) {
          double l1 = 0.0;
          bool zero_free = true;
          for (double x : v) {
            l1 += std::abs(x);
            zero_free = zero_free && x != 0.0;
          }
          if (zero_free) {
            const double expect = nv - l1 * l1 / static_cast<double>(d);
            const double rel = std::abs(err - expect) / std::max(nv, 1e-300);
            worst_sign_rel = std::max(worst_sign_rel, rel);
          }
        }
      }
    }
  }

  long topk_cases = 0, topk_bad = 0;
  for (std::size_t d = 1; d <= 8; ++d)
    for (std::size_t k = 1; k <= d; ++k) {
      const double f = static_cast<double>(k) / static_cast<double>(d);
      if (topk_count(f, d) != k) ++topk_bad;
      for (int n = 0; n < 200; ++n) {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.normal();
        const auto c = compress_topk(v, f);
        const double err = oracle::sq_dist(c.decoded, v);
        const double best = oracle::best_k_sparse_error(v, k);
        std::size_t nnz = 0;
        for (double x : c.decoded) nnz += x != 0.0;
        if (nnz > k || std::abs(err - best) > 1e-12 * std::max(1.0, oracle::sq_norm(v))) ++topk_bad;
        ++topk_cases;
      }
    }

  Verdict v;
  v.pass = violations == 0 && worst_sign_rel <= 1e-12 && topk_bad == 0;
  v.detail = std::to_string(violations) + " violations in " + std::to_string(draws) +
             " draws; sign identity worst rel " + fmt(worst_sign_rel) + " (limit 1e-12); top-k " +
             std::to_string(topk_bad) + " mismatches in " + std::to_string(topk_cases) +
             " brute-force cases";
  return v;
}

// ------------------------------------------------------------ 4

/// Error norms read directly from engine state, and the largest full
/// gradient seen at the query points and at x.
class NormOracle final : public RunObserver {
 public:
  double worker = 0, deviation = 0, server = 0, proxy = 0, M_sq = 0;

  void on_iteration(const Simulator& sim, const IterationDetail& det) override {
    const auto ws = sim.workers();
    const std::size_t d = sim.x().size();
    const double K = static_cast<double>(ws.size());
    std::vector<double> e_bar(d, 0.0);
    for (const auto& w : ws)
      for (std::size_t i = 0; i < d; ++i) e_bar[i] += w.e[i] / K;
    double dev = 0.0, prox = 0.0;
    for (const auto& w : ws) {
      worker = std::max(worker, oracle::sq_norm(w.e));
      for (std::size_t i = 0; i < d; ++i) {
        dev += (e_bar[i] - w.e[i]) * (e_bar[i] - w.e[i]);
        const double r = sim.server().e[i] + e_bar[i] - w.e[i];
        prox += r * r;
      }
    }
    deviation = std::max(deviation, dev / K);
    proxy = std::max(proxy, prox / K);
    server = std::max(server, oracle::sq_norm(sim.server().e));
    const auto& obj = sim.objective();
    for (const auto& q : det.query_points) M_sq = std::max(M_sq, oracle::sq_norm(obj.full_gradient(q)));
    M_sq = std::max(M_sq, oracle::sq_norm(obj.full_gradient(sim.x())));
  }
};

Verdict lemma_bounds() {
  const auto q = make_quadratic(100, 10.0, 0.1, 0);
  const double L = q.constants.L, sigma_sq = q.constants.sigma_sq;
  const double eta = 0.5 / L;
  Verdict v;
  int runs = 0;
  double tightest = 0.0;
  for (auto fb : {FeedbackMode::ef, FeedbackMode::saef})
    for (double mu : {0.0, 0.9})
      for (double f : {0.01, 0.1}) {
        RunConfig c;
        c.workers = 4;
        c.iterations = 5000;
        c.lr = LrSchedule(eta);
        c.momentum = mu;
        c.feedback = fb;
        c.compression = CompressionMode::double_way;
        c.compressor = CompressorSpec::topk(f);
        c.seed = 1;
        c.diag_every = 0;
        NormOracle norms;
        std::vector<RunObserver*> obs{&norms};
        const auto r = run(c, q.objective, obs);
        ++runs;
        const std::string tag = std::string(to_string(fb)) + " mu=" + fmt(mu) + " f=" + fmt(f);
        if (r.aborted) {
          v.pass = false;
          v.detail += tag + " aborted; ";
          continue;
        }
        const double delta = static_cast<double>(topk_count(f, 100)) / 100.0;
        const double gap = 1.0 - std::sqrt(1.0 - delta);
        const double base = eta * eta * (norms.M_sq + sigma_sq) / ((1.0 - mu) * (1.0 - mu));
        const double growth = (1.0 - delta) / (gap * gap);
        const double C = 2.0 * (1.0 + delta) * (2.0 - delta) / (gap * gap) + (1.0 + delta) / delta;
        const std::vector<std::pair<double, double>> pairs{
            {norms.worker, growth * base},
            {norms.deviation, 0.75 * growth * base},
            {norms.server, growth * 2.0 * (2.0 - delta) / (gap * gap) * base},
            {norms.proxy, C * growth * base}};
        const char* names[] = {"worker_error", "worker_deviation", "server_error", "mismatch_proxy"};
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          tightest = std::max(tightest, pairs[i].first / pairs[i].second);
          if (!(pairs[i].first <= pairs[i].second)) {
            v.pass = false;
            v.detail += tag + " " + names[i] + " " + fmt(pairs[i].first) + " > " + fmt(pairs[i].second) + "; ";
          }
        }
      }
  v.detail += std::to_string(runs) + " ef/saef runs at eta=0.5/L, T=5000; largest measured/bound " + fmt(tightest);
  return v;
}

// ------------------------------------------------------------ 5

Verdict corollary_gap() {
  const auto t0 = Clock::now();
  int positive = 0;
  double smallest = INFINITY;
  for (int i = 1; i <= 100; ++i) {
    const double g = corollary1_gap(i / 100.0);
    positive += g > 0.0;
    smallest = std::min(smallest, g);
  }
  const double at_one = corollary1_gap(1.0);
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = positive == 100 && at_one == 61.25 && secs < 1.0;
  v.detail = std::to_string(positive) + "/100 grid points positive (min " + fmt(smallest) +
             "), h2(1) = " + format_double(at_one) + ", " + fmt(secs) + " s (limit 1 s)";
  return v;
}

// ------------------------------------------------------------ 6

Verdict gradient_checks() {
  const auto t0 = Clock::now();
  const auto quad = make_quadratic(50, 10.0, 0.1, 0);
  const auto logi = make_logistic(make_two_gaussians(2000, 50, 1), 1e-4, 1, 0, 100);
  const auto mlp = make_mlp(make_two_gaussians(200, 10, 2), 8, 3);
  const auto cq = check_gradient(*quad.objective, 100, 1e-5, 11);
  const auto cl = check_gradient(*logi.objective, 100, 1e-5, 12);
  const auto cm = check_gradient(*mlp.objective, 100, 1e-4, 13, true);
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = cq.passed && cl.passed && cm.passed && secs < 30.0;
  v.detail = "worst relative error quadratic " + fmt(cq.worst_relative_error) + ", logistic " +
             fmt(cl.worst_relative_error) + " (limit 1e-5), mlp per-coordinate " +
             fmt(cm.worst_relative_error) + " (limit 1e-4), 100 points each, " + fmt(secs) +
             " s (limit 30 s)";
  return v;
}

// ------------------------------------------------------------ 7, 8, 9

std::map<std::string, std::vector<CsvRow>> load_runs(const fs::path& dir) {
  std::map<std::string, std::vector<CsvRow>> out;
  for (const auto& p : csvs_in(dir)) out[p.stem().string()] = read_trajectory_csv(p);
  return out;
}

Verdict proxy_ordering(const fs::path& out_dir) {
  const auto runs = load_runs(out_dir);
  Verdict v;
  int wins = 0, seeds = 0;
  std::string values;
  for (int s = 1; s <= 5; ++s) {
    const auto ef = runs.find("ef_topk0.01_pinf_seed" + std::to_string(s));
    const auto sa = runs.find("saef_topk0.01_pinf_seed" + std::to_string(s));
    if (ef == runs.end() || sa == runs.end()) {
      v.pass = false;
      v.detail = "missing run for seed " + std::to_string(s);
      return v;
    }
    double pe = 0.0, ps = 0.0;
    for (const auto& r : ef->second) pe += r.proxy_ef;
    for (const auto& r : sa->second) ps += r.proxy_saef;
    pe /= static_cast<double>(ef->second.size());
    ps /= static_cast<double>(sa->second.size());
    wins += ps < pe;
    ++seeds;
    values += " " + fmt(ps) + "<" + fmt(pe);
  }
  v.pass = wins >= 4;
  v.detail = "saef proxy below ef proxy in " + std::to_string(wins) + "/" + std::to_string(seeds) +
             " seeds (need 4); saef<ef:" + values;
  return v;
}

Verdict averaging_trend(const fs::path& out_dir, double secs) {
  const auto runs = load_runs(out_dir);
  Verdict v;
  std::vector<std::pair<double, double>> stats;
  for (const char* p : {"inf", "20", "5", "1"}) {
    std::vector<double> finals;
    for (int s = 1; s <= 5; ++s) {
      const auto it = runs.find(std::string("saef_topk0.01_p") + p + "_seed" + std::to_string(s));
      if (it == runs.end() || it->second.empty()) {
        v.pass = false;
        v.detail = std::string("missing run p=") + p;
        return v;
      }
      finals.push_back(it->second.back().train_loss);
    }
    double m = 0.0;
    for (double x : finals) m += x;
    m /= 5.0;
    double ss = 0.0;
    for (double x : finals) ss += (x - m) * (x - m);
    stats.emplace_back(m, std::sqrt(ss / 4.0));
    v.detail += std::string("p=") + p + " " + fmt(m) + "+-" + fmt(stats.back().second) + "; ";
  }
  for (std::size_t i = 1; i < stats.size(); ++i) {
    const double pooled = std::sqrt(0.5 * (stats[i].second * stats[i].second +
                                           stats[i - 1].second * stats[i - 1].second));
    if (stats[i].first > stats[i - 1].first + pooled) v.pass = false;
  }
  if (secs >= 600.0) v.pass = false;
  v.detail += "sweep " + fmt(secs) + " s (limit 600 s)";
  return v;
}

Verdict byte_accounting(const fs::path& out_dir) {
  const auto runs = load_runs(out_dir);
  Verdict v;
  if (runs.size() != 1 || runs.begin()->second.size() != 100) {
    v.pass = false;
    v.detail = "expected one run of 100 rows";
    return v;
  }
  const auto& rows = runs.begin()->second;
  const auto& last = rows.back();
  const std::uint64_t up = 4ull * 100 * (10 * 12), down = 100ull * (10 * 12), avg = 5ull * (4 * 8 * 100);
  v.pass = last.uplink_bytes == up && last.downlink_bytes == down && last.averaging_bytes == avg;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::uint64_t events = (i + 1) / 20;
    if (rows[i].uplink_bytes != (i + 1) * 480 || rows[i].downlink_bytes != (i + 1) * 120 ||
        rows[i].averaging_bytes != events * 3200)
      v.pass = false;
  }
  v.detail = "uplink " + std::to_string(last.uplink_bytes) + "/" + std::to_string(up) + ", downlink " +
             std::to_string(last.downlink_bytes) + "/" + std::to_string(down) + ", averaging " +
             std::to_string(last.averaging_bytes) + "/" + std::to_string(avg);
  return v;
}

// ------------------------------------------------------------ 10

Verdict determinism(const fs::path& configs, const fs::path& scratch,
                    const std::vector<std::string>& names) {
  Verdict v;
  std::size_t files = 0;
  std::ostringstream quiet;
  for (const auto& n : names) {
    CommandOverrides o;
    o.out = scratch / (n + "_rerun");
    fs::remove_all(*o.out);
    command_run(configs / "acceptance" / (n + ".cfg"), o, quiet);
    const auto first = csvs_in(scratch / n);
    const auto second = csvs_in(*o.out);
    if (first.size() != second.size() || first.empty()) {
      v.pass = false;
      v.detail += n + ": file count differs; ";
      continue;
    }
    for (std::size_t i = 0; i < first.size(); ++i) {
      ++files;
      if (first[i].filename() != second[i].filename() || slurp(first[i]) != slurp(second[i])) {
        v.pass = false;
        v.detail += first[i].filename().string() + " differs; ";
      }
    }
  }
  std::ostringstream stock_log, flip_log;
  const int stock = command_check_bounds(configs / "check_bounds.cfg", {}, stock_log);
  const int flip = command_check_bounds(configs / "check_bounds_flip.cfg", {}, flip_log);
  if (stock != 0 || flip == 0) v.pass = false;
  v.detail += std::to_string(files) + " CSVs byte-identical on rerun; check-bounds exit " +
              std::to_string(stock) + " stock, " + std::to_string(flip) + " sign-flip";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path configs = argc > 1 ? fs::path(argv[1]) : fs::path(SAEF_CONFIG_DIR);
  const fs::path scratch = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "saef_acceptance";
  fs::create_directories(scratch);

  int failures = 0;
  auto report = [&](int id, const Verdict& v) {
    std::cout << "AC" << id << " " << (v.pass ? "PASS" : "FAIL") << ": " << v.detail << std::endl;
    failures += !v.pass;
  };
  auto guarded = [&](int id, const std::function<Verdict()>& f) {
    try {
      report(id, f());
    } catch (const std::exception& e) {
      report(id, {false, std::string("exception: ") + e.what()});
    }
  };

  auto run_config = [&](const std::string& name) {
    CommandOverrides o;
    o.out = scratch / name;
    fs::remove_all(*o.out);
    std::ostringstream quiet;
    const auto t0 = Clock::now();
    const int rc = command_run(configs / "acceptance" / (name + ".cfg"), o, quiet);
    if (rc != 0) throw std::runtime_error(name + " exited with " + std::to_string(rc));
    return seconds_since(t0);
  };

  guarded(1, lossless_collapse);
  guarded(2, aux_recursion);
  guarded(3, delta_law);
  guarded(4, lemma_bounds);
  guarded(5, corollary_gap);
  guarded(6, gradient_checks);
  guarded(7, [&] {
    run_config("ac7_proxy_ordering");
    return proxy_ordering(scratch / "ac7_proxy_ordering");
  });
  guarded(8, [&] {
    const double secs = run_config("ac8_averaging_trend");
    return averaging_trend(scratch / "ac8_averaging_trend", secs);
  });
  guarded(9, [&] {
    run_config("ac9_bytes");
    return byte_accounting(scratch / "ac9_bytes");
  });
  guarded(10, [&] {
    return determinism(configs, scratch, {"ac7_proxy_ordering", "ac8_averaging_trend", "ac9_bytes"});
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures;
}
