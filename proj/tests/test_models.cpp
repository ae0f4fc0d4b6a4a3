#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "saef/models.hpp"

using namespace saef;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path dir = fs::temp_directory_path() / "saef_models_test";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p, std::ios::binary) << contents;
  return p;
}

/// F(x) = 3 for every x.
class ConstantObjective final : public Objective {
 public:
  std::string name() const override { return "constant"; }
  std::size_t dimension() const override { return 3; }
  const BlockPartition& partition() const override { return part_; }
  double loss(std::span<const double>) const override { return 3.0; }
  void gradient(std::span<const double>, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
  }
  Minibatch sample(RngStream&, std::size_t) const override { return {}; }
  void stochastic_gradient(std::span<const double>, const Minibatch&,
                           std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
  }

 private:
  BlockPartition part_ = BlockPartition::whole(3);
};

Dataset small_data(std::size_t n, std::size_t p, std::uint64_t seed) {
  return make_two_gaussians(n, p, seed, 1.5, 3.0);
}

}  // namespace

TEST_CASE("quadratic construction") {
  const auto q = make_quadratic(12, 10.0, 0.0, 5);
  const auto& obj = dynamic_cast<const QuadraticObjective&>(*q.objective);
  CHECK(q.constants.exact);
  CHECK(q.constants.L == 10.0);
  CHECK(q.constants.sigma_sq == 0.0);
  CHECK(*std::max_element(obj.eigenvalues().begin(), obj.eigenvalues().end()) == doctest::Approx(10.0));
  CHECK(*std::min_element(obj.eigenvalues().begin(), obj.eigenvalues().end()) == doctest::Approx(1.0));

  // zero noise: stochastic gradient equals the full gradient
  RngStream rng(1);
  ParamVector x(12);
  for (auto& v : x) v = rng.normal();
  const auto mb = obj.sample(rng, 4);
  CHECK(q.objective->stochastic_gradient(x, mb) == obj.full_gradient(x));

  // first-order optimality at the minimiser
  const auto g = obj.full_gradient(obj.minimizer());
  CHECK(std::sqrt(l2_norm_sq(g)) < 1e-10);
  CHECK(obj.loss(obj.minimizer()) == doctest::Approx(*obj.optimal_value()));

  // deterministic per seed
  const auto again = make_quadratic(12, 10.0, 0.0, 5);
  const auto& obj2 = dynamic_cast<const QuadraticObjective&>(*again.objective);
  CHECK(std::equal(obj.matrix().begin(), obj.matrix().end(), obj2.matrix().begin()));
  CHECK(std::equal(obj.linear_term().begin(), obj.linear_term().end(), obj2.linear_term().begin()));

  CHECK_THROWS(make_quadratic(0, 10.0, 0.1, 1));
  CHECK_THROWS(make_quadratic(3, 0.5, 0.1, 1));
  CHECK_THROWS(make_quadratic(3, 2.0, -1.0, 1));
}

TEST_CASE("quadratic noise has the advertised second moment") {
  const double noise = 0.7;
  const auto q = make_quadratic(10, 5.0, noise, 2);
  RngStream rng(3);
  const ParamVector x(10);
  const auto g = q.objective->full_gradient(x);
  const int draws = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < draws; ++i) {
    const auto sg = q.objective->stochastic_gradient(x, q.objective->sample(rng, 1));
    const double e = oracle::sq_dist(sg, g);
    sum += e;
    sum_sq += e * e;
  }
  const double m = sum / draws;
  const double se = std::sqrt((sum_sq / draws - m * m) / draws);
  CHECK(std::abs(m - noise * noise) <= 3 * se);
}

TEST_CASE("logistic examples") {
  Dataset one{1, 3, {0.5, -1.0, 2.0}, {1.0}};
  const auto b = make_logistic(one, 0.1, 1, 0, 100);
  RngStream rng(1);
  ParamVector w{0.3, -0.2, 0.1};
  CHECK(b.objective->stochastic_gradient(w, Minibatch{{0}, {}}) == b.objective->full_gradient(w));

  // paired +/- features with both labels: zero gradient at w = 0
  Dataset sym{4, 2, {1, 2, 1, 2, -1, -2, -1, -2}, {1, -1, 1, -1}};
  const auto s = make_logistic(sym, 0.5, 1, 0, 100);
  const auto g0 = s.objective->full_gradient(ParamVector(2));
  CHECK(std::abs(g0[0]) < 1e-15);
  CHECK(std::abs(g0[1]) < 1e-15);

  Dataset bad{2, 1, {1, 2}, {1, 2}};
  CHECK_THROWS(make_logistic(bad, 0.1));

  // {0, 1} labels are accepted
  Dataset zero_one{2, 1, {1, 2}, {0, 1}};
  CHECK_NOTHROW(make_logistic(zero_one, 0.1, 1, 0, 10));
}

TEST_CASE("logistic smoothness constant") {
  const auto data = small_data(60, 4, 9);
  const auto b = make_logistic(data, 0.01, 2, 0, 100);
  CHECK(b.constants.exact);
  CHECK(b.constants.sigma_estimated);
  // the Hessian is at most X'X / (4n) + l2, so gradient differences respect L
  RngStream rng(4);
  for (int i = 0; i < 50; ++i) {
    ParamVector x(4), y(4);
    for (std::size_t j = 0; j < 4; ++j) {
      x[j] = rng.normal();
      y[j] = rng.normal();
    }
    const double num = oracle::sq_dist(b.objective->full_gradient(x), b.objective->full_gradient(y));
    CHECK(std::sqrt(num) <= b.constants.L * std::sqrt(oracle::sq_dist(x, y)) * (1 + 1e-12));
  }
}

TEST_CASE("finite-sum stochastic gradients are unbiased") {
  const auto data = small_data(40, 3, 1);
  for (const auto& b : {make_logistic(data, 0.05, 1, 0, 100), make_mlp(data, 4, 2)}) {
    const auto& obj = *b.objective;
    RngStream rng(5);
    ParamVector x(obj.dimension());
    for (auto& v : x) v = 0.5 * rng.normal();
    ParamVector avg(obj.dimension());
    for (std::uint32_t i = 0; i < data.n; ++i) {
      const auto g = obj.stochastic_gradient(x, Minibatch{{i}, {}});
      for (std::size_t j = 0; j < g.size(); ++j) avg[j] += g[j];
    }
    for (auto& v : avg) v /= static_cast<double>(data.n);
    const auto full = obj.full_gradient(x);
    CHECK(std::sqrt(oracle::sq_dist(avg, full)) <= 1e-12 * std::max(1.0, std::sqrt(oracle::sq_norm(full))));
  }
}

TEST_CASE("mlp layout and closed forms") {
  const auto data = small_data(30, 3, 2);
  const auto b = make_mlp(data, 5, 7);
  const auto& obj = *b.objective;
  CHECK(obj.dimension() == 5 * 3 + 5 + 5 + 1);
  CHECK(obj.partition().num_blocks() == 4);
  CHECK_FALSE(b.constants.exact);

  // with zero output weights the prediction is b2 and dF/db2 is the mean residual
  ParamVector x = obj.initial_point();
  const auto w2 = obj.partition().block(2);
  for (std::size_t i = w2.begin; i < w2.end; ++i) x[i] = 0.0;
  x[obj.dimension() - 1] = 0.25;
  double mean_residual = 0.0;
  for (double y : data.labels) mean_residual += 0.25 - y;
  mean_residual /= static_cast<double>(data.n);
  CHECK(obj.full_gradient(x)[obj.dimension() - 1] == doctest::Approx(mean_residual).epsilon(1e-12));

  // duplicating every row leaves the gradient unchanged
  Dataset twice = data;
  twice.n *= 2;
  twice.features.insert(twice.features.end(), data.features.begin(), data.features.end());
  twice.labels.insert(twice.labels.end(), data.labels.begin(), data.labels.end());
  const auto b2 = make_mlp(twice, 5, 7);
  RngStream rng(8);
  for (auto& v : x) v = rng.normal();
  const auto g1 = obj.full_gradient(x);
  const auto g2 = b2.objective->full_gradient(x);
  CHECK(std::sqrt(oracle::sq_dist(g1, g2)) <= 1e-12 * std::max(1.0, std::sqrt(oracle::sq_norm(g1))));

  CHECK_THROWS(make_mlp(data, 0, 1));
}

TEST_CASE("gradient checks") {
  const auto q = make_quadratic(20, 10.0, 0.1, 1);
  CHECK(check_gradient(*q.objective, 5, 1e-5, 1).passed);
  const auto data = small_data(50, 6, 3);
  const auto l = make_logistic(data, 0.01, 1, 0, 100);
  CHECK(check_gradient(*l.objective, 5, 1e-5, 2).passed);
  const auto m = make_mlp(data, 4, 4);
  const auto mc = check_gradient(*m.objective, 5, 1e-4, 3, true);
  CHECK(mc.passed);
  CHECK(check_directional_gradient(*m.objective, 4, 1e-4, 1).passed);
}

TEST_CASE("dataset loading") {
  const auto lib = temp_file("a.libsvm", "+1 1:0.5 3:2\n");
  const auto d = load_dataset(lib, DatasetFormat::libsvm, 3);
  CHECK(d.n == 1);
  CHECK(d.p == 3);
  CHECK(d.features == std::vector<double>{0.5, 0.0, 2.0});
  CHECK(d.labels == std::vector<double>{1.0});
  CHECK_THROWS_AS(load_dataset(lib, DatasetFormat::libsvm, 2), ParseError);

  const auto csv = temp_file("a.csv", "1,2,0\n3,4,1\n");
  const auto c = load_dataset(csv, DatasetFormat::csv);
  CHECK(c.n == 2);
  CHECK(c.p == 2);
  CHECK(c.labels == std::vector<double>{0.0, 1.0});

  CHECK_THROWS_AS(load_dataset(temp_file("empty.csv", ""), DatasetFormat::csv), ParseError);
  try {
    load_dataset(temp_file("ragged.csv", "1,2,0\n3,1\n"), DatasetFormat::csv);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(load_dataset(temp_file("bad.libsvm", "1 1:x\n"), DatasetFormat::libsvm), ParseError);
}

TEST_CASE("dataset round trip and synthetic data") {
  const auto data = small_data(25, 4, 6);
  CHECK(data.n == 25);
  CHECK(data.p == 4);
  for (const char* fmt : {"csv", "libsvm"}) {
    const auto f = parse_dataset_format(fmt);
    const auto path = fs::temp_directory_path() / "saef_models_test" / (std::string("rt.") + fmt);
    write_dataset(data, path, f);
    const auto back = load_dataset(path, f, data.p);
    CHECK(back.features == data.features);
    CHECK(back.labels == data.labels);
  }
  const auto again = small_data(25, 4, 6);
  CHECK(again.features == data.features);
  CHECK_THROWS(make_two_gaussians(0, 4, 1));
}

TEST_CASE("constant estimation") {
  const auto q = make_quadratic(8, 6.0, 0.0, 3);
  const auto est = estimate_constants(*q.objective, 6, 20, 1);
  CHECK_FALSE(est.exact);
  CHECK(est.L <= q.constants.L + 1e-12);
  CHECK(est.L > 0.0);
  CHECK(est.sigma_sq == 0.0);

  const ConstantObjective c;
  const auto ce = estimate_constants(c, 3, 5, 1);
  CHECK(ce.L == 0.0);
  CHECK(ce.sigma_sq == 0.0);
  CHECK(ce.M_sq == 0.0);
  CHECK_THROWS(estimate_constants(c, 1, 5, 1));
}
