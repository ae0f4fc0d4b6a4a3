#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "saef/linalg.hpp"
#include "saef/rng.hpp"

using namespace saef;

TEST_CASE("axpy examples") {
  CHECK(axpy(0.0, ParamVector{1, 2}, ParamVector{3, 4}) == ParamVector{3, 4});
  CHECK(axpy(1.0, ParamVector{1, 2}, ParamVector{0, 0}) == ParamVector{1, 2});
  CHECK(axpy(2.0, ParamVector{1, -1}, ParamVector{1, 1}) == ParamVector{3, -1});
  CHECK_THROWS_AS(axpy(1.0, ParamVector{1, 2}, ParamVector{1}), DimensionError);
}

TEST_CASE("axpy rejects results that overflow") {
  const double big = std::numeric_limits<double>::max();
  ParamVector y{big};
  CHECK_THROWS_AS(axpy_inplace(2.0, ParamVector{big}, y.span()), NonFiniteError);
}

TEST_CASE("norms") {
  CHECK(l1_norm(ParamVector{0, 0, 0}) == 0.0);
  CHECK(l1_norm(ParamVector{2, -4, 6}) == 12.0);
  CHECK(l1_norm(ParamVector{-3.5}) == 3.5);
  CHECK(l2_norm_sq(ParamVector{0, 0}) == 0.0);
  CHECK(l2_norm_sq(ParamVector{3, 4}) == 25.0);
  CHECK(l2_norm_sq(ParamVector{2, -4, 6}) == 56.0);
  CHECK(linf_norm(ParamVector{1, -7, 3}) == 7.0);
}

TEST_CASE("block views") {
  ParamVector v{1, 2, 3, 4};
  const auto two = BlockPartition::from_sizes(std::vector<std::size_t>{2, 2});
  const auto b1 = block_view(std::span<const double>(v), two, 1);
  CHECK(std::vector<double>(b1.begin(), b1.end()) == std::vector<double>{3, 4});

  const auto whole = BlockPartition::whole(4);
  const auto all = block_view(std::span<const double>(v), whole, 0);
  CHECK(all.size() == 4);
  CHECK(all.data() == v.data());

  ParamVector five{9, 8, 7, 6, 5};
  const auto p = BlockPartition::from_sizes(std::vector<std::size_t>{1, 4});
  const auto first = block_view(std::span<const double>(five), p, 0);
  REQUIRE(first.size() == 1);
  CHECK(first[0] == 9);

  CHECK_THROWS_AS(two.block(2), std::out_of_range);

  // writes go through to the parent
  block_view(v.span(), two, 0)[1] = -2;
  CHECK(v[1] == -2);
}

TEST_CASE("partition validation") {
  CHECK_THROWS_AS(BlockPartition::whole(0), DimensionError);
  CHECK_THROWS_AS(BlockPartition::from_sizes(std::vector<std::size_t>{2, 0}), DimensionError);
  const std::vector<BlockPartition::Range> gap{{0, 2}, {3, 5}};
  CHECK_THROWS_AS(BlockPartition::from_ranges(gap), DimensionError);
  const std::vector<BlockPartition::Range> ok{{0, 2}, {2, 5}};
  const auto p = BlockPartition::from_ranges(ok);
  CHECK(p.num_blocks() == 2);
  CHECK(p.dimension() == 5);
}

TEST_CASE("block views tile the vector") {
  RngStream rng(7);
  ParamVector v(23);
  for (auto& x : v) x = rng.normal();
  const auto p = BlockPartition::from_sizes(std::vector<std::size_t>{5, 1, 10, 7});
  std::vector<double> joined;
  for (std::size_t b = 0; b < p.num_blocks(); ++b) {
    const auto view = block_view(std::span<const double>(v), p, b);
    joined.insert(joined.end(), view.begin(), view.end());
  }
  CHECK(joined == v.values());
}

TEST_CASE("mean examples") {
  CHECK(mean(std::vector<ParamVector>{{1, 1}}) == ParamVector{1, 1});
  CHECK(mean(std::vector<ParamVector>{{2, 0}, {0, 2}}) == ParamVector{1, 1});
  CHECK(mean(std::vector<ParamVector>{{0.1}, {0.1}}) == ParamVector{0.1});
  CHECK_THROWS(mean(std::vector<ParamVector>{}));
  CHECK_THROWS_AS(mean(std::vector<ParamVector>{{1, 2}, {1}}), DimensionError);
}

TEST_CASE("mean of identical vectors is bitwise that vector") {
  RngStream rng(11);
  for (std::size_t k = 1; k <= 64; ++k) {
    ParamVector v(17);
    for (auto& x : v) x = rng.normal() * std::exp(4.0 * rng.normal());
    const std::vector<ParamVector> copies(k, v);
    CHECK(mean(copies) == v);
  }
}

TEST_CASE("axpy round trip") {
  // y - x is exact when x and y share a sign and lie within a factor of two
  // (Sterbenz), and then x + (y - x) returns y exactly. Elsewhere the two
  // roundings cost at most a couple of ulps of the larger magnitude.
  RngStream rng(3);
  int exact_cases = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    ParamVector x(8), y(8);
    for (std::size_t i = 0; i < 8; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
    }
    const ParamVector back = axpy(1.0, x, axpy(-1.0, x, y));
    for (std::size_t i = 0; i < 8; ++i) {
      const double ax = std::abs(x[i]), ay = std::abs(y[i]);
      if ((x[i] > 0) == (y[i] > 0) && ay / 2 <= ax && ax <= 2 * ay) {
        ++exact_cases;
        CHECK(back[i] == y[i]);
      }
      const double big = std::max({ax, ay, std::abs(y[i] - x[i])});
      CHECK(std::abs(back[i] - y[i]) <= 2.0 * (std::nextafter(big, INFINITY) - big));
    }
  }
  CHECK(exact_cases > 1000);
}

TEST_CASE("l2_norm_sq agrees with dot") {
  RngStream rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    ParamVector v(1 + rng.below(200));
    for (auto& x : v) x = rng.normal();
    const double a = l2_norm_sq(v);
    const double b = dot(v, v);
    CHECK(std::abs(a - b) <= 1e-14 * std::max(1.0, std::abs(b)));
  }
}

TEST_CASE("finiteness checks") {
  ParamVector v{1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK_FALSE(v.all_finite());
  CHECK_THROWS_AS(require_finite(v, "v"), NonFiniteError);
}
