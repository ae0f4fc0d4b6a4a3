#include <cmath>
#include <set>

#include "doctest.h"
#include "saef/rng.hpp"

using namespace saef;

TEST_CASE("streams are pure functions of key and counter") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(42, 50);
  RngStream d(42);
  for (int i = 0; i < 50; ++i) d.next_u64();
  CHECK(c.next_u64() == d.next_u64());
}

TEST_CASE("derived streams differ") {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t k = 0; k < 64; ++k) firsts.insert(RngStream::derive(1, k).next_u64());
  CHECK(firsts.size() == 64);
  CHECK(RngStream::derive(1, 0).key() != RngStream::derive(2, 0).key());
}

TEST_CASE("uniform, below and normal") {
  RngStream r(9);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(r.below(7) < 7);
    const double z = r.normal();
    sum += z;
    sum_sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sum_sq / n - 1.0) < 0.02);
}

TEST_CASE("normal consumes two outputs") {
  RngStream r(1);
  r.normal();
  CHECK(r.counter() == 2);
}
