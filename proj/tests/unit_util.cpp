#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "util/error.hpp"
#include "util/rng.hpp"

using namespace sftok;

TEST_CASE("check throws typed errors and fail never returns") {
  CHECK_NOTHROW(check(true, ErrorCode::config, "fine"));
  try {
    check(false, ErrorCode::shape_mismatch, "bad shape");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::shape_mismatch);
    CHECK(std::string(e.what()).find("bad shape") != std::string::npos);
  }
  CHECK_THROWS_AS(fail(ErrorCode::io, "gone"), Error);
}

TEST_CASE("rng streams are deterministic given a seed") {
  Rng a(1234), b(1234), c(99);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    uint64_t va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
    all_equal = all_equal && (va == vb);
    any_diff = any_diff || (va != vc);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("rng serialization resumes bit-exactly") {
  Rng a(7);
  for (int i = 0; i < 37; ++i) a.normal();
  std::string state = a.serialize();

  Rng b;
  b.deserialize(state);
  for (int i = 0; i < 50; ++i) {
    CHECK(a.next_u64() == b.next_u64());
    CHECK(a.normal() == b.normal());
    CHECK(a.gumbel() == b.gumbel());
  }
}

TEST_CASE("uniform stays in range and normal has sane moments") {
  Rng r(5);
  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    double z = r.normal();
    sum += z;
    sum2 += z * z;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("permutation is a bijection") {
  Rng r(11);
  auto p = r.permutation(257);
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 257; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("sample_discrete follows the weights") {
  Rng r(3);
  std::vector<double> w = {1.0, 0.0, 3.0};
  int counts[3] = {0, 0, 0};
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[r.sample_discrete(w)];
  CHECK(counts[1] == 0);
  CHECK(std::abs(counts[0] / double(n) - 0.25) < 0.02);
  CHECK(std::abs(counts[2] / double(n) - 0.75) < 0.02);
  CHECK_THROWS_AS(r.sample_discrete({0.0, 0.0}), Error);
}

TEST_CASE("rng pool derives stable independent streams") {
  RngPool pool(42);
  uint64_t a0 = pool.stream("data").next_u64();
  uint64_t b0 = pool.stream("mask").next_u64();
  CHECK(a0 != b0);

  RngPool pool2(42);
  CHECK(pool2.stream("data").next_u64() == a0);
  CHECK(pool2.stream("mask").next_u64() == b0);

  auto states = pool.serialize_all();
  uint64_t a1 = pool.stream("data").next_u64();

  RngPool pool3(42);
  pool3.deserialize_all(states);
  CHECK(pool3.stream("data").next_u64() == a1);
}
