#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "testutil.hpp"
#include "vq/quantizer.hpp"

using namespace sftok;
using nn::Tape;
using nn::TensorPtr;

namespace {

Codebook toy_codebook(std::vector<double> rows, int64_t n, int64_t d,
                      bool l2 = false) {
  Codebook cb;
  cb.vectors = nn::make_tensor({n, d});
  cb.vectors->v = std::move(rows);
  cb.l2_normalized = l2;
  return cb;
}

TensorPtr codes_tensor(std::vector<double> vals, int64_t B, int64_t K,
                       int64_t d) {
  auto t = nn::make_tensor({B, K, d});
  t->v = std::move(vals);
  return t;
}

}  // namespace

TEST_CASE("exact codebook entry maps to itself") {
  Rng rng(5);
  Codebook cb;
  cb.vectors = nn::randn_tensor({12, 4}, 1.0, rng);
  auto in = nn::make_tensor({1, 1, 4});
  for (int c = 0; c < 4; ++c) in->v[c] = cb.vectors->v[7 * 4 + c];
  auto q = quantize(in, cb);
  CHECK(q.ids.at(0, 0) == 7);
  for (int c = 0; c < 4; ++c) CHECK(q.data->v[c] == in->v[c]);
}

TEST_CASE("two-entry distance comparison") {
  auto cb = toy_codebook({1, 0, 0, 1}, 2, 2);
  // distances: 0.01+0.04=0.05 vs 0.81+0.64=1.45
  auto q = quantize(codes_tensor({0.9, 0.2}, 1, 1, 2), cb);
  CHECK(q.ids.at(0, 0) == 0);
}

TEST_CASE("ties break to the lowest index") {
  auto cb = toy_codebook({1, 0, 0, 1}, 2, 2);
  auto q = quantize(codes_tensor({0.5, 0.5}, 1, 1, 2), cb);
  CHECK(q.ids.at(0, 0) == 0);
}

TEST_CASE("lookup returns exact rows and validates ids") {
  auto cb = toy_codebook({1, 0, 0, 1}, 2, 2);
  TokenGrid ids = make_token_grid(1, 1, 2);
  ids.at(0, 0) = 0;
  auto q = lookup(ids, cb);
  CHECK(q.data->v[0] == 1.0);
  CHECK(q.data->v[1] == 0.0);

  ids.at(0, 0) = 2;
  CHECK_THROWS_AS(lookup(ids, cb), Error);
}

TEST_CASE("quantize then lookup round trip") {
  Rng rng(9);
  Codebook cb;
  cb.vectors = nn::randn_tensor({20, 6}, 1.0, rng);
  auto in = nn::randn_tensor({3, 4, 6}, 1.0, rng);
  auto q = quantize(in, cb);
  auto r = lookup(q.ids, cb);
  for (size_t i = 0; i < q.data->v.size(); ++i)
    CHECK(q.data->v[i] == r.data->v[i]);
}

TEST_CASE("idempotence of quantization") {
  Rng rng(13);
  Codebook cb;
  cb.vectors = nn::randn_tensor({32, 5}, 1.0, rng);
  auto in = nn::randn_tensor({2, 8, 5}, 1.0, rng);
  auto q1 = quantize(in, cb);
  auto q2 = quantize(lookup(q1.ids, cb).data, cb);
  for (size_t i = 0; i < q1.ids.ids.size(); ++i)
    CHECK(q1.ids.ids[i] == q2.ids.ids[i]);
}

TEST_CASE("brute-force nearest neighbor agreement on 1000 inputs") {
  Rng rng(17);
  const int64_t n = 40, d = 7;
  Codebook cb;
  cb.vectors = nn::randn_tensor({n, d}, 1.0, rng);
  auto in = nn::randn_tensor({10, 100, d}, 1.5, rng);
  auto q = quantize(in, cb);
  for (int64_t r = 0; r < 1000; ++r) {
    int64_t best = 0;
    double bd = 1e300;
    for (int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (int64_t c = 0; c < d; ++c) {
        const double diff = in->v[r * d + c] - cb.vectors->v[j * d + c];
        s += diff * diff;
      }
      if (s < bd) {
        bd = s;
        best = j;
      }
    }
    CHECK(q.ids.ids[size_t(r)] == int32_t(best));
  }
}

TEST_CASE("l2 mode searches on the normalized input") {
  // Direction matters, magnitude does not.
  auto cb = toy_codebook({1, 0, 0, 1}, 2, 2, true);
  auto q1 = quantize(codes_tensor({0.1, 0.3}, 1, 1, 2), cb);
  auto q2 = quantize(codes_tensor({10, 30}, 1, 1, 2), cb);
  CHECK(q1.ids.at(0, 0) == 1);
  CHECK(q2.ids.at(0, 0) == 1);
}

TEST_CASE("quantize input validation") {
  auto cb = toy_codebook({1, 0, 0, 1}, 2, 2);
  auto nan_in = codes_tensor({0.5, std::nan("")}, 1, 1, 2);
  CHECK_THROWS_AS(quantize(nan_in, cb), Error);

  Codebook empty;
  empty.vectors = nn::make_tensor({0, 2});
  CHECK_THROWS_AS(quantize(codes_tensor({1, 0}, 1, 1, 2), empty), Error);
}

TEST_CASE("quantizer loss hand values") {
  auto ze = codes_tensor({1, 0}, 1, 1, 2);
  auto zq = codes_tensor({0, 0}, 1, 1, 2);
  auto zero = quantizer_loss(nullptr, ze, ze, 0.25);
  CHECK(zero->v[0] == doctest::Approx(0.0));

  // ||sg(ze)-zq||^2 + 0.25*||ze-sg(zq)||^2 = 1 + 0.25
  auto l = quantizer_loss(nullptr, ze, zq, 0.25);
  CHECK(l->v[0] == doctest::Approx(1.25).epsilon(1e-12));

  // Doubling the residual quadruples the loss.
  auto ze2 = codes_tensor({2, 0}, 1, 1, 2);
  auto l2 = quantizer_loss(nullptr, ze2, zq, 0.25);
  CHECK(l2->v[0] == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("quantizer loss averages over positions") {
  auto ze = codes_tensor({1, 0, 0, 0}, 1, 2, 2);
  auto zq = codes_tensor({0, 0, 0, 0}, 1, 2, 2);
  auto l = quantizer_loss(nullptr, ze, zq, 0.0);
  CHECK(l->v[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("quantizer loss gradient split") {
  Rng rng(23);
  auto ze = nn::randn_tensor({2, 3, 4}, 1.0, rng);
  auto zq = nn::randn_tensor({2, 3, 4}, 1.0, rng);
  ze->requires_grad = true;
  zq->requires_grad = true;

  Tape tape;
  auto l = quantizer_loss(&tape, ze, zq, 0.25);
  ze->zero_grad();
  zq->zero_grad();
  tape.backward(l);

  const double P = 6.0;  // positions
  for (size_t i = 0; i < ze->v.size(); ++i) {
    const double r = ze->v[i] - zq->v[i];
    // commitment term only: beta * 2r / P
    CHECK(ze->g[i] == doctest::Approx(0.25 * 2.0 * r / P).epsilon(1e-9));
    // codebook term only: -2r / P
    CHECK(zq->g[i] == doctest::Approx(-2.0 * r / P).epsilon(1e-9));
  }
}

TEST_CASE("straight-through estimator") {
  Rng rng(29);
  auto ze = nn::randn_tensor({1, 2, 3}, 1.0, rng);
  auto zq = nn::randn_tensor({1, 2, 3}, 1.0, rng);
  ze->requires_grad = true;

  Tape tape;
  auto out = nn::straight_through(&tape, ze, zq);
  for (size_t i = 0; i < out->v.size(); ++i) CHECK(out->v[i] == zq->v[i]);

  auto loss = nn::mean_all(&tape, out);
  ze->zero_grad();
  tape.backward(loss);
  for (size_t i = 0; i < ze->v.size(); ++i)
    CHECK(ze->g[i] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(zq->g.empty());  // treated as a constant
}

TEST_CASE("straight-through matches finite differences") {
  Rng rng(31);
  auto ze = nn::randn_tensor({1, 2, 2}, 1.0, rng);
  sftok::testing::gradcheck({ze}, [&](Tape* t) {
    // Identity-shaped surrogate: downstream sees ze's values exactly, so the
    // finite-difference derivative equals the pass-through gradient.
    auto q = nn::straight_through(t, ze, ze);
    return nn::mean_all(t, nn::tanh_act(t, q));
  });
}

TEST_CASE("embed_ids is differentiable into the table") {
  Rng rng(37);
  Codebook cb;
  cb.vectors = nn::randn_tensor({6, 3}, 1.0, rng);
  cb.vectors->requires_grad = true;
  TokenGrid ids = make_token_grid(1, 4, 6);
  ids.at(0, 0) = 2;
  ids.at(0, 1) = 2;
  ids.at(0, 2) = 0;
  ids.at(0, 3) = 5;

  Tape tape;
  auto emb = embed_ids(&tape, ids, cb);
  CHECK(emb->shape == std::vector<int64_t>({1, 4, 3}));
  auto loss = nn::mean_all(&tape, emb);
  cb.vectors->zero_grad();
  tape.backward(loss);

  // Row 2 used twice, rows 0 and 5 once, rest untouched.
  const double u = 1.0 / 12.0;
  for (int c = 0; c < 3; ++c) {
    CHECK(cb.vectors->g[2 * 3 + c] == doctest::Approx(2 * u));
    CHECK(cb.vectors->g[0 * 3 + c] == doctest::Approx(u));
    CHECK(cb.vectors->g[5 * 3 + c] == doctest::Approx(u));
    CHECK(cb.vectors->g[1 * 3 + c] == doctest::Approx(0.0));
  }
}

TEST_CASE("usage metric") {
  TokenGrid ids = make_token_grid(2, 3, 8);
  int32_t vals[6] = {0, 1, 1, 4, 4, 4};
  for (int i = 0; i < 6; ++i) ids.ids[size_t(i)] = vals[i];
  CHECK(codebook_usage(ids, 8) == doctest::Approx(3.0 / 8.0));
}

TEST_CASE("renormalize restores unit rows") {
  Rng rng(41);
  Codebook cb;
  cb.vectors = nn::randn_tensor({10, 4}, 2.0, rng);
  cb.l2_normalized = true;
  renormalize(cb);
  for (int64_t r = 0; r < 10; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 4; ++c)
      s += cb.vectors->v[r * 4 + c] * cb.vectors->v[r * 4 + c];
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
  }

  Codebook off = cb;
  off.l2_normalized = false;
  off.vectors->v[0] = 3.0;
  renormalize(off);
  CHECK(off.vectors->v[0] == 3.0);
}

TEST_CASE("prepare_codes normalizes only under the flag") {
  Rng rng(43);
  Codebook cb;
  cb.vectors = nn::randn_tensor({4, 3}, 1.0, rng);
  auto x = codes_tensor({3, 0, 4, 0, 0, 0}, 1, 2, 3);

  cb.l2_normalized = false;
  CHECK(prepare_codes(nullptr, x, cb) == x);

  cb.l2_normalized = true;
  auto y = prepare_codes(nullptr, x, cb);
  CHECK(y->v[0] == doctest::Approx(0.6));
  CHECK(y->v[2] == doctest::Approx(0.8));
}
