#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "nn/autodiff.hpp"
#include "nn/optim.hpp"
#include "nn/transformer.hpp"
#include "testutil.hpp"

using namespace sftok;
using namespace sftok::nn;
using sftok::testing::gradcheck;

namespace {
Rng& test_rng() {
  static Rng rng(2024);
  return rng;
}
}  // namespace

TEST_CASE("linear matches finite differences") {
  auto x = randn_tensor({2, 3, 4}, 1.0, test_rng());
  auto W = randn_tensor({4, 5}, 1.0, test_rng());
  auto b = randn_tensor({5}, 1.0, test_rng());
  gradcheck({x, W, b}, [&](Tape* t) {
    return mean_all(t, tanh_act(t, linear(t, x, W, b)));
  });
}

TEST_CASE("linear without bias") {
  auto x = randn_tensor({3, 4}, 1.0, test_rng());
  auto W = randn_tensor({4, 2}, 1.0, test_rng());
  gradcheck({x, W}, [&](Tape* t) {
    return mean_all(t, linear(t, x, W, nullptr));
  });
}

TEST_CASE("bmm plain and transposed") {
  auto A = randn_tensor({2, 3, 4}, 1.0, test_rng());
  auto B = randn_tensor({2, 4, 5}, 1.0, test_rng());
  gradcheck({A, B}, [&](Tape* t) {
    return mean_all(t, bmm(t, A, B, false));
  });
  auto Bt = randn_tensor({2, 5, 4}, 1.0, test_rng());
  gradcheck({A, Bt}, [&](Tape* t) {
    return mean_all(t, bmm(t, A, Bt, true));
  });
}

TEST_CASE("head split and merge invert each other") {
  auto x = randn_tensor({2, 3, 8}, 1.0, test_rng());
  auto split = split_heads(nullptr, x, 4);
  CHECK(split->shape == std::vector<int64_t>{8, 3, 2});
  auto merged = merge_heads(nullptr, split, 4, 2);
  REQUIRE(same_shape(*merged, *x));
  for (size_t i = 0; i < x->v.size(); ++i) CHECK(merged->v[i] == x->v[i]);

  gradcheck({x}, [&](Tape* t) {
    auto s = split_heads(t, x, 4);
    auto sq = bmm(t, s, s, true);
    return mean_all(t, merge_heads(t, bmm(t, sq, s, false), 4, 2));
  });
}

TEST_CASE("sequence concat and slice") {
  auto a = randn_tensor({2, 3, 4}, 1.0, test_rng());
  auto b = randn_tensor({2, 2, 4}, 1.0, test_rng());
  auto cat = concat_seq(nullptr, a, b);
  CHECK(cat->shape == std::vector<int64_t>{2, 5, 4});
  auto back = slice_seq(nullptr, cat, 3, 2);
  for (size_t i = 0; i < b->v.size(); ++i) CHECK(back->v[i] == b->v[i]);
  CHECK_THROWS_AS(slice_seq(nullptr, cat, 4, 2), Error);

  gradcheck({a, b}, [&](Tape* t) {
    auto c = concat_seq(t, a, b);
    return mean_all(t, gelu(t, slice_seq(t, c, 1, 3)));
  });
}

TEST_CASE("reshape keeps values and routes gradients") {
  auto x = randn_tensor({2, 6}, 1.0, test_rng());
  auto y = reshape(nullptr, x, {3, 4});
  for (size_t i = 0; i < x->v.size(); ++i) CHECK(y->v[i] == x->v[i]);
  CHECK_THROWS_AS(reshape(nullptr, x, {5, 2}), Error);
  gradcheck({x}, [&](Tape* t) {
    return mean_all(t, tanh_act(t, reshape(t, x, {4, 3})));
  });
}

TEST_CASE("elementwise ops match finite differences") {
  auto x = randn_tensor({3, 5}, 1.0, test_rng());
  auto y = randn_tensor({3, 5}, 1.0, test_rng());
  gradcheck({x, y}, [&](Tape* t) { return mean_all(t, add(t, x, y)); });
  gradcheck({x}, [&](Tape* t) { return mean_all(t, gelu(t, x)); });
  gradcheck({x}, [&](Tape* t) { return mean_all(t, tanh_act(t, x)); });
  gradcheck({x}, [&](Tape* t) {
    return mean_all(t, affine(t, x, 1.7, -0.3));
  });
  gradcheck({x, y}, [&](Tape* t) { return mse(t, x, y); });
  gradcheck({x}, [&](Tape* t) { return mean_sq_const(t, x, 0.4); });
}

TEST_CASE("mask_rows scales rows and silences zeroed ones") {
  auto x = randn_tensor({2, 3, 4}, 1.0, test_rng());
  std::vector<real> sc = {1.0, 0.0, 0.5, 0.0, 2.0, 1.0};
  gradcheck({x}, [&](Tape* t) {
    return mean_all(t, gelu(t, mask_rows(t, x, sc)));
  });

  x->requires_grad = true;
  Tape tape;
  auto out = mask_rows(&tape, x, sc);
  for (int c = 0; c < 4; ++c) {
    CHECK(out->v[1 * 4 + c] == 0.0);
    CHECK(out->v[2 * 4 + c] == doctest::Approx(0.5 * x->v[2 * 4 + c]));
  }
  tape.backward(mean_all(&tape, out));
  for (int c = 0; c < 4; ++c) CHECK(x->g[1 * 4 + c] == 0.0);

  CHECK_THROWS_AS(mask_rows(nullptr, x, {1.0, 2.0}), Error);
}

TEST_CASE("relu gradient respects the kink") {
  auto x = make_tensor({4});
  x->v = {-1.5, -0.2, 0.3, 2.0};
  gradcheck({x}, [&](Tape* t) { return mean_all(t, relu(t, x)); });
}

TEST_CASE("same tensor used twice accumulates gradient") {
  auto x = randn_tensor({3}, 1.0, test_rng());
  x->requires_grad = true;
  Tape tape;
  auto loss = mean_all(&tape, add(&tape, x, x));
  tape.backward(loss);
  for (real g : x->g) CHECK(g == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("positional bias broadcast over batch") {
  auto x = randn_tensor({3, 2, 4}, 1.0, test_rng());
  auto p = randn_tensor({2, 4}, 1.0, test_rng());
  gradcheck({x, p}, [&](Tape* t) {
    return mean_all(t, gelu(t, add_seq_bias(t, x, p)));
  });
}

TEST_CASE("layer norm normalizes rows and matches finite differences") {
  auto x = randn_tensor({2, 3, 6}, 2.0, test_rng());
  auto g = randn_tensor({6}, 0.5, test_rng());
  auto b = randn_tensor({6}, 0.5, test_rng());
  auto ones = full_tensor({6}, 1.0);
  auto zeros = zeros_tensor({6});

  auto y = layer_norm(nullptr, x, ones, zeros);
  for (int64_t r = 0; r < 6; ++r) {
    real mu = 0.0, var = 0.0;
    for (int64_t i = 0; i < 6; ++i) mu += y->v[r * 6 + i];
    mu /= 6.0;
    for (int64_t i = 0; i < 6; ++i) {
      real d = y->v[r * 6 + i] - mu;
      var += d * d;
    }
    CHECK(std::abs(mu) < 1e-12);
    CHECK(var / 6.0 == doctest::Approx(1.0).epsilon(1e-4));
  }

  gradcheck({x, g, b}, [&](Tape* t) {
    return mean_all(t, tanh_act(t, layer_norm(t, x, g, b)));
  });
}

TEST_CASE("softmax rows sum to one and backward is exact") {
  auto x = randn_tensor({4, 7}, 2.0, test_rng());
  auto p = softmax_rows(nullptr, x);
  for (int64_t r = 0; r < 4; ++r) {
    real s = 0.0;
    for (int64_t i = 0; i < 7; ++i) {
      s += p->v[r * 7 + i];
      CHECK(p->v[r * 7 + i] > 0.0);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  gradcheck({x}, [&](Tape* t) {
    auto q = softmax_rows(t, x);
    auto sq = mse(t, q, zeros_tensor({4, 7}));
    return sq;
  });
}

TEST_CASE("l2 row normalization produces unit rows") {
  auto x = randn_tensor({5, 3}, 3.0, test_rng());
  auto y = l2_normalize_rows(nullptr, x);
  for (int64_t r = 0; r < 5; ++r) {
    real n2 = 0.0;
    for (int64_t i = 0; i < 3; ++i) n2 += y->v[r * 3 + i] * y->v[r * 3 + i];
    CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-9));
  }
  gradcheck({x}, [&](Tape* t) {
    return mean_all(t, tanh_act(t, l2_normalize_rows(t, x)));
  });
}

TEST_CASE("embedding gathers rows and scatters gradients") {
  auto table = randn_tensor({6, 3}, 1.0, test_rng());
  std::vector<int64_t> ids = {4, 0, 4, 2};
  auto out = embedding(nullptr, table, ids, {2, 2});
  CHECK(out->shape == std::vector<int64_t>{2, 2, 3});
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(out->v[i] == table->v[4 * 3 + i]);
    CHECK(out->v[6 + i] == table->v[4 * 3 + i]);
  }
  CHECK_THROWS_AS(embedding(nullptr, table, {6}, {1}), Error);

  gradcheck({table}, [&](Tape* t) {
    return mean_all(t, tanh_act(t, embedding(t, table, ids, {4})));
  });
}

TEST_CASE("pooling and reductions") {
  auto x = randn_tensor({2, 4, 3}, 1.0, test_rng());
  gradcheck({x}, [&](Tape* t) {
    return mean_all(t, tanh_act(t, mean_pool_seq(t, x)));
  });
  auto m = mean_all(nullptr, full_tensor({5}, 2.5));
  CHECK(m->v[0] == doctest::Approx(2.5));
}

TEST_CASE("weighted cross entropy sums over weighted rows only") {
  auto logits = randn_tensor({4, 5}, 1.5, test_rng());
  std::vector<int64_t> targets = {1, -1, 3, 0};
  std::vector<real> weights = {1.0, 0.0, 0.5, 2.0};

  auto loss = weighted_ce_sum(nullptr, logits, targets, weights);
  real expect = 0.0;
  for (int64_t r = 0; r < 4; ++r) {
    if (weights[r] == 0.0) continue;
    real mx = logits->v[r * 5];
    for (int64_t i = 1; i < 5; ++i) mx = std::max(mx, logits->v[r * 5 + i]);
    real lse = 0.0;
    for (int64_t i = 0; i < 5; ++i) lse += std::exp(logits->v[r * 5 + i] - mx);
    expect += weights[r] * (std::log(lse) + mx - logits->v[r * 5 + targets[r]]);
  }
  CHECK(loss->v[0] == doctest::Approx(expect).epsilon(1e-12));

  logits->requires_grad = true;
  Tape tape;
  auto l2 = weighted_ce_sum(&tape, logits, targets, weights);
  tape.backward(l2);
  for (int64_t i = 0; i < 5; ++i) CHECK(logits->g[5 + i] == 0.0);

  gradcheck({logits}, [&](Tape* t) {
    return weighted_ce_sum(t, logits, targets, weights);
  });
}

TEST_CASE("weighted cross entropy rejects bad targets on weighted rows") {
  auto logits = randn_tensor({2, 3}, 1.0, test_rng());
  CHECK_THROWS_AS(weighted_ce_sum(nullptr, logits, {0, 7}, {1.0, 1.0}), Error);
}

TEST_CASE("weighted sum of scalar terms") {
  auto a = randn_tensor({1}, 1.0, test_rng());
  auto b = randn_tensor({1}, 1.0, test_rng());
  auto s = weighted_sum_scalars(nullptr, {{2.0, a}, {-0.5, b}});
  CHECK(s->v[0] == doctest::Approx(2.0 * a->v[0] - 0.5 * b->v[0]));
  gradcheck({a, b}, [&](Tape* t) {
    return weighted_sum_scalars(t, {{2.0, tanh_act(t, a)}, {-0.5, b}});
  });
}

TEST_CASE("detach blocks gradient flow") {
  auto x = randn_tensor({3}, 1.0, test_rng());
  x->requires_grad = true;
  Tape tape;
  auto d = detach(x);
  CHECK_FALSE(d->requires_grad);
  auto loss = mean_all(&tape, add(&tape, x, d));
  tape.backward(loss);
  for (real g : x->g) CHECK(g == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("straight-through copies values forward and gradient backward") {
  auto ze = randn_tensor({2, 3}, 1.0, test_rng());
  auto zq = randn_tensor({2, 3}, 1.0, test_rng());
  ze->requires_grad = true;
  zq->requires_grad = true;

  Tape tape;
  auto st = straight_through(&tape, ze, zq);
  for (size_t i = 0; i < zq->v.size(); ++i) CHECK(st->v[i] == zq->v[i]);
  auto loss = mean_all(&tape, st);
  tape.backward(loss);
  for (real g : ze->g) CHECK(g == doctest::Approx(1.0 / 6.0));
  CHECK(zq->g.empty());
}

TEST_CASE("transformer block matches finite differences") {
  Rng rng(7);
  ParamRegistry reg;
  auto block = TransformerBlock::create(reg, "blk", 8, 2, 16, rng);
  auto x = randn_tensor({2, 3, 8}, 1.0, rng);

  std::vector<TensorPtr> inputs = {x};
  for (auto& p : reg.tensors()) inputs.push_back(p);
  gradcheck(inputs, [&](Tape* t) {
    return mean_all(t, block.forward(t, x));
  }, 1e-5, 1e-4, 1e-6);
}

TEST_CASE("transformer stack runs and keeps shape") {
  Rng rng(9);
  ParamRegistry reg;
  auto stack = TransformerStack::create(reg, "enc", 2, 8, 2, 16, rng);
  auto x = randn_tensor({2, 5, 8}, 1.0, rng);
  auto y = stack.forward(nullptr, x);
  CHECK(same_shape(*y, *x));
  CHECK(y->finite());
}

TEST_CASE("lr schedule warms up then decays on a cosine") {
  LrSchedule s;
  s.base_lr = 1.0;
  s.end_lr = 0.1;
  s.warmup_steps = 10;
  s.total_steps = 110;

  CHECK(s.at(0) == doctest::Approx(0.1));
  CHECK(s.at(4) == doctest::Approx(0.5));
  CHECK(s.at(9) == doctest::Approx(1.0));
  CHECK(s.at(10) == doctest::Approx(1.0));
  CHECK(s.at(60) == doctest::Approx(0.55));
  CHECK(s.at(110) == doctest::Approx(0.1));
  CHECK(s.at(100000) == doctest::Approx(0.1));
  for (int64_t t = 10; t < 110; ++t) CHECK(s.at(t) >= s.at(t + 1));
}

TEST_CASE("adamw minimizes a quadratic and decays only matrices") {
  Rng rng(13);
  ParamRegistry reg;
  auto w = reg.randn("w", {3, 3}, 1.0, rng);
  auto b = reg.randn("b", {3}, 1.0, rng);

  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  AdamW opt(reg, cfg);
  Tape dummy;
  for (int i = 0; i < 400; ++i) {
    reg.zero_grad();
    Tape tape;
    auto loss = weighted_sum_scalars(
        &tape, {{1.0, mean_sq_const(&tape, w, 0.7)},
                {1.0, mean_sq_const(&tape, b, -0.2)}});
    tape.backward(loss);
    opt.step(cfg.lr);
  }
  for (real v : w->v) CHECK(v == doctest::Approx(0.7).epsilon(1e-3));
  for (real v : b->v) CHECK(v == doctest::Approx(-0.2).epsilon(1e-3));

  ParamRegistry reg2;
  auto w2 = reg2.full("w", {2, 2}, 1.0);
  auto b2 = reg2.full("b", {2}, 1.0);
  AdamWConfig cfg2;
  cfg2.weight_decay = 0.5;
  AdamW opt2(reg2, cfg2);
  reg2.zero_grad();
  for (auto& p : reg2.tensors()) p->ensure_grad();
  opt2.step(0.1);
  CHECK(w2->v[0] < 1.0);
  CHECK(b2->v[0] == doctest::Approx(1.0));
}

TEST_CASE("gradient clipping bounds the applied update") {
  ParamRegistry reg;
  auto w = reg.zeros("w", {2, 2});
  AdamWConfig cfg;
  cfg.max_grad_norm = 1.0;
  AdamW opt(reg, cfg);
  w->ensure_grad();
  for (auto& g : w->g) g = 100.0;
  real norm = opt.step(0.0);
  CHECK(norm == doctest::Approx(200.0));
}

TEST_CASE("ema tracks parameters with the stated recurrence") {
  ParamRegistry reg;
  auto w = reg.full("w", {2}, 1.0);
  Ema ema(reg, 0.9);
  w->v = {2.0, 0.0};
  ema.update();
  CHECK(ema.shadow()[0][0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));
  CHECK(ema.shadow()[0][1] == doctest::Approx(0.9 * 1.0));
  ema.copy_to_params();
  CHECK(w->v[0] == doctest::Approx(1.1));
}
