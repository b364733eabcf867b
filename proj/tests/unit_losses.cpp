#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "testutil.hpp"
#include "train/losses.hpp"

using namespace sftok;
using sftok::testing::gradcheck;
using nn::Tape;
using nn::TensorPtr;

namespace {

// One batch row, four positions, vocabulary 4. Positions 0 and 2 resolved.
struct Half {
  TokenGrid truth = make_token_grid(1, 4, 4);
  MaskState state = fully_masked(1, 4, 4);
  TensorPtr logits = nn::make_tensor({1, 4, 4});

  Half() {
    truth.at(0, 0) = 0;
    truth.at(0, 1) = 1;
    truth.at(0, 2) = 2;
    truth.at(0, 3) = 3;
    commit_position(state, 0, 0, 0);
    commit_position(state, 0, 2, 1);  // committed token may disagree w/ truth
    // Every row is [2, 0, 0, 0].
    for (int p = 0; p < 4; ++p) logits->v[size_t(p) * 4] = 2.0;
  }
};

constexpr double kCeHit = 0.340752953913;   // row [2,0,0,0], target 0
constexpr double kCeMiss = 2.340752953913;  // row [2,0,0,0], target != 0

}  // namespace

TEST_CASE("loss report arithmetic") {
  LossReport r;
  r.add("rec", 1.0, 0.5);
  r.add("vq", 0.25, 2.0);
  r.total = 1.0;
  CHECK(r.weighted_sum() == doctest::Approx(1.0));
  CHECK(r.additivity_gap() < 1e-12);
  r.total = 1.5;
  CHECK(r.additivity_gap() == doctest::Approx(0.5));
  REQUIRE(r.find("vq") != nullptr);
  CHECK(r.find("vq")->value == 2.0);
  CHECK(r.find("absent") == nullptr);
}

TEST_CASE("masked term averages masked rows, targets come from the grid") {
  Half h;
  auto terms = masked_ce_terms(nullptr, h.logits, h.truth, h.state, 0.0);
  REQUIRE(terms.masked);
  REQUIRE(terms.unmasked);
  // Masked positions 1 and 3, truth 1 and 3: both miss the spiked class.
  CHECK(terms.masked->v[0] == doctest::Approx(kCeMiss).epsilon(1e-9));
  // Resolved positions 0 and 2, truth 0 and 2: one hit, one miss. The
  // committed token at position 2 is ignored; the grid stays the target.
  CHECK(terms.unmasked->v[0] ==
        doctest::Approx(0.5 * (kCeHit + kCeMiss)).epsilon(1e-9));
}

TEST_CASE("combined loss weighs the resolved term") {
  Half h;
  auto loss = masked_ce_loss(nullptr, h.logits, h.truth, h.state, 0.1, 0.0);
  const double want = kCeMiss + 0.1 * 0.5 * (kCeHit + kCeMiss);
  CHECK(loss->v[0] == doctest::Approx(want).epsilon(1e-9));

  auto zero_w = masked_ce_loss(nullptr, h.logits, h.truth, h.state, 0.0, 0.0);
  CHECK(zero_w->v[0] == doctest::Approx(kCeMiss).epsilon(1e-9));
}

TEST_CASE("uniform logits cost ln V regardless of the mask") {
  TokenGrid truth = make_token_grid(2, 3, 7);
  for (int b = 0; b < 2; ++b)
    for (int p = 0; p < 3; ++p) truth.at(b, p) = (b + 2 * p) % 7;
  MaskState state = fully_masked(2, 3, 7);
  commit_position(state, 1, 0, 4);
  auto logits = nn::make_tensor({2, 3, 7});
  auto loss = masked_ce_loss(nullptr, logits, truth, state, 0.1, 0.0);
  CHECK(loss->v[0] == doctest::Approx(1.1 * 1.945910149055).epsilon(1e-9));
}

TEST_CASE("empty sets drop their term; a fully empty grid is an error") {
  Half h;

  MaskState none_resolved = fully_masked(1, 4, 4);
  auto t1 = masked_ce_terms(nullptr, h.logits, h.truth, none_resolved, 0.0);
  CHECK(t1.masked);
  CHECK(!t1.unmasked);
  auto l1 = masked_ce_loss(nullptr, h.logits, h.truth, none_resolved, 10.0, 0.0);
  CHECK(l1->v[0] ==
        doctest::Approx((kCeHit + 3 * kCeMiss) / 4.0).epsilon(1e-9));

  MaskState all_resolved = fully_masked(1, 4, 4);
  for (int p = 0; p < 4; ++p) commit_position(all_resolved, 0, p, 0);
  auto t2 = masked_ce_terms(nullptr, h.logits, h.truth, all_resolved, 0.0);
  CHECK(!t2.masked);
  CHECK(t2.unmasked);
  auto l2 = masked_ce_loss(nullptr, h.logits, h.truth, all_resolved, 0.5, 0.0);
  CHECK(l2->v[0] ==
        doctest::Approx(0.5 * (kCeHit + 3 * kCeMiss) / 4.0).epsilon(1e-9));

  // Zero-length grids cannot come from the factories; build them by hand to
  // pin the error contract.
  TokenGrid empty_truth;
  empty_truth.batch = 1;
  empty_truth.vocab = 4;
  MaskState empty;
  empty.batch = 1;
  empty.vocab = 4;
  auto empty_logits = nn::make_tensor({1, 0, 4});
  CHECK_THROWS_AS(
      masked_ce_loss(nullptr, empty_logits, empty_truth, empty, 0.1, 0.0),
      Error);
}

TEST_CASE("label smoothing spreads the target mass") {
  TokenGrid truth = make_token_grid(1, 1, 4);
  truth.at(0, 0) = 0;
  MaskState state = fully_masked(1, 1, 4);
  auto logits = nn::make_tensor({1, 1, 4});
  logits->v[0] = 2.0;
  auto smoothed = masked_ce_loss(nullptr, logits, truth, state, 0.0, 0.2);
  CHECK(smoothed->v[0] == doctest::Approx(0.640752953913).epsilon(1e-9));
}

TEST_CASE("shape guards") {
  Half h;
  auto bad_vocab = nn::make_tensor({1, 4, 5});
  CHECK_THROWS_AS(
      masked_ce_terms(nullptr, bad_vocab, h.truth, h.state, 0.0), Error);
  auto bad_len = nn::make_tensor({1, 3, 4});
  CHECK_THROWS_AS(masked_ce_terms(nullptr, bad_len, h.truth, h.state, 0.0),
                  Error);
  MaskState other = fully_masked(2, 4, 4);
  CHECK_THROWS_AS(masked_ce_terms(nullptr, h.logits, h.truth, other, 0.0),
                  Error);
}

TEST_CASE("gradient only reaches rows that carry weight") {
  Half h;
  h.logits->requires_grad = true;
  Tape tape;
  auto loss = masked_ce_loss(&tape, h.logits, h.truth, h.state, 0.0, 0.0);
  tape.backward(loss);
  double row0 = 0, row1 = 0;
  for (int c = 0; c < 4; ++c) {
    row0 += std::abs(h.logits->g[c]);
    row1 += std::abs(h.logits->g[4 + c]);
  }
  CHECK(row0 == 0.0);  // resolved row, w_unmasked = 0
  CHECK(row1 > 0.0);
}

TEST_CASE("masked loss matches finite differences") {
  Rng rng(6);
  TokenGrid truth = make_token_grid(2, 3, 5);
  for (int b = 0; b < 2; ++b)
    for (int p = 0; p < 3; ++p)
      truth.at(b, p) = int32_t(rng.uniform_int(5));
  MaskState state = fully_masked(2, 3, 5);
  commit_position(state, 0, 1, 2);
  commit_position(state, 1, 0, 0);
  commit_position(state, 1, 2, 4);
  auto logits = nn::make_tensor({2, 3, 5});
  for (auto& v : logits->v) v = rng.normal() * 0.7;
  gradcheck({logits}, [&](Tape* t) {
    return masked_ce_loss(t, logits, truth, state, 0.3, 0.1);
  });
}
