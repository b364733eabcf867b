#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "io/config.hpp"
#include "multistep/multistep.hpp"
#include "testutil.hpp"

using namespace sftok;

namespace {

RunConfig micro_config() {
  Json j = Json::object();
  j["model"]["vq_model"]["vit_enc_model_size"] = "micro";
  j["model"]["vq_model"]["num_latent_tokens"] = 4;
  j["model"]["vq_model"]["token_size"] = 6;
  j["model"]["vq_model"]["codebook_size"] = 16;
  j["model"]["decoder"]["vit_dec_model_size"] = "micro";
  j["model"]["decoder"]["num_latent_tokens"] = 4;
  j["model"]["decoder"]["token_size"] = 6;
  j["model"]["decoder"]["codebook_size"] = 12;
  j["model"]["decoder"]["vit_dec_patch_size"] = 8;
  j["model"]["decoder"]["num_proxy_codes"] = 16;
  return parse_config(j);
}

struct Fixture {
  RunConfig rc = micro_config();
  Rng init{77};
  TokenizerModel model{rc, init};
  QuantizedLatent zq;

  Fixture() {
    Codebook cb{model.codebook_vectors(), rc.vq_model.use_l2_norm};
    auto img = nn::randn_tensor({2, 32, 32, 3}, 0.5, init);
    auto codes = model.project_to_code(
        nullptr, model.encode(nullptr, model.patch_embed(nullptr, img)));
    zq = quantize(codes, cb);
  }
};

}  // namespace

TEST_CASE("schedule degenerate and uniform cases") {
  auto s1 = make_schedule(1, 64, "cosine");
  CHECK(s1.counts == std::vector<int64_t>({64}));

  auto su = make_schedule(8, 64, "uniform");
  CHECK(su.counts == std::vector<int64_t>({8, 8, 8, 8, 8, 8, 8, 8}));

  auto sr = make_schedule(3, 8, "uniform");
  CHECK(sr.counts == std::vector<int64_t>({2, 3, 3}));
}

TEST_CASE("cosine schedule matches the discretization oracle") {
  // ceil(64*cos(pi*t/16)) boundaries differenced: no repair needed.
  auto s = make_schedule(8, 64, "cosine");
  CHECK(s.counts == std::vector<int64_t>({1, 3, 6, 8, 10, 11, 12, 13}));

  // ceil(16*cos(pi*t/16)) gives a zero first step; one reveal moves over
  // from the largest step.
  auto r = make_schedule(8, 16, "cosine");
  CHECK(r.counts == std::vector<int64_t>({1, 1, 1, 2, 3, 2, 3, 3}));
}

TEST_CASE("schedule validity over a sweep") {
  for (int64_t L2 : {4, 16, 64, 100, 256}) {
    for (int T = 1; T <= 16 && T <= L2; ++T) {
      for (const char* mode : {"cosine", "uniform"}) {
        auto s = make_schedule(T, L2, mode);
        int64_t sum = 0;
        for (auto c : s.counts) {
          CHECK(c >= 1);
          sum += c;
        }
        CHECK(sum == L2);
        CHECK(int(s.counts.size()) == T);
      }
    }
  }
}

TEST_CASE("schedule bounds") {
  CHECK_THROWS_AS(make_schedule(0, 64, "cosine"), Error);
  CHECK_THROWS_AS(make_schedule(65, 64, "cosine"), Error);
  CHECK_THROWS_AS(make_schedule(4, 64, "linear"), Error);
}

TEST_CASE("greedy first step equals the argmax of one decode pass") {
  Fixture f;
  Rng rng(1);
  auto pred = first_step_predict(f.zq, f.model, 0.0, rng);

  MaskState st = fully_masked(2, 16, 12);
  auto logits = f.model.decode_step(nullptr, st, f.zq.data);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < 16; ++i) {
      int64_t arg = 0;
      for (int64_t v = 1; v < 12; ++v)
        if (logits->v[(b * 16 + i) * 12 + v] >
            logits->v[(b * 16 + i) * 12 + arg])
          arg = v;
      CHECK(pred.at(b, i) == int32_t(arg));
    }
}

TEST_CASE("sampled first step reproduces under a fixed seed") {
  Fixture f;
  Rng a(42), b(42), c(43);
  auto pa = first_step_predict(f.zq, f.model, 1.0, a);
  auto pb = first_step_predict(f.zq, f.model, 1.0, b);
  CHECK(pa.ids == pb.ids);
  auto pc = first_step_predict(f.zq, f.model, 1.0, c);
  bool same = pa.ids == pc.ids;
  CHECK(!same);  // 32 positions over 12 symbols: collision is negligible
}

TEST_CASE("overwhelming logit wins at any temperature") {
  Fixture f;
  auto hw = f.model.params().get("dec.head.w");
  auto hb = f.model.params().get("dec.head.b");
  std::fill(hw->v.begin(), hw->v.end(), 0.0);
  std::fill(hb->v.begin(), hb->v.end(), -50.0);
  hb->v[3] = 50.0;
  for (double temp : {0.0, 0.5, 1.0, 2.0}) {
    Rng rng(5);
    auto pred = first_step_predict(f.zq, f.model, temp, rng);
    for (auto id : pred.ids) CHECK(id == 3);
  }
}

TEST_CASE("replacement sources are read lazily") {
  Rng rng(7);
  const int64_t L2 = 10;
  MaskState st = fully_masked(1, L2, 4);
  TokenGrid pred = make_token_grid(1, L2, 4);
  TokenGrid truth = make_token_grid(1, L2, 4);
  std::vector<int64_t> all(L2);
  for (int64_t i = 0; i < L2; ++i) all[size_t(i)] = i;

  // ratio 1.0: truth holds poison values; committing one would throw.
  for (auto& x : truth.ids) x = -1;
  for (auto& x : pred.ids) x = 2;
  MaskState r1 = sfvr_replace(st, pred, {all}, 1.0, truth, rng);
  for (int64_t i = 0; i < L2; ++i) {
    CHECK(r1.is_resolved(0, i));
    CHECK(r1.token(0, i) == 2);
  }
  CHECK(r1.step_index == 1);

  // ratio 0.0: poison on the prediction side.
  for (auto& x : truth.ids) x = 1;
  for (auto& x : pred.ids) x = -1;
  MaskState r0 = sfvr_replace(st, pred, {all}, 0.0, truth, rng);
  for (int64_t i = 0; i < L2; ++i) CHECK(r0.token(0, i) == 1);
}

TEST_CASE("replacement ratio follows binomial bounds") {
  Rng rng(11);
  const int64_t L2 = 1000;
  MaskState st = fully_masked(1, L2, 4);
  TokenGrid pred = make_token_grid(1, L2, 4);
  TokenGrid truth = make_token_grid(1, L2, 4);
  for (auto& x : pred.ids) x = 1;
  std::vector<int64_t> all(L2);
  for (int64_t i = 0; i < L2; ++i) all[size_t(i)] = i;

  MaskState r = sfvr_replace(st, pred, {all}, 0.5, truth, rng);
  int64_t took_pred = 0;
  for (int64_t i = 0; i < L2; ++i) took_pred += r.token(0, i) == 1;
  CHECK(took_pred >= 400);
  CHECK(took_pred <= 600);
}

TEST_CASE("replacement refuses resolved positions and partial reveals work") {
  Rng rng(13);
  MaskState st = fully_masked(2, 6, 4);
  commit_position(st, 0, 2, 3);
  TokenGrid pred = make_token_grid(2, 6, 4);
  TokenGrid truth = make_token_grid(2, 6, 4);

  CHECK_THROWS_AS(sfvr_replace(st, pred, {{2}, {}}, 1.0, truth, rng), Error);

  MaskState ok = sfvr_replace(st, pred, {{0, 1}, {4}}, 1.0, truth, rng);
  CHECK(ok.resolved_count(0) == 3);
  CHECK(ok.resolved_count(1) == 1);
  CHECK(ok.is_resolved(0, 2));  // prior commitment untouched
  CHECK(ok.token(0, 2) == 3);
  CHECK(!st.is_resolved(0, 0));  // input state untouched
}

TEST_CASE("single step reconstruction equals the first-step prediction") {
  Fixture f;
  auto sched = make_schedule(1, 16, "cosine");
  for (double temp : {0.0, 1.0}) {
    Rng a(99), b(99);
    auto multi = multistep_reconstruct(f.zq, f.model, sched, temp, a);
    auto first = first_step_predict(f.zq, f.model, temp, b);
    CHECK(multi.ids == first.ids);
  }
}

TEST_CASE("reconstruction follows the schedule and commits once") {
  Fixture f;
  auto sched = make_schedule(5, 16, "cosine");
  Rng rng(3);
  std::vector<int64_t> prefix;
  int64_t acc = 0;
  for (auto c : sched.counts) prefix.push_back(acc += c);

  int calls = 0;
  auto grid = multistep_reconstruct(
      f.zq, f.model, sched, 1.0, rng, [&](const StepCapture& cap) {
        CHECK(cap.step == calls);
        for (int64_t b = 0; b < 2; ++b) {
          CHECK(cap.after->resolved_count(b) == prefix[size_t(cap.step)]);
          // Nothing previously resolved ever flips.
          for (int64_t i = 0; i < 16; ++i)
            if (cap.before->is_resolved(b, i)) {
              CHECK(cap.after->is_resolved(b, i));
              CHECK(cap.after->token(b, i) == cap.before->token(b, i));
            }
        }
        CHECK(cap.logits->shape == std::vector<int64_t>({2, 16, 12}));
        ++calls;
      });
  CHECK(calls == 5);
  check_token_grid(grid);
  CHECK(grid.batch == 2);
  CHECK(grid.length == 16);
}

TEST_CASE("reconstruction is deterministic given the seed") {
  Fixture f;
  auto sched = make_schedule(4, 16, "cosine");
  Rng a(21), b(21), c(22);
  auto ga = multistep_reconstruct(f.zq, f.model, sched, 1.0, a);
  auto gb = multistep_reconstruct(f.zq, f.model, sched, 1.0, b);
  CHECK(ga.ids == gb.ids);
  auto gc = multistep_reconstruct(f.zq, f.model, sched, 1.0, c);
  bool same = ga.ids == gc.ids;
  CHECK(!same);
}

TEST_CASE("reconstruction rejects a mismatched schedule") {
  Fixture f;
  auto sched = make_schedule(4, 12, "uniform");  // grid is 16
  Rng rng(1);
  CHECK_THROWS_AS(multistep_reconstruct(f.zq, f.model, sched, 1.0, rng), Error);
}
