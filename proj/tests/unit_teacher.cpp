#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "data/dataset.hpp"
#include "doctest.h"
#include "train/aux_models.hpp"
#include "train/teacher.hpp"
#include "util/csv.hpp"

using namespace sftok;
using nn::Tape;
using nn::TensorPtr;

namespace {

// 16x16 images, teacher grid 2x2, everything narrow.
RunConfig tiny_config() {
  Json j = Json::object();
  j["dataset"]["preprocessing"]["resize_shorter_edge"] = 16;
  j["dataset"]["preprocessing"]["crop_size"] = 16;
  j["dataset"]["params"]["num_classes"] = 4;
  j["experiment"]["max_train_examples"] = 32;
  j["experiment"]["eval_examples"] = 8;
  j["model"]["decoder"]["vit_dec_patch_size"] = 8;
  j["model"]["decoder"]["codebook_size"] = 24;
  j["model"]["decoder"]["token_size"] = 6;
  j["model"]["decoder"]["num_proxy_codes"] = 4;
  j["model"]["vq_model"]["token_size"] = 6;
  j["teacher"]["width"] = 32;
  j["teacher"]["num_layers"] = 1;
  j["teacher"]["num_heads"] = 2;
  j["teacher"]["pixel_num_layers"] = 1;
  j["teacher"]["max_train_steps"] = 80;
  j["teacher"]["batch_size"] = 8;
  j["classifier"]["width"] = 32;
  j["classifier"]["num_layers"] = 2;
  j["classifier"]["num_heads"] = 2;
  j["classifier"]["max_train_steps"] = 300;
  j["classifier"]["batch_size"] = 8;
  return parse_config(j);
}

double recon_mse(const TeacherModel& t, const TensorPtr& images) {
  auto ids = t.tokenize(images);
  auto rec = t.decode_tokens(nullptr, ids);
  return nn::mse(nullptr, rec, images)->v[0];
}

}  // namespace

TEST_CASE("teacher geometry and parameter partition") {
  RunConfig rc = tiny_config();
  Rng rng(1);
  TeacherModel t(rc, rng);
  CHECK(t.resolution() == 16);
  CHECK(t.grid_length() == 4);
  CHECK(t.vocab() == 24);
  CHECK(t.code_dim() == 6);

  int enc = 0, cb = 0, dec = 0;
  for (const auto& name : t.params().names()) {
    if (name.rfind("tenc.", 0) == 0) enc++;
    else if (name.rfind("tcb.", 0) == 0) cb++;
    else {
      REQUIRE(TeacherModel::is_pixel_decoder_param(name));
      dec++;
    }
  }
  CHECK(enc > 0);
  CHECK(cb == 1);
  CHECK(dec > 0);

  Codebook book = t.codebook();
  CHECK(book.size() == 24);
  CHECK(book.dim() == 6);
  for (int64_t r = 0; r < 24; ++r) {
    double n2 = 0;
    for (int64_t c = 0; c < 6; ++c) {
      double x = book.vectors->v[size_t(r * 6 + c)];
      n2 += x * x;
    }
    CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("tokenize is deterministic and grid-shaped") {
  RunConfig rc = tiny_config();
  Rng rng(2);
  TeacherModel t(rc, rng);
  SyntheticDataset ds(6, 4, 16, 5, "train");
  std::vector<Image> ims;
  for (int64_t i = 0; i < 3; ++i) ims.push_back(ds.example(i).image);
  auto batch = image_batch_tensor(ims);

  TokenGrid a = t.tokenize(batch);
  TokenGrid b = t.tokenize(batch);
  CHECK(a.batch == 3);
  CHECK(a.length == 4);
  CHECK(a.vocab == 24);
  CHECK(a.ids == b.ids);
  check_token_grid(a);
}

TEST_CASE("pixel decoder emits bounded images; mixture path matches hard ids") {
  RunConfig rc = tiny_config();
  Rng rng(3);
  TeacherModel t(rc, rng);
  TokenGrid ids = make_token_grid(2, 4, 24);
  for (int64_t r = 0; r < 8; ++r) ids.ids[size_t(r)] = int32_t((r * 5) % 24);

  auto img = t.decode_tokens(nullptr, ids);
  CHECK(img->rank() == 4);
  CHECK(img->dim(0) == 2);
  CHECK(img->dim(1) == 16);
  CHECK(img->dim(3) == 3);
  for (double v : img->v) CHECK(std::abs(v) < 1.0);

  // Same ids through the sampled-mixture path: identical forward values.
  auto probs = nn::make_tensor({2, 4, 24});
  std::vector<int64_t> flat(ids.ids.begin(), ids.ids.end());
  for (int64_t r = 0; r < 8; ++r) probs->v[size_t(r * 24 + flat[size_t(r)])] = 1.0;
  auto img2 = t.decode_mixture(nullptr, probs, flat, 2);
  for (size_t i = 0; i < img->v.size(); ++i)
    CHECK(img2->v[i] == doctest::Approx(img->v[i]).epsilon(1e-12));

  TokenGrid wrong = make_token_grid(2, 4, 23);
  CHECK_THROWS_AS(t.decode_tokens(nullptr, wrong), Error);
}

TEST_CASE("mixture gradient reaches the distributions but not a frozen table") {
  RunConfig rc = tiny_config();
  Rng rng(4);
  TeacherModel t(rc, rng);
  t.params().get("tcb.vectors")->requires_grad = false;
  auto probs = nn::make_tensor({1, 4, 24});
  std::vector<int64_t> flat = {1, 2, 3, 4};
  for (int64_t r = 0; r < 4; ++r) {
    for (int64_t c = 0; c < 24; ++c) probs->v[size_t(r * 24 + c)] = 1.0 / 24.0;
  }
  probs->requires_grad = true;

  Tape tape;
  auto img = t.decode_mixture(&tape, probs, flat, 1);
  tape.backward(nn::mean_all(&tape, img));
  double g = 0;
  for (double x : probs->g) g += std::abs(x);
  CHECK(g > 0.0);
  CHECK(t.params().get("tcb.vectors")->g.empty());
}

TEST_CASE("teacher pretraining reduces reconstruction error") {
  RunConfig rc = tiny_config();
  auto pair = open_datasets(rc);
  Rng init(7);
  TeacherModel t(rc, init);
  RngPool pool(123);

  std::vector<Image> probe;
  for (int64_t i = 0; i < 8; ++i) probe.push_back(pair.train->example(i).image);
  auto probe_batch = image_batch_tensor(probe);

  const double before = recon_mse(t, probe_batch);
  auto dir = std::filesystem::temp_directory_path() / "sftok_teacher_csv";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  LossCsv csv((dir / "teacher.csv").string(), rc.config_hash());
  const double last = train_teacher(t, *pair.train, rc, pool, &csv);
  const double after = recon_mse(t, probe_batch);

  CHECK(last < before);
  CHECK(after < 0.8 * before);

  LossTable table = load_loss_csv((dir / "teacher.csv").string());
  CHECK(table.config_hash == rc.config_hash());
  bool saw_recon = false, saw_vq = false;
  for (auto& row : table.rows) {
    if (row.term == "teacher_recon") saw_recon = true;
    if (row.term == "teacher_vq") saw_vq = true;
    CHECK(row.stage == 0);
  }
  CHECK(saw_recon);
  CHECK(saw_vq);
  std::filesystem::remove_all(dir);
}

TEST_CASE("classifier learns the synthetic families") {
  RunConfig rc = tiny_config();
  auto pair = open_datasets(rc);
  Rng init(11);
  Classifier clf(rc, init);
  CHECK(clf.num_classes() == 4);
  CHECK(clf.feature_dim() == 32);

  RngPool pool(55);
  const double acc = train_classifier(clf, *pair.train, rc, pool, nullptr);
  CHECK(acc > 0.5);  // chance is 0.25

  std::vector<Image> ims;
  for (int64_t i = 0; i < 5; ++i) ims.push_back(pair.eval->example(i).image);
  auto batch = image_batch_tensor(ims);
  auto feats = clf.features(nullptr, batch);
  CHECK(feats->dim(0) == 5);
  CHECK(feats->dim(1) == 32);
  auto logits = clf.logits(nullptr, batch);
  CHECK(logits->dim(1) == 4);
}

TEST_CASE("discriminator scores one number per image") {
  RunConfig rc = tiny_config();
  Rng init(13);
  Discriminator d(rc, init);
  SyntheticDataset ds(4, 4, 16, 21, "train");
  std::vector<Image> ims;
  for (int64_t i = 0; i < 4; ++i) ims.push_back(ds.example(i).image);
  auto batch = image_batch_tensor(ims);
  auto s = d.score(nullptr, batch);
  CHECK(s->rank() == 2);
  CHECK(s->dim(0) == 4);
  CHECK(s->dim(1) == 1);

  bool varies = false;
  for (int i = 1; i < 4; ++i)
    if (s->v[size_t(i)] != s->v[0]) varies = true;
  CHECK(varies);

  for (const auto& name : d.params().names())
    CHECK(name.rfind("disc.", 0) == 0);
}
