#include "train/aux_models.hpp"

#include <cmath>

namespace sftok {

using nn::real;
using nn::TensorPtr;

Classifier::Classifier(const RunConfig& rc, Rng& init_rng) {
  resolution_ = rc.resolution();
  patch_ = rc.classifier.patch_size;
  classes_ = rc.dataset.num_classes;
  const int64_t grid = resolution_ / patch_;
  l_ = grid * grid;
  w_ = rc.classifier.width;

  const real sd = 0.02;
  const int64_t pdim = int64_t(patch_) * patch_ * 3;
  patch_w_ = params_.randn("clf.patch_proj.w", {pdim, w_}, sd, init_rng);
  patch_b_ = params_.zeros("clf.patch_proj.b", {w_});
  pos_ = params_.randn("clf.pos", {l_, w_}, sd, init_rng);
  stack_ = nn::TransformerStack::create(params_, "clf", rc.classifier.num_layers,
                                        w_, rc.classifier.num_heads, 2 * w_,
                                        init_rng);
  head_w_ = params_.randn("clf.head.w", {w_, int64_t(classes_)}, sd, init_rng);
  head_b_ = params_.zeros("clf.head.b", {int64_t(classes_)});
}

TensorPtr Classifier::features(nn::Tape* tape, const TensorPtr& images) const {
  check(images->rank() == 4 && images->dim(1) == resolution_ &&
            images->dim(2) == resolution_ && images->dim(3) == 3,
        ErrorCode::shape_mismatch,
        "classifier expects [B," + std::to_string(resolution_) + "," +
            std::to_string(resolution_) + ",3], got " + images->shape_str());
  auto x = nn::extract_patches(tape, images, patch_);
  x = nn::linear(tape, x, patch_w_, patch_b_);
  x = nn::add_seq_bias(tape, x, pos_);
  x = stack_.forward(tape, x);
  return nn::mean_pool_seq(tape, x);
}

TensorPtr Classifier::logits(nn::Tape* tape, const TensorPtr& images) const {
  return nn::linear(tape, features(tape, images), head_w_, head_b_);
}

double train_classifier(Classifier& clf, const Dataset& train,
                        const RunConfig& rc, RngPool& pool, LossCsv* csv) {
  nn::AdamWConfig oc;
  oc.lr = 1e-3;
  oc.beta1 = rc.optimizer.beta1;
  oc.beta2 = rc.optimizer.beta2;
  oc.weight_decay = rc.optimizer.weight_decay;
  oc.max_grad_norm = rc.training.max_grad_norm;
  nn::AdamW opt(clf.params(), oc);
  nn::LrSchedule sched;
  sched.base_lr = 1e-3;
  sched.end_lr = 1e-4;
  sched.total_steps = rc.classifier.max_train_steps;
  sched.warmup_steps = std::min<int64_t>(50, rc.classifier.max_train_steps / 10);

  BatchStream stream(train, rc.classifier.batch_size, rc.resolution(), true,
                     true, pool.stream("classifier.data").uniform_int(1 << 30));

  int64_t hits = 0, seen = 0;
  for (int64_t step = 0; step < rc.classifier.max_train_steps; ++step) {
    if (step % 200 == 0) {
      hits = 0;
      seen = 0;
    }
    Batch b = stream.next_cycle();
    const int64_t B = b.images->dim(0);
    nn::Tape tape;
    auto lg = clf.logits(&tape, b.images);
    std::vector<int64_t> targets(b.labels.begin(), b.labels.end());
    std::vector<real> weights(size_t(B), 1.0 / real(B));
    auto loss = nn::weighted_ce_sum(&tape, lg, targets, weights, 0.0);
    check(std::isfinite(loss->v[0]), ErrorCode::numeric,
          "classifier training diverged (non-finite loss)");
    clf.params().zero_grad();
    tape.backward(loss);
    opt.step(sched.at(step));

    for (int64_t i = 0; i < B; ++i) {
      int64_t arg = 0;
      const int C = clf.num_classes();
      for (int c = 1; c < C; ++c)
        if (lg->v[i * C + c] > lg->v[i * C + arg]) arg = c;
      hits += arg == targets[size_t(i)];
      ++seen;
    }
    if (csv && (step % 50 == 0 || step + 1 == rc.classifier.max_train_steps))
      csv->append(step, 0, "classifier_ce", loss->v[0]);
  }
  return seen > 0 ? double(hits) / double(seen) : 0.0;
}

Discriminator::Discriminator(const RunConfig& rc, Rng& init_rng) {
  resolution_ = rc.resolution();
  patch_ = rc.discriminator.patch_size;
  const int64_t grid = resolution_ / patch_;
  l_ = grid * grid;
  w_ = rc.discriminator.width;

  const real sd = 0.02;
  const int64_t pdim = int64_t(patch_) * patch_ * 3;
  patch_w_ = params_.randn("disc.patch_proj.w", {pdim, w_}, sd, init_rng);
  patch_b_ = params_.zeros("disc.patch_proj.b", {w_});
  pos_ = params_.randn("disc.pos", {l_, w_}, sd, init_rng);
  stack_ = nn::TransformerStack::create(params_, "disc",
                                        rc.discriminator.num_layers, w_,
                                        rc.discriminator.num_heads, 2 * w_,
                                        init_rng);
  head_w_ = params_.randn("disc.head.w", {w_, 1}, sd, init_rng);
  head_b_ = params_.zeros("disc.head.b", {1});
}

TensorPtr Discriminator::score(nn::Tape* tape, const TensorPtr& images) const {
  check(images->rank() == 4 && images->dim(1) == resolution_ &&
            images->dim(2) == resolution_ && images->dim(3) == 3,
        ErrorCode::shape_mismatch,
        "discriminator expects [B," + std::to_string(resolution_) + "," +
            std::to_string(resolution_) + ",3], got " + images->shape_str());
  auto x = nn::extract_patches(tape, images, patch_);
  x = nn::linear(tape, x, patch_w_, patch_b_);
  x = nn::add_seq_bias(tape, x, pos_);
  x = stack_.forward(tape, x);
  x = nn::mean_pool_seq(tape, x);
  return nn::linear(tape, x, head_w_, head_b_);
}

}  // namespace sftok
