#pragma once

#include "data/dataset.hpp"
#include "nn/optim.hpp"
#include "nn/transformer.hpp"
#include "util/csv.hpp"

namespace sftok {

// Small ViT classifier over the corpus labels. Doubles as the fixed feature
// network: pooled features drive the perceptual loss and the distribution
// metrics, class probabilities drive the inception-style score.
class Classifier {
 public:
  Classifier(const RunConfig& rc, Rng& init_rng);

  // [B,H,W,3] -> pooled features [B, width].
  nn::TensorPtr features(nn::Tape* tape, const nn::TensorPtr& images) const;
  // [B,H,W,3] -> class logits [B, C].
  nn::TensorPtr logits(nn::Tape* tape, const nn::TensorPtr& images) const;

  nn::ParamRegistry& params() { return params_; }
  const nn::ParamRegistry& params() const { return params_; }
  int num_classes() const { return classes_; }
  int64_t feature_dim() const { return w_; }
  int resolution() const { return resolution_; }

 private:
  nn::ParamRegistry params_;
  int resolution_, patch_, classes_;
  int64_t l_, w_;
  nn::TensorPtr patch_w_, patch_b_, pos_;
  nn::TransformerStack stack_;
  nn::TensorPtr head_w_, head_b_;
};

// Cross-entropy training on corpus labels; returns final-epoch train accuracy.
double train_classifier(Classifier& clf, const Dataset& train,
                        const RunConfig& rc, RngPool& pool, LossCsv* csv);

// Patch ViT discriminator emitting one realism score per image.
class Discriminator {
 public:
  Discriminator(const RunConfig& rc, Rng& init_rng);

  // [B,H,W,3] -> scores [B, 1].
  nn::TensorPtr score(nn::Tape* tape, const nn::TensorPtr& images) const;

  nn::ParamRegistry& params() { return params_; }
  const nn::ParamRegistry& params() const { return params_; }

 private:
  nn::ParamRegistry params_;
  int resolution_, patch_;
  int64_t l_, w_;
  nn::TensorPtr patch_w_, patch_b_, pos_;
  nn::TransformerStack stack_;
  nn::TensorPtr head_w_, head_b_;
};

}  // namespace sftok
