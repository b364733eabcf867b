#pragma once

#include "core/model.hpp"
#include "data/dataset.hpp"
#include "nn/optim.hpp"
#include "nn/transformer.hpp"
#include "vq/quantizer.hpp"

namespace sftok {

// In-repo stand-in for a pretrained grid tokenizer: a patch VQ encoder that
// produces the per-image token grid the student learns to predict, plus a
// pixel decoder mapping code-space grid features back to an image. The
// encoder and code table stay frozen once pretrained; the pixel decoder is
// additionally trainable during the pixel fine-tuning stage.
class TeacherModel {
 public:
  TeacherModel(const RunConfig& rc, Rng& init_rng);

  // [B,H,W,3] -> pre-quantization grid features [B, L2, dt].
  nn::TensorPtr encode_features(nn::Tape* tape,
                                const nn::TensorPtr& images) const;
  // Hard tokenization of a batch (deterministic, no gradients).
  TokenGrid tokenize(const nn::TensorPtr& images) const;
  // Code-space grid features [B, L2, dt] -> images [B,H,W,3] in (-1,1).
  nn::TensorPtr decode_pixels(nn::Tape* tape, const nn::TensorPtr& codes) const;
  // Pixel reconstruction from hard token ids.
  nn::TensorPtr decode_tokens(nn::Tape* tape, const TokenGrid& ids) const;
  // Differentiable stage-3 path: per-position distributions with hard sampled
  // ids, embedded through the frozen code table.
  nn::TensorPtr decode_mixture(nn::Tape* tape, const nn::TensorPtr& probs,
                               const std::vector<int64_t>& sampled_ids,
                               int64_t batch) const;

  Codebook codebook() const { return {codebook_, true}; }
  nn::ParamRegistry& params() { return params_; }
  const nn::ParamRegistry& params() const { return params_; }

  static bool is_pixel_decoder_param(const std::string& name) {
    return name.rfind("tdec.", 0) == 0;
  }

  int resolution() const { return resolution_; }
  int64_t grid_length() const { return l2_; }
  int vocab() const { return v_; }
  int code_dim() const { return dt_; }

 private:
  nn::ParamRegistry params_;
  int resolution_, patch_, v_, dt_;
  int64_t l2_, w_;
  nn::TensorPtr enc_patch_w_, enc_patch_b_, enc_pos_;
  nn::TransformerStack enc_stack_;
  nn::TensorPtr to_code_w_, to_code_b_;
  nn::TensorPtr codebook_;
  nn::TensorPtr dec_in_w_, dec_in_b_, dec_pos_;
  nn::TransformerStack dec_stack_;
  nn::TensorPtr to_pix_w_, to_pix_b_;
};

class LossCsv;

// VQ-autoencoder pretraining on the training corpus; returns the final
// reconstruction loss for smoke checks. Appends rows to `csv` when non-null.
double train_teacher(TeacherModel& teacher, const Dataset& train,
                     const RunConfig& rc, RngPool& pool, LossCsv* csv);

}  // namespace sftok
