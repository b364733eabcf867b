#pragma once

#include <string>

#include "core/types.hpp"
#include "io/config.hpp"
#include "nn/transformer.hpp"

namespace sftok {

// The student tokenizer: patch embedder, query-token ViT encoder, projection
// into code space, and the masked-grid ViT decoder scoring the teacher
// vocabulary. The codebook itself lives in the quantizer module; this class
// registers its storage so checkpoints and freezing treat the model as one
// parameter set.
class TokenizerModel {
 public:
  TokenizerModel(const RunConfig& rc, Rng& init_rng);

  // [B,H,W,3] -> [B,L1,De]
  nn::TensorPtr patch_embed(nn::Tape* tape, const nn::TensorPtr& images) const;
  // [B,L1,De] -> Z_e [B,K,De]
  nn::TensorPtr encode(nn::Tape* tape, const nn::TensorPtr& patches) const;
  // Z_e [B,K,De] -> code-space features [B,K,d]
  nn::TensorPtr project_to_code(nn::Tape* tape, const nn::TensorPtr& ze) const;
  // Mask-state grid plus quantized codes [B,K,d] -> logits [B,L2,V]
  nn::TensorPtr decode_step(nn::Tape* tape, const MaskState& state,
                            const nn::TensorPtr& zq_codes) const;

  nn::ParamRegistry& params() { return params_; }
  const nn::ParamRegistry& params() const { return params_; }
  nn::TensorPtr codebook_vectors() const { return codebook_; }

  // Parameter-name predicates for per-stage freezing.
  static bool is_encoder_param(const std::string& name);
  static bool is_codebook_param(const std::string& name);
  static bool is_decoder_param(const std::string& name);

  int resolution() const { return resolution_; }
  int patch_size() const { return patch_; }
  int64_t patch_count() const { return l1_; }
  int num_latent_tokens() const { return k_; }
  int code_dim() const { return d_; }
  int codebook_size() const { return n_; }
  int teacher_vocab() const { return v_; }
  int64_t grid_length() const { return l2_; }

 private:
  nn::ParamRegistry params_;
  int resolution_, patch_, k_, d_, n_, v_;
  int64_t l1_, l2_;
  int64_t de_, dd_;

  nn::TensorPtr patch_w_, patch_b_, patch_pos_, query_;
  nn::TransformerStack enc_stack_;
  nn::TensorPtr to_code_w_, to_code_b_;
  nn::TensorPtr codebook_;
  nn::TensorPtr from_code_w_, from_code_b_, latent_pos_;
  nn::TensorPtr tok_table_, grid_pos_;  // tok_table_ row V is the mask embedding
  nn::TransformerStack dec_stack_;
  nn::TensorPtr head_w_, head_b_;
};

}  // namespace sftok
