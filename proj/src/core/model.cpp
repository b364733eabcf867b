#include "core/model.hpp"

#include <cmath>

namespace sftok {

using nn::real;
using nn::TensorPtr;

TokenizerModel::TokenizerModel(const RunConfig& rc, Rng& init_rng) {
  resolution_ = rc.resolution();
  patch_ = rc.vq_model.vit_enc_patch_size;
  k_ = rc.vq_model.num_latent_tokens;
  d_ = rc.vq_model.token_size;
  n_ = rc.vq_model.codebook_size;
  v_ = rc.decoder.codebook_size;
  l1_ = rc.patch_count();
  l2_ = rc.teacher_grid_length();
  de_ = rc.vq_model.enc_dims.width;
  dd_ = rc.decoder.dec_dims.width;

  const real sd = 0.02;
  const int64_t pdim = int64_t(patch_) * patch_ * 3;

  patch_w_ = params_.randn("enc.patch_proj.w", {pdim, de_}, sd, init_rng);
  patch_b_ = params_.zeros("enc.patch_proj.b", {de_});
  patch_pos_ = params_.randn("enc.patch_pos", {l1_, de_}, sd, init_rng);
  query_ = params_.randn("enc.query", {int64_t(k_), de_}, sd, init_rng);
  enc_stack_ = nn::TransformerStack::create(
      params_, "enc", rc.vq_model.enc_dims.num_layers, de_,
      rc.vq_model.enc_dims.num_heads, rc.vq_model.enc_dims.mlp_dim, init_rng);
  to_code_w_ = params_.randn("enc.to_code.w", {de_, int64_t(d_)}, sd, init_rng);
  to_code_b_ = params_.zeros("enc.to_code.b", {int64_t(d_)});

  codebook_ = params_.randn("cb.vectors", {int64_t(n_), int64_t(d_)},
                            1.0 / std::sqrt(real(d_)), init_rng);
  if (rc.vq_model.use_l2_norm) {
    for (int64_t r = 0; r < n_; ++r) {
      real s = 0;
      for (int64_t c = 0; c < d_; ++c) s += codebook_->v[r * d_ + c] * codebook_->v[r * d_ + c];
      s = 1.0 / std::sqrt(std::max(s, real(1e-24)));
      for (int64_t c = 0; c < d_; ++c) codebook_->v[r * d_ + c] *= s;
    }
  }

  from_code_w_ = params_.randn("dec.from_code.w", {int64_t(d_), dd_}, sd, init_rng);
  from_code_b_ = params_.zeros("dec.from_code.b", {dd_});
  latent_pos_ = params_.randn("dec.latent_pos", {int64_t(k_), dd_}, sd, init_rng);
  tok_table_ = params_.randn("dec.tok_embed", {int64_t(v_) + 1, dd_}, sd, init_rng);
  grid_pos_ = params_.randn("dec.grid_pos", {l2_, dd_}, sd, init_rng);
  dec_stack_ = nn::TransformerStack::create(
      params_, "dec", rc.decoder.dec_dims.num_layers, dd_,
      rc.decoder.dec_dims.num_heads, rc.decoder.dec_dims.mlp_dim, init_rng);
  head_w_ = params_.randn("dec.head.w", {dd_, int64_t(v_)}, sd, init_rng);
  head_b_ = params_.zeros("dec.head.b", {int64_t(v_)});
}

TensorPtr TokenizerModel::patch_embed(nn::Tape* tape,
                                      const TensorPtr& images) const {
  check(images->rank() == 4 && images->dim(1) == resolution_ &&
            images->dim(2) == resolution_ && images->dim(3) == 3,
        ErrorCode::shape_mismatch,
        "patch_embed expects [B," + std::to_string(resolution_) + "," +
            std::to_string(resolution_) + ",3], got " + images->shape_str());
  auto patches = nn::extract_patches(tape, images, patch_);
  auto x = nn::linear(tape, patches, patch_w_, patch_b_);
  return nn::add_seq_bias(tape, x, patch_pos_);
}

TensorPtr TokenizerModel::encode(nn::Tape* tape,
                                 const TensorPtr& patches) const {
  check(patches->rank() == 3 && patches->dim(1) == l1_ &&
            patches->dim(2) == de_,
        ErrorCode::shape_mismatch,
        "encode expects [B," + std::to_string(l1_) + "," +
            std::to_string(de_) + "], got " + patches->shape_str());
  const int64_t B = patches->dim(0);
  auto zero = nn::zeros_tensor({B, int64_t(k_), de_});
  auto queries = nn::add_seq_bias(tape, zero, query_);
  auto seq = nn::concat_seq(tape, patches, queries);
  auto h = enc_stack_.forward(tape, seq);
  return nn::slice_seq(tape, h, l1_, k_);
}

TensorPtr TokenizerModel::project_to_code(nn::Tape* tape,
                                          const TensorPtr& ze) const {
  check(ze->rank() == 3 && ze->dim(1) == k_ && ze->dim(2) == de_,
        ErrorCode::shape_mismatch,
        "project_to_code expects [B," + std::to_string(k_) + "," +
            std::to_string(de_) + "], got " + ze->shape_str());
  return nn::linear(tape, ze, to_code_w_, to_code_b_);
}

TensorPtr TokenizerModel::decode_step(nn::Tape* tape, const MaskState& state,
                                      const TensorPtr& zq_codes) const {
  check(state.length == l2_ && state.vocab == v_, ErrorCode::shape_mismatch,
        "decode_step: mask state does not match the decoder grid");
  check(zq_codes->rank() == 3 && zq_codes->dim(0) == state.batch &&
            zq_codes->dim(1) == k_ && zq_codes->dim(2) == d_,
        ErrorCode::shape_mismatch,
        "decode_step expects codes [B," + std::to_string(k_) + "," +
            std::to_string(d_) + "], got " + zq_codes->shape_str());
  const int64_t B = state.batch;

  std::vector<int64_t> ids(size_t(B) * size_t(l2_));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < l2_; ++i) {
      if (state.is_resolved(b, i)) {
        const int32_t t = state.token(b, i);
        check(t >= 0 && t < v_, ErrorCode::out_of_range,
              "decode_step: resolved token outside the vocabulary");
        ids[b * l2_ + i] = t;
      } else {
        ids[b * l2_ + i] = v_;  // shared mask embedding row
      }
    }
  auto grid = nn::embedding(tape, tok_table_, ids, {B, l2_});
  grid = nn::add_seq_bias(tape, grid, grid_pos_);

  auto lat = nn::linear(tape, zq_codes, from_code_w_, from_code_b_);
  lat = nn::add_seq_bias(tape, lat, latent_pos_);

  auto seq = nn::concat_seq(tape, grid, lat);
  auto h = dec_stack_.forward(tape, seq);
  auto out = nn::slice_seq(tape, h, 0, l2_);
  return nn::linear(tape, out, head_w_, head_b_);
}

bool TokenizerModel::is_encoder_param(const std::string& name) {
  return name.rfind("enc.", 0) == 0;
}
bool TokenizerModel::is_codebook_param(const std::string& name) {
  return name.rfind("cb.", 0) == 0;
}
bool TokenizerModel::is_decoder_param(const std::string& name) {
  return name.rfind("dec.", 0) == 0;
}

}  // namespace sftok
