#include "train/teacher.hpp"

#include <cstdio>

#include "util/csv.hpp"

namespace sftok {

using nn::real;
using nn::TensorPtr;

TeacherModel::TeacherModel(const RunConfig& rc, Rng& init_rng) {
  resolution_ = rc.resolution();
  patch_ = rc.decoder.vit_dec_patch_size;
  v_ = rc.decoder.codebook_size;
  dt_ = rc.decoder.token_size;
  l2_ = rc.teacher_grid_length();
  w_ = rc.teacher.width;

  const real sd = 0.02;
  const int64_t pdim = int64_t(patch_) * patch_ * 3;

  enc_patch_w_ = params_.randn("tenc.patch_proj.w", {pdim, w_}, sd, init_rng);
  enc_patch_b_ = params_.zeros("tenc.patch_proj.b", {w_});
  enc_pos_ = params_.randn("tenc.pos", {l2_, w_}, sd, init_rng);
  enc_stack_ =
      nn::TransformerStack::create(params_, "tenc", rc.teacher.num_layers, w_,
                                   rc.teacher.num_heads, 2 * w_, init_rng);
  to_code_w_ = params_.randn("tenc.to_code.w", {w_, int64_t(dt_)}, sd, init_rng);
  to_code_b_ = params_.zeros("tenc.to_code.b", {int64_t(dt_)});

  codebook_ = params_.randn("tcb.vectors", {int64_t(v_), int64_t(dt_)},
                            1.0 / std::sqrt(real(dt_)), init_rng);
  {
    Codebook cb{codebook_, true};
    renormalize(cb);
  }

  dec_in_w_ = params_.randn("tdec.from_code.w", {int64_t(dt_), w_}, sd, init_rng);
  dec_in_b_ = params_.zeros("tdec.from_code.b", {w_});
  dec_pos_ = params_.randn("tdec.pos", {l2_, w_}, sd, init_rng);
  dec_stack_ = nn::TransformerStack::create(params_, "tdec",
                                            rc.teacher.pixel_num_layers, w_,
                                            rc.teacher.num_heads, 2 * w_,
                                            init_rng);
  to_pix_w_ = params_.randn("tdec.to_pixels.w", {w_, pdim}, sd, init_rng);
  to_pix_b_ = params_.zeros("tdec.to_pixels.b", {pdim});
}

TensorPtr TeacherModel::encode_features(nn::Tape* tape,
                                        const TensorPtr& images) const {
  check(images->rank() == 4 && images->dim(1) == resolution_ &&
            images->dim(2) == resolution_ && images->dim(3) == 3,
        ErrorCode::shape_mismatch,
        "teacher expects [B," + std::to_string(resolution_) + "," +
            std::to_string(resolution_) + ",3], got " + images->shape_str());
  auto patches = nn::extract_patches(tape, images, patch_);
  auto x = nn::linear(tape, patches, enc_patch_w_, enc_patch_b_);
  x = nn::add_seq_bias(tape, x, enc_pos_);
  x = enc_stack_.forward(tape, x);
  return nn::linear(tape, x, to_code_w_, to_code_b_);
}

TokenGrid TeacherModel::tokenize(const TensorPtr& images) const {
  auto feats = encode_features(nullptr, images);
  return quantize(feats, codebook()).ids;
}

TensorPtr TeacherModel::decode_pixels(nn::Tape* tape,
                                      const TensorPtr& codes) const {
  check(codes->rank() == 3 && codes->dim(1) == l2_ && codes->dim(2) == dt_,
        ErrorCode::shape_mismatch,
        "pixel decoder expects [B," + std::to_string(l2_) + "," +
            std::to_string(dt_) + "], got " + codes->shape_str());
  auto x = nn::linear(tape, codes, dec_in_w_, dec_in_b_);
  x = nn::add_seq_bias(tape, x, dec_pos_);
  x = dec_stack_.forward(tape, x);
  x = nn::linear(tape, x, to_pix_w_, to_pix_b_);
  auto img = nn::merge_patches(tape, x, patch_, resolution_, resolution_);
  return nn::tanh_act(tape, img);
}

TensorPtr TeacherModel::decode_tokens(nn::Tape* tape,
                                      const TokenGrid& ids) const {
  check(ids.vocab == v_ && ids.length == l2_, ErrorCode::shape_mismatch,
        "token grid does not match the teacher vocabulary/grid");
  auto q = lookup(ids, codebook());
  return decode_pixels(tape, q.data);
}

TensorPtr TeacherModel::decode_mixture(nn::Tape* tape, const TensorPtr& probs,
                                       const std::vector<int64_t>& sampled_ids,
                                       int64_t batch) const {
  auto codes =
      nn::mixture_embedding_st(tape, probs, sampled_ids, codebook_, {batch, l2_});
  return decode_pixels(tape, codes);
}

double train_teacher(TeacherModel& teacher, const Dataset& train,
                     const RunConfig& rc, RngPool& pool, LossCsv* csv) {
  nn::AdamWConfig oc;
  oc.lr = 1e-3;
  oc.beta1 = rc.optimizer.beta1;
  oc.beta2 = rc.optimizer.beta2;
  oc.weight_decay = rc.optimizer.weight_decay;
  oc.max_grad_norm = rc.training.max_grad_norm;
  nn::AdamW opt(teacher.params(), oc);
  nn::LrSchedule sched;
  sched.base_lr = 1e-3;
  sched.end_lr = 1e-4;
  sched.total_steps = rc.teacher.max_train_steps;
  sched.warmup_steps = std::min<int64_t>(100, rc.teacher.max_train_steps / 10);

  BatchStream stream(train, rc.teacher.batch_size, rc.resolution(), true, true,
                     pool.stream("teacher.data").uniform_int(UINT32_MAX));
  Codebook cb = teacher.codebook();

  double last = 0.0;
  for (int64_t step = 0; step < rc.teacher.max_train_steps; ++step) {
    Batch b = stream.next_cycle();
    nn::Tape tape;
    auto feats = teacher.encode_features(&tape, b.images);
    auto ze = prepare_codes(&tape, feats, cb);
    auto q = quantize(ze, cb);
    auto zq_emb = embed_ids(&tape, q.ids, cb);
    auto vq_loss =
        quantizer_loss(&tape, ze, zq_emb, rc.vq_model.commitment_cost);
    auto st = nn::straight_through(&tape, ze, zq_emb);
    auto recon = teacher.decode_pixels(&tape, st);
    auto rec_loss = nn::mse(&tape, recon, nn::detach(b.images));
    auto total =
        nn::weighted_sum_scalars(&tape, {{1.0, rec_loss}, {1.0, vq_loss}});
    check(std::isfinite(total->v[0]), ErrorCode::numeric,
          "teacher training diverged (non-finite loss)");

    teacher.params().zero_grad();
    tape.backward(total);
    opt.step(sched.at(step));
    renormalize(cb);

    last = rec_loss->v[0];
    if (csv && (step % 50 == 0 || step + 1 == rc.teacher.max_train_steps)) {
      csv->append(step, 0, "teacher_recon", rec_loss->v[0]);
      csv->append(step, 0, "teacher_vq", vq_loss->v[0]);
    }
  }
  return last;
}

}  // namespace sftok
