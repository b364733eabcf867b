#include "train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "util/hash.hpp"

namespace sftok {

using nn::real;
using nn::Tape;
using nn::TensorPtr;

void set_trainable(nn::ParamRegistry& params,
                   const std::function<bool(const std::string&)>& trainable) {
  const auto& names = params.names();
  const auto& tensors = params.tensors();
  for (size_t i = 0; i < names.size(); ++i) {
    const bool on = trainable(names[i]);
    tensors[i]->requires_grad = on;
    if (!on) tensors[i]->g.clear();
  }
}

namespace {

constexpr bool kShuffle = true;
constexpr bool kAugment = true;

std::string fingerprint_of(const Json& slice) {
  return hash_hex(fnv1a64(canonical_dump(slice)));
}

// Everything that shapes the teacher's weights or its token grids.
Json teacher_slice(const RunConfig& rc) {
  Json j;
  j["seed"] = rc.experiment.seed;
  j["max_train_examples"] = rc.experiment.max_train_examples;
  j["teacher"] = {{"width", rc.teacher.width},
                  {"num_layers", rc.teacher.num_layers},
                  {"num_heads", rc.teacher.num_heads},
                  {"pixel_num_layers", rc.teacher.pixel_num_layers},
                  {"max_train_steps", rc.teacher.max_train_steps},
                  {"batch_size", rc.teacher.batch_size}};
  j["grid"] = {{"codebook_size", rc.decoder.codebook_size},
               {"token_size", rc.decoder.token_size},
               {"vit_dec_patch_size", rc.decoder.vit_dec_patch_size}};
  j["commitment_cost"] = rc.vq_model.commitment_cost;
  j["dataset"] = {{"dataset_type", rc.dataset.dataset_type},
                  {"manifest_path", rc.dataset.manifest_path},
                  {"num_classes", rc.dataset.num_classes},
                  {"resize_shorter_edge", rc.dataset.resize_shorter_edge},
                  {"crop_size", rc.dataset.crop_size}};
  return j;
}

Json classifier_slice(const RunConfig& rc) {
  Json j;
  j["seed"] = rc.experiment.seed;
  j["max_train_examples"] = rc.experiment.max_train_examples;
  j["classifier"] = {{"width", rc.classifier.width},
                     {"num_layers", rc.classifier.num_layers},
                     {"num_heads", rc.classifier.num_heads},
                     {"patch_size", rc.classifier.patch_size},
                     {"max_train_steps", rc.classifier.max_train_steps},
                     {"batch_size", rc.classifier.batch_size}};
  j["dataset"] = {{"dataset_type", rc.dataset.dataset_type},
                  {"manifest_path", rc.dataset.manifest_path},
                  {"num_classes", rc.dataset.num_classes},
                  {"resize_shorter_edge", rc.dataset.resize_shorter_edge},
                  {"crop_size", rc.dataset.crop_size}};
  return j;
}

std::vector<BlockRef> registry_blocks(nn::ParamRegistry& reg,
                                      const std::string& prefix = "") {
  std::vector<BlockRef> out;
  const auto& names = reg.names();
  const auto& tensors = reg.tensors();
  for (size_t i = 0; i < names.size(); ++i)
    out.push_back({prefix + names[i], &tensors[i]->v});
  return out;
}

}  // namespace

std::string teacher_fingerprint(const RunConfig& rc) {
  return fingerprint_of(teacher_slice(rc));
}

std::string classifier_fingerprint(const RunConfig& rc) {
  return fingerprint_of(classifier_slice(rc));
}

std::unique_ptr<TeacherModel> ensure_teacher(const RunConfig& rc,
                                             const Dataset& train,
                                             const std::string& cache_dir,
                                             LossCsv* csv) {
  const std::string fp = teacher_fingerprint(rc);
  const std::string path =
      (std::filesystem::path(cache_dir) / ("teacher_" + fp + ".ckpt")).string();

  // Weight init and pretraining randomness are derived from the fingerprint,
  // not the run's own streams, so every sharing run would reproduce the file.
  RngPool pool(rc.experiment.seed ^ fnv1a64("teacher:" + fp));
  Rng& init = pool.stream("teacher.init");
  auto teacher = std::make_unique<TeacherModel>(rc, init);

  if (std::filesystem::exists(path)) {
    auto blocks = registry_blocks(teacher->params());
    Codebook cb = teacher->codebook();
    CheckpointMeta meta = load_checkpoint(path, blocks, &cb);
    check(meta.kind == "teacher", ErrorCode::state,
          path + " is a '" + meta.kind + "' checkpoint");
    return teacher;
  }

  const double rec = train_teacher(*teacher, train, rc, pool, csv);
  CheckpointMeta meta;
  meta.kind = "teacher";
  meta.step = rc.teacher.max_train_steps;
  meta.config_hash = fp;
  meta.config = teacher_slice(rc);
  meta.rng = pool.serialize_all();
  meta.extra["final_recon"] = rec;
  auto blocks = registry_blocks(teacher->params());
  Codebook cb = teacher->codebook();
  save_checkpoint(path, meta, blocks, &cb);
  return teacher;
}

std::unique_ptr<Classifier> ensure_classifier(const RunConfig& rc,
                                              const Dataset& train,
                                              const std::string& cache_dir,
                                              LossCsv* csv) {
  const std::string fp = classifier_fingerprint(rc);
  const std::string path =
      (std::filesystem::path(cache_dir) / ("classifier_" + fp + ".ckpt"))
          .string();

  RngPool pool(rc.experiment.seed ^ fnv1a64("classifier:" + fp));
  Rng& init = pool.stream("classifier.init");
  auto clf = std::make_unique<Classifier>(rc, init);

  if (std::filesystem::exists(path)) {
    auto blocks = registry_blocks(clf->params());
    CheckpointMeta meta = load_checkpoint(path, blocks, nullptr);
    check(meta.kind == "classifier", ErrorCode::state,
          path + " is a '" + meta.kind + "' checkpoint");
    return clf;
  }

  const double acc = train_classifier(*clf, train, rc, pool, csv);
  CheckpointMeta meta;
  meta.kind = "classifier";
  meta.step = rc.classifier.max_train_steps;
  meta.config_hash = fp;
  meta.config = classifier_slice(rc);
  meta.rng = pool.serialize_all();
  meta.extra["train_accuracy"] = acc;
  auto blocks = registry_blocks(clf->params());
  save_checkpoint(path, meta, blocks, nullptr);
  return clf;
}

StageLoop::StageLoop(int stage, const RunConfig& rc, TokenizerModel& model,
                     TeacherModel& teacher, Classifier* perceptual,
                     const Dataset& train, RngPool& pool)
    : rc_(stage_view(rc, stage)),
      setup_(resolve_stage(rc, stage)),
      model_(model),
      teacher_(teacher),
      perceptual_(perceptual),
      pool_(pool),
      cb_{model.codebook_vectors(), rc.vq_model.use_l2_norm},
      stream_(train, setup_.batch_size, rc_.resolution(), kShuffle, kAugment,
              pool.stream("stage" + std::to_string(stage) + ".data")
                  .uniform_int(int64_t(UINT32_MAX))),
      hash_(rc.config_hash()) {
  check(model_.grid_length() == teacher_.grid_length() &&
            model_.teacher_vocab() == teacher_.vocab(),
        ErrorCode::shape_mismatch, "student and teacher grids disagree");
  check(setup_.stage != 3 || perceptual_ != nullptr, ErrorCode::invalid_argument,
        "the pixel stage needs the perceptual feature network");
  check(model_.grid_length() >= 2, ErrorCode::config,
        "guided masking needs a grid of at least two positions");

  const bool pixel = setup_.stage == 3;
  set_trainable(model_.params(), [&](const std::string& n) {
    return pixel ? TokenizerModel::is_decoder_param(n) : true;
  });
  set_trainable(teacher_.params(), [&](const std::string& n) {
    return pixel && TeacherModel::is_pixel_decoder_param(n);
  });
  if (perceptual_)
    set_trainable(perceptual_->params(), [](const std::string&) { return false; });

  // The stage optimizer and EMA cover exactly the trainable set, in registry
  // order (student first, then the teacher's pixel head in stage 3).
  {
    const auto& names = model_.params().names();
    const auto& tensors = model_.params().tensors();
    for (size_t i = 0; i < names.size(); ++i)
      if (tensors[i]->requires_grad) opt_reg_.add(names[i], tensors[i]);
  }
  if (pixel) {
    const auto& names = teacher_.params().names();
    const auto& tensors = teacher_.params().tensors();
    for (size_t i = 0; i < names.size(); ++i)
      if (tensors[i]->requires_grad) opt_reg_.add(names[i], tensors[i]);
  }

  nn::AdamWConfig oc;
  oc.lr = rc_.optimizer.learning_rate;
  oc.beta1 = rc_.optimizer.beta1;
  oc.beta2 = setup_.beta2;
  oc.weight_decay = rc_.optimizer.weight_decay;
  oc.max_grad_norm = rc_.training.max_grad_norm;
  opt_ = std::make_unique<nn::AdamW>(opt_reg_, oc);
  ema_ = std::make_unique<nn::Ema>(opt_reg_, rc_.training.ema_decay);

  sched_.base_lr = rc_.scheduler.learning_rate;
  sched_.end_lr = rc_.scheduler.end_lr;
  sched_.warmup_steps = rc_.scheduler.warmup_steps;
  sched_.total_steps = setup_.steps;

  if (pixel) {
    Rng& dinit = pool.stream("init.disc");
    disc_ = std::make_unique<Discriminator>(rc_, dinit);
    nn::AdamWConfig dc = oc;
    dc.lr = rc_.optimizer.discriminator_learning_rate;
    opt_d_ = std::make_unique<nn::AdamW>(disc_->params(), dc);
    lecam_state_.assign(2, 0.0);
  }
}

MaskState StageLoop::guided_state(const QuantizedLatent& q,
                                  const TokenGrid& truth) {
  const std::string tag = "stage" + std::to_string(setup_.stage);
  TokenGrid pred = first_step_predict(q, model_, rc_.decoder.randomize_temperature,
                                      pool_.stream(tag + ".sample"));

  Rng& mask_rng = pool_.stream(tag + ".mask");
  const int64_t B = q.ids.batch, L2 = model_.grid_length();
  std::vector<std::vector<int64_t>> reveals(size_t(B));
  for (int64_t b = 0; b < B; ++b) {
    const double u = mask_rng.uniform();
    int64_t n_masked = int64_t(std::llround(u * double(L2)));
    n_masked = std::max<int64_t>(1, std::min(L2 - 1, n_masked));
    const int64_t n_reveal = L2 - n_masked;
    auto perm = mask_rng.permutation(int(L2));
    reveals[size_t(b)].assign(perm.begin(), perm.begin() + n_reveal);
  }

  MaskState state = fully_masked(B, L2, model_.teacher_vocab());
  return sfvr_replace(state, pred, reveals, setup_.replace_prob, truth,
                      pool_.stream(tag + ".replace"));
}

void StageLoop::forward_tokens(Tape& tape, const Batch& batch,
                               LossReport& report, bool with_vq_term,
                               double inv_accum, TensorPtr* out_zq,
                               QuantizedLatent* out_q, MaskState* out_state,
                               TensorPtr* out_logits) {
  TokenGrid truth = teacher_.tokenize(batch.images);

  auto patches = model_.patch_embed(&tape, batch.images);
  auto feats = model_.encode(&tape, patches);
  auto codes = model_.project_to_code(&tape, feats);
  auto ze = prepare_codes(&tape, codes, cb_);
  QuantizedLatent q = quantize(ze, cb_);
  auto zq_emb = embed_ids(&tape, q.ids, cb_);
  auto zq = nn::straight_through(&tape, ze, zq_emb);

  MaskState state = setup_.guided_mask
                        ? guided_state(q, truth)
                        : fully_masked(q.ids.batch, model_.grid_length(),
                                       model_.teacher_vocab());
  auto logits = model_.decode_step(&tape, state, zq);

  std::vector<std::pair<real, TensorPtr>> parts;
  if (rc_.training.use_mlmloss && setup_.stage != 3) {
    auto ce = masked_ce_loss(&tape, logits, truth, state,
                             rc_.losses.loss_weight_unmasked_token,
                             rc_.losses.label_smoothing);
    parts.push_back({1.0, ce});
    report.add("token_ce", 1.0, report.find("token_ce")
                                    ? report.find("token_ce")->value +
                                          inv_accum * ce->v[0]
                                    : inv_accum * ce->v[0]);
    if (report.terms.size() >= 2 && report.terms[0].name == "token_ce" &&
        report.terms.back().name == "token_ce")
      report.terms.pop_back();
  }
  if (with_vq_term) {
    auto vq = quantizer_loss(&tape, ze, zq_emb, rc_.vq_model.commitment_cost);
    parts.push_back({rc_.losses.quantizer_weight, vq});
    if (auto* t = report.find("quantizer"))
      const_cast<LossReport::Term*>(t)->value += inv_accum * vq->v[0];
    else
      report.add("quantizer", rc_.losses.quantizer_weight, inv_accum * vq->v[0]);
  }

  if (!parts.empty()) {
    auto total = nn::weighted_sum_scalars(&tape, parts);
    check(std::isfinite(total->v[0]), ErrorCode::numeric,
          "stage " + std::to_string(setup_.stage) +
              " training diverged (non-finite loss)");
    auto scaled = inv_accum == 1.0 ? total : nn::scale(&tape, total, inv_accum);
    tape.backward(scaled);
  }

  last_usage_ = codebook_usage(q.ids, model_.codebook_size());
  if (out_zq) *out_zq = zq;
  if (out_q) *out_q = q;
  if (out_state) *out_state = std::move(state);
  if (out_logits) *out_logits = logits;
}

LossReport StageLoop::token_step() {
  LossReport report;
  const int accum = setup_.gradient_accumulation_steps;
  const double inv = 1.0 / double(accum);

  opt_reg_.zero_grad();
  for (int a = 0; a < accum; ++a) {
    Batch b = stream_.next_cycle();
    Tape tape;
    forward_tokens(tape, b, report, /*with_vq_term=*/true, inv, nullptr,
                   nullptr, nullptr, nullptr);
  }

  report.lr = sched_.at(step_);
  report.grad_norm = opt_->step(report.lr);
  renormalize(cb_);
  if (rc_.training.use_ema) ema_->update();
  report.total = report.weighted_sum();
  ++step_;
  return report;
}

LossReport StageLoop::pixel_step() {
  LossReport report;
  const int accum = setup_.gradient_accumulation_steps;
  const double inv = 1.0 / double(accum);
  const bool disc_on = step_ >= rc_.losses.discriminator_start;
  const real w_adv =
      rc_.losses.discriminator_weight * rc_.losses.discriminator_factor;

  double l2_acc = 0, perc_acc = 0, adv_acc = 0, lecam_acc = 0, dloss_acc = 0;

  opt_reg_.zero_grad();
  std::vector<TensorPtr> fakes;  // detached recon per micro-batch
  std::vector<TensorPtr> reals;
  for (int a = 0; a < accum; ++a) {
    Batch b = stream_.next_cycle();
    Tape tape;
    TensorPtr zq, logits;
    QuantizedLatent q;
    MaskState state;
    forward_tokens(tape, b, report, /*with_vq_term=*/false, inv, &zq, &q,
                   &state, &logits);

    // Differentiable token mixture: revealed positions keep their committed
    // id; still-masked positions carry a sampled id whose distribution stays
    // on the tape, so pixel gradients reach only the open predictions.
    const int64_t B = q.ids.batch, L2 = model_.grid_length();
    const int V = model_.teacher_vocab();
    auto probs = nn::softmax_rows(&tape, logits);
    std::vector<real> open(size_t(B * L2), 0.0);
    std::vector<int64_t> ids(size_t(B * L2), 0);
    Rng& commit_rng = pool_.stream("stage3.commit");
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t i = 0; i < L2; ++i) {
        const size_t r = size_t(bb * L2 + i);
        if (state.is_resolved(bb, i)) {
          ids[r] = state.token(bb, i);
        } else {
          open[r] = 1.0;
          const real* row = logits->v.data() + (bb * L2 + i) * V;
          ids[r] = sample_position(row, V, rc_.decoder.randomize_temperature,
                                   commit_rng)
                       .first;
        }
      }
    auto open_probs = nn::mask_rows(&tape, probs, open);
    auto recon = teacher_.decode_mixture(&tape, open_probs, ids, B);

    auto l2 = nn::mse(&tape, recon, b.images);
    auto feat_target = perceptual_->features(nullptr, b.images);
    auto feat_recon = perceptual_->features(&tape, recon);
    auto perc = nn::mse(&tape, feat_recon, feat_target);

    std::vector<std::pair<real, TensorPtr>> parts = {
        {rc_.losses.reconstruction_weight, l2},
        {rc_.losses.perceptual_weight, perc}};
    TensorPtr g_adv;
    if (disc_on) {
      set_trainable(disc_->params(), [](const std::string&) { return false; });
      auto fake_scores = disc_->score(&tape, recon);
      g_adv = nn::scale(&tape, nn::mean_all(&tape, fake_scores), -1.0);
      parts.push_back({w_adv, g_adv});
    }
    auto total = nn::weighted_sum_scalars(&tape, parts);
    check(std::isfinite(total->v[0]), ErrorCode::numeric,
          "stage 3 training diverged (non-finite loss)");
    auto scaled = accum == 1 ? total : nn::scale(&tape, total, inv);
    tape.backward(scaled);

    l2_acc += inv * l2->v[0];
    perc_acc += inv * perc->v[0];
    if (disc_on) adv_acc += inv * g_adv->v[0];

    auto fake = nn::make_tensor(recon->shape);
    fake->v = recon->v;
    fakes.push_back(fake);
    reals.push_back(b.images);
  }

  report.lr = sched_.at(step_);
  report.grad_norm = opt_->step(report.lr);
  if (rc_.training.use_ema) ema_->update();

  if (disc_on) {
    set_trainable(disc_->params(), [](const std::string&) { return true; });
    disc_->params().zero_grad();
    for (int a = 0; a < accum; ++a) {
      Tape tape;
      auto real_scores = disc_->score(&tape, reals[size_t(a)]);
      auto fake_scores = disc_->score(&tape, fakes[size_t(a)]);
      auto loss_real = nn::mean_all(
          &tape, nn::relu(&tape, nn::affine(&tape, real_scores, -1.0, 1.0)));
      auto loss_fake = nn::mean_all(
          &tape, nn::relu(&tape, nn::affine(&tape, fake_scores, 1.0, 1.0)));
      auto hinge = nn::weighted_sum_scalars(
          &tape, {{1.0, loss_real}, {1.0, loss_fake}});

      // LeCam pull toward the moving average of the opposite side's scores.
      auto reg = nn::weighted_sum_scalars(
          &tape, {{1.0, nn::mean_sq_const(&tape, real_scores, lecam_state_[1])},
                  {1.0, nn::mean_sq_const(&tape, fake_scores, lecam_state_[0])}});
      auto d_total = nn::weighted_sum_scalars(
          &tape,
          {{1.0, hinge}, {rc_.losses.lecam_regularization_weight, reg}});
      check(std::isfinite(d_total->v[0]), ErrorCode::numeric,
            "discriminator training diverged (non-finite loss)");
      auto scaled = accum == 1 ? d_total : nn::scale(&tape, d_total, inv);
      tape.backward(scaled);

      dloss_acc += inv * hinge->v[0];
      lecam_acc += inv * reg->v[0];

      const real mean_real = nn::mean_all(nullptr, real_scores)->v[0];
      const real mean_fake = nn::mean_all(nullptr, fake_scores)->v[0];
      lecam_state_[0] = 0.99 * lecam_state_[0] + 0.01 * mean_real;
      lecam_state_[1] = 0.99 * lecam_state_[1] + 0.01 * mean_fake;
    }
    opt_d_->step(rc_.optimizer.discriminator_learning_rate);

    last_disc_loss_ = dloss_acc;
    if (dloss_acc < 1e-4) {
      if (++collapse_run_ == 100 && !collapse_warned_) {
        collapse_warned_ = true;
        std::fprintf(stderr,
                     "warning: discriminator loss below 1e-4 for 100 "
                     "consecutive steps at step %lld\n",
                     static_cast<long long>(step_));
      }
    } else {
      collapse_run_ = 0;
    }
  }

  report.add("reconstruction", rc_.losses.reconstruction_weight, l2_acc);
  report.add("perceptual", rc_.losses.perceptual_weight, perc_acc);
  report.add("adversarial", w_adv, adv_acc);
  report.add("lecam", rc_.losses.lecam_regularization_weight, lecam_acc);
  report.add("quantizer", rc_.losses.quantizer_weight, 0.0);
  report.total = report.weighted_sum();
  ++step_;
  return report;
}

LossReport StageLoop::step() {
  check(step_ < setup_.steps, ErrorCode::state,
        "stage " + std::to_string(setup_.stage) + " already ran its " +
            std::to_string(setup_.steps) + " steps");
  LossReport r = setup_.stage == 3 ? pixel_step() : token_step();
  check(r.additivity_gap() <= 1e-6, ErrorCode::numeric,
        "loss report total drifted from its terms");
  return r;
}

std::vector<BlockRef> StageLoop::block_refs() {
  std::vector<BlockRef> blocks = registry_blocks(model_.params());
  if (setup_.stage == 3) {
    const auto& names = teacher_.params().names();
    const auto& tensors = teacher_.params().tensors();
    for (size_t i = 0; i < names.size(); ++i)
      if (TeacherModel::is_pixel_decoder_param(names[i]))
        blocks.push_back({names[i], &tensors[i]->v});
  }
  const auto& onames = opt_reg_.names();
  for (size_t i = 0; i < onames.size(); ++i)
    blocks.push_back({"opt.m." + onames[i], &opt_->m()[i]});
  for (size_t i = 0; i < onames.size(); ++i)
    blocks.push_back({"opt.v." + onames[i], &opt_->v()[i]});
  for (size_t i = 0; i < onames.size(); ++i)
    blocks.push_back({"ema." + onames[i], &ema_->shadow()[i]});
  if (setup_.stage == 3) {
    for (auto& b : registry_blocks(disc_->params())) blocks.push_back(b);
    const auto& dnames = disc_->params().names();
    for (size_t i = 0; i < dnames.size(); ++i)
      blocks.push_back({"opt_d.m." + dnames[i], &opt_d_->m()[i]});
    for (size_t i = 0; i < dnames.size(); ++i)
      blocks.push_back({"opt_d.v." + dnames[i], &opt_d_->v()[i]});
    blocks.push_back({"lecam.state", &lecam_state_});
  }
  return blocks;
}

void StageLoop::save(const std::string& path) {
  CheckpointMeta meta;
  meta.kind = "model";
  meta.stage = setup_.stage;
  meta.step = step_;
  meta.config_hash = hash_;
  meta.config = rc_.resolved_json();
  meta.rng = pool_.serialize_all();
  meta.extra["opt_t"] = opt_->t();
  meta.extra["stream"] = stream_.state();
  meta.extra["ema_names"] = opt_reg_.names();
  if (setup_.stage == 3) {
    meta.extra["opt_d_t"] = opt_d_->t();
    meta.extra["collapse_run"] = collapse_run_;
    meta.extra["collapse_warned"] = collapse_warned_;
  }
  auto blocks = block_refs();
  save_checkpoint(path, meta, blocks, &cb_);
}

bool StageLoop::try_load(const std::string& path) {
  if (!std::filesystem::exists(path)) return false;
  auto blocks = block_refs();
  CheckpointMeta meta = load_checkpoint(path, blocks, &cb_);
  check(meta.kind == "model", ErrorCode::state,
        path + " is a '" + meta.kind + "' checkpoint");
  check(meta.stage == setup_.stage, ErrorCode::state,
        path + " belongs to stage " + std::to_string(meta.stage));
  check(meta.config_hash == hash_, ErrorCode::state,
        "checkpoint config hash " + meta.config_hash +
            " does not match this run (" + hash_ + ")");
  step_ = meta.step;
  opt_->t() = meta.extra.at("opt_t").get<int64_t>();
  pool_.deserialize_all(meta.rng);
  stream_.restore(meta.extra.at("stream"));
  if (setup_.stage == 3) {
    opt_d_->t() = meta.extra.at("opt_d_t").get<int64_t>();
    collapse_run_ = meta.extra.at("collapse_run").get<int>();
    collapse_warned_ = meta.extra.at("collapse_warned").get<bool>();
  }
  return true;
}

TrainOutcome run_training(const RunConfig& rc, const std::string& run_dir,
                          const std::string& shared_dir, int min_stage,
                          int max_stage) {
  check(min_stage >= 1 && max_stage <= 3 && min_stage <= max_stage,
        ErrorCode::invalid_argument, "stage range must lie inside 1..3");
  std::filesystem::create_directories(run_dir);
  const std::string cache = shared_dir.empty() ? run_dir : shared_dir;
  std::filesystem::create_directories(cache);

  auto stage_path = [&](int s) {
    return (std::filesystem::path(run_dir) /
            ("stage" + std::to_string(s) + ".ckpt"))
        .string();
  };

  auto data = open_datasets(rc);
  LossCsv csv((std::filesystem::path(run_dir) / "losses.csv").string(),
              rc.config_hash());

  TrainOutcome out;
  auto teacher = ensure_teacher(rc, *data.train, cache, &csv);
  auto clf = ensure_classifier(rc, *data.train, cache, &csv);
  out.teacher_path =
      (std::filesystem::path(cache) / ("teacher_" + teacher_fingerprint(rc) + ".ckpt"))
          .string();
  out.classifier_path =
      (std::filesystem::path(cache) /
       ("classifier_" + classifier_fingerprint(rc) + ".ckpt"))
          .string();
  out.stage_paths.assign(3, "");

  RngPool pool(rc.experiment.seed);
  TokenizerModel model(rc, pool.stream("init.model"));

  if (min_stage > 1) {
    const std::string prior = stage_path(min_stage - 1);
    check(std::filesystem::exists(prior), ErrorCode::state,
          "missing prior-stage checkpoint " + prior);
    restore_for_eval(prior, model, *teacher, /*use_ema=*/false);
  }

  for (int stage = min_stage; stage <= max_stage; ++stage) {
    StageLoop loop(stage, rc, model, *teacher, clf.get(), *data.train, pool);
    const std::string path = stage_path(stage);
    bool loaded = rc.experiment.resume_training && loop.try_load(path);

    const int64_t save_every = std::max<int64_t>(50, loop.total_steps() / 5);
    while (loop.steps_done() < loop.total_steps()) {
      const int64_t s = loop.steps_done();
      LossReport r = loop.step();
      for (const auto& t : r.terms) csv.append(s, stage, t.name, t.value);
      if (s % 50 == 0) {
        csv.append(s, stage, "grad_norm", r.grad_norm);
        csv.append(s, stage, "lr", r.lr);
        csv.append(s, stage, "codebook_usage", loop.last_codebook_usage());
      }
      if (loop.steps_done() % save_every == 0 &&
          loop.steps_done() < loop.total_steps())
        loop.save(path);
    }
    if (!loaded || loop.steps_done() > 0) loop.save(path);
    out.stage_paths[size_t(stage - 1)] = path;
  }
  return out;
}

CheckpointMeta restore_for_eval(const std::string& path, TokenizerModel& model,
                                TeacherModel& teacher, bool use_ema) {
  CheckpointMeta head = peek_checkpoint(path);
  check(head.kind == "model", ErrorCode::state,
        path + " is a '" + head.kind + "' checkpoint");

  std::vector<BlockRef> blocks = registry_blocks(model.params());
  if (head.stage == 3) {
    const auto& names = teacher.params().names();
    const auto& tensors = teacher.params().tensors();
    for (size_t i = 0; i < names.size(); ++i)
      if (TeacherModel::is_pixel_decoder_param(names[i]))
        blocks.push_back({names[i], &tensors[i]->v});
  }

  std::vector<std::string> ema_names;
  std::vector<std::vector<real>> ema_data;
  std::vector<TensorPtr> ema_targets;
  if (use_ema) {
    ema_names = head.extra.at("ema_names").get<std::vector<std::string>>();
    ema_data.resize(ema_names.size());
    for (size_t i = 0; i < ema_names.size(); ++i) {
      const std::string& n = ema_names[i];
      TensorPtr t = model.params().has(n) ? model.params().get(n)
                                          : teacher.params().get(n);
      ema_targets.push_back(t);
      ema_data[i].assign(t->v.size(), 0.0);
      blocks.push_back({"ema." + n, &ema_data[i]});
    }
  }

  CheckpointMeta meta = load_checkpoint_subset(path, blocks);
  if (use_ema)
    for (size_t i = 0; i < ema_targets.size(); ++i)
      ema_targets[i]->v = ema_data[i];
  return meta;
}

}  // namespace sftok
