#pragma once

#include <functional>
#include <memory>
#include <string>

#include "core/model.hpp"
#include "data/dataset.hpp"
#include "multistep/multistep.hpp"
#include "train/aux_models.hpp"
#include "train/checkpoint.hpp"
#include "train/losses.hpp"
#include "train/teacher.hpp"
#include "util/csv.hpp"

namespace sftok {

// Flips requires_grad per parameter and clears the gradient buffers of
// everything now frozen, so no optimizer can apply a stale buffer later.
void set_trainable(nn::ParamRegistry& params,
                   const std::function<bool(const std::string&)>& trainable);

// The teacher and classifier depend only on a slice of the config; runs that
// differ elsewhere (stage steps, replace probability, ...) share the same
// pretrained files, keyed by these fingerprints.
std::string teacher_fingerprint(const RunConfig& rc);
std::string classifier_fingerprint(const RunConfig& rc);

// Load the artifact from `cache_dir` when its fingerprint matches, otherwise
// pretrain and save it there.
std::unique_ptr<TeacherModel> ensure_teacher(const RunConfig& rc,
                                             const Dataset& train,
                                             const std::string& cache_dir,
                                             LossCsv* csv);
std::unique_ptr<Classifier> ensure_classifier(const RunConfig& rc,
                                              const Dataset& train,
                                              const std::string& cache_dir,
                                              LossCsv* csv);

// One training stage over a shared model/teacher pair. Construction wires the
// stage's freezing, optimizer(s), EMA, and data stream; step() runs exactly
// one optimizer update. Stages 1-2 train the whole student on the token loss;
// stage 3 freezes the encoder and quantizer and fine-tunes the student decoder
// with the teacher's pixel head on image losses.
class StageLoop {
 public:
  StageLoop(int stage, const RunConfig& rc, TokenizerModel& model,
            TeacherModel& teacher, Classifier* perceptual,
            const Dataset& train, RngPool& pool);

  LossReport step();

  int stage() const { return setup_.stage; }
  int64_t steps_done() const { return step_; }
  int64_t total_steps() const { return setup_.steps; }
  const StageSetup& setup() const { return setup_; }
  double last_codebook_usage() const { return last_usage_; }
  double last_disc_loss() const { return last_disc_loss_; }
  bool collapse_warned() const { return collapse_warned_; }

  void save(const std::string& path);
  // False when the file does not exist; errors on any mismatch with this
  // run's stage or resolved config.
  bool try_load(const std::string& path);

 private:
  LossReport token_step();
  LossReport pixel_step();
  void forward_tokens(nn::Tape& tape, const Batch& batch, LossReport& report,
                      bool with_vq_term, double inv_accum,
                      nn::TensorPtr* out_zq, QuantizedLatent* out_q,
                      MaskState* out_state, nn::TensorPtr* out_logits);
  std::vector<BlockRef> block_refs();
  MaskState guided_state(const QuantizedLatent& q, const TokenGrid& truth);

  RunConfig rc_;        // stage view (per-stage overrides applied)
  StageSetup setup_;
  TokenizerModel& model_;
  TeacherModel& teacher_;
  Classifier* perceptual_;
  RngPool& pool_;
  Codebook cb_;
  BatchStream stream_;

  nn::ParamRegistry opt_reg_;  // this stage's trainable set
  std::unique_ptr<nn::AdamW> opt_;
  std::unique_ptr<nn::Ema> ema_;
  nn::LrSchedule sched_;

  std::unique_ptr<Discriminator> disc_;  // stage 3 only
  std::unique_ptr<nn::AdamW> opt_d_;
  std::vector<nn::real> lecam_state_;  // [ema of real mean, ema of fake mean]
  int collapse_run_ = 0;
  bool collapse_warned_ = false;
  double last_disc_loss_ = 0.0;

  int64_t step_ = 0;
  double last_usage_ = 0.0;
  std::string hash_;
};

// Trains stages min_stage..max_stage in order under run_dir, emitting
// stage<k>.ckpt snapshots and a losses.csv curve. Shared teacher/classifier
// artifacts live in shared_dir (defaults to run_dir when empty). Resumes
// mid-stage from existing snapshots unless the config disables resuming.
struct TrainOutcome {
  std::string teacher_path;
  std::string classifier_path;
  std::vector<std::string> stage_paths;  // indexed by stage-1, empty if skipped
};

TrainOutcome run_training(const RunConfig& rc, const std::string& run_dir,
                          const std::string& shared_dir = "", int min_stage = 1,
                          int max_stage = 3);

// Loads a stage checkpoint's weights into the model (and, for a stage-3
// snapshot, the teacher's pixel head). With use_ema the averaged weights
// replace the raw ones for the parameters the stage trained.
CheckpointMeta restore_for_eval(const std::string& path, TokenizerModel& model,
                                TeacherModel& teacher, bool use_ema);

}  // namespace sftok
