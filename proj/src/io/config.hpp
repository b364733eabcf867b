#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "util/json_io.hpp"

namespace sftok {

// Width/depth bundle for one transformer tower.
struct VitDims {
  int64_t width = 0;
  int num_layers = 0;
  int num_heads = 0;
  int64_t mlp_dim = 0;
};

// Named sizes: micro (48/2), tiny (128/4), small (256/6), base (768/12).
VitDims vit_dims_for(const std::string& size_name);

struct ExperimentConfig {
  int64_t max_train_examples = 2048;
  bool resume_training = true;
  uint64_t seed = 1;
  int64_t eval_examples = 256;
};

struct VqModelConfig {
  int codebook_size = 256;
  int token_size = 8;
  bool use_l2_norm = true;
  double commitment_cost = 0.25;
  std::string vit_enc_model_size = "small";
  int vit_enc_patch_size = 4;
  int num_latent_tokens = 64;
  int num_group = 1;
  bool finetune_decoder = false;  // stage-varying
  VitDims enc_dims;               // resolved from size unless overridden
};

struct DecoderConfig {
  std::string vit_dec_model_size = "small";
  int vit_dec_patch_size = 4;  // teacher-grid patch; L2 = (crop/patch)^2
  int num_latent_tokens = 64;
  int token_size = 8;       // teacher code dimension
  int num_proxy_codes = 64;  // teacher-grid length L2
  int codebook_size = 256;   // teacher vocabulary V
  double randomize_temperature = 1.0;
  double guidance_scale = 0.0;
  std::string guidance_decay = "constant";
  double replace_prob = 1.0;
  VitDims dec_dims;
};

struct LossConfig {
  double quantizer_weight = 1.0;
  double label_smoothing = 0.0;             // stages 1-2 only
  double loss_weight_unmasked_token = 0.1;  // stages 1-2 only
  std::string discriminator_type = "patch_vit";  // stage 3 block
  int64_t discriminator_start = 1000;
  double discriminator_factor = 1.0;
  double discriminator_weight = 0.5;
  std::string perceptual_loss = "classifier";
  double perceptual_weight = 1.0;
  std::string reconstruction_loss = "l2";
  double reconstruction_weight = 1.0;
  double lecam_regularization_weight = 0.001;
};

struct DatasetConfig {
  int num_workers_per_gpu = 1;
  std::string dataset_type = "synthetic";  // synthetic | folder
  std::string manifest_path;               // folder type only
  int num_classes = 10;                    // synthetic corpus
  int resize_shorter_edge = 32;
  int crop_size = 32;
};

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double discriminator_learning_rate = 1e-4;  // stage 3 only
  double beta1 = 0.9;
  double beta2 = 0.99;  // stage-varying (0.999 in stage 3)
  double weight_decay = 1e-4;
};

struct LrSchedulerConfig {
  double learning_rate = 1e-4;  // must match the optimizer value
  int64_t warmup_steps = 250;
  double end_lr = 1e-5;
};

struct TrainingConfig {
  int gradient_accumulation_steps = 1;
  int per_gpu_batch_size = 8;
  std::string mixed_precision = "fp32";  // accepted; compute is always f64
  bool enable_tf32 = false;
  bool use_ema = true;
  double ema_decay = 0.999;
  int64_t max_train_steps = 5000;  // stage-varying
  double max_grad_norm = 1.0;
  bool use_mlmloss = true;
  bool single_step_generation = true;  // stage-varying
  bool guided_mask = false;            // stage-varying
};

struct TeacherConfig {
  int64_t width = 64;
  int num_layers = 2;
  int num_heads = 4;
  int pixel_num_layers = 3;
  int64_t max_train_steps = 3000;
  int batch_size = 16;
};

struct ClassifierConfig {
  int64_t width = 64;
  int num_layers = 3;
  int num_heads = 4;
  int patch_size = 4;
  int64_t max_train_steps = 600;
  int batch_size = 16;
};

struct GeneratorConfig {
  int64_t width = 64;
  int num_layers = 4;
  int num_heads = 4;
  int64_t max_train_steps = 2000;
  int batch_size = 16;
  int default_steps = 8;  // iterative unmasking steps at generation time
};

struct DiscriminatorConfig {
  int64_t width = 48;
  int num_layers = 2;
  int num_heads = 4;
  int patch_size = 4;
};

struct RunConfig {
  ExperimentConfig experiment;
  VqModelConfig vq_model;
  DecoderConfig decoder;
  LossConfig losses;
  DatasetConfig dataset;
  OptimizerConfig optimizer;
  LrSchedulerConfig lr_scheduler;
  TrainingConfig training;
  TeacherConfig teacher;
  ClassifierConfig classifier;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  // Dotted paths the user set explicitly, and raw per-stage override blocks.
  std::set<std::string> explicit_paths;
  Json stage_overrides = Json::object();

  int resolution() const { return dataset.crop_size; }
  int64_t patch_count() const;        // L1
  int64_t teacher_grid_length() const;  // L2

  // Fully resolved tree (defaults + user + per-stage columns); its hash is
  // embedded into every artifact this run writes.
  Json resolved_json() const;
  std::string config_hash() const;
};

// Per-stage view of the stage-varying knobs plus everything a step needs.
struct StageSetup {
  int stage = 0;
  int64_t steps = 0;
  double beta2 = 0.99;
  bool finetune_decoder = false;
  bool single_step_generation = false;
  bool guided_mask = false;
  int gradient_accumulation_steps = 1;
  int batch_size = 8;
  double replace_prob = 1.0;
};

// Strict loader: unknown keys and range violations are hard errors; an empty
// or absent object resolves to the desk defaults above.
RunConfig parse_config(const Json& user);
RunConfig load_config(const std::string& path);
RunConfig default_config();

StageSetup resolve_stage(const RunConfig& rc, int stage);

// The full config with this stage's override block applied (stage-varying
// columns excluded; read those from resolve_stage).
RunConfig stage_view(const RunConfig& rc, int stage);

}  // namespace sftok
