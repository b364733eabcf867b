#include "io/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <vector>

#include "util/error.hpp"

namespace sftok {

VitDims vit_dims_for(const std::string& size_name) {
  if (size_name == "micro") return {48, 2, 4, 192};
  if (size_name == "tiny") return {128, 4, 4, 512};
  if (size_name == "small") return {256, 6, 4, 1024};
  if (size_name == "base") return {768, 12, 12, 3072};
  fail(ErrorCode::config, "unknown model size '" + size_name +
                              "' (expected micro|tiny|small|base)");
}

namespace {

int64_t as_int(const Json& v, const std::string& path, int64_t lo, int64_t hi) {
  check(v.is_number_integer(), ErrorCode::config,
        path + ": expected an integer");
  int64_t x = v.get<int64_t>();
  check(x >= lo && x <= hi, ErrorCode::config,
        path + ": value " + std::to_string(x) + " outside [" +
            std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return x;
}

double as_real(const Json& v, const std::string& path, double lo, double hi) {
  check(v.is_number(), ErrorCode::config, path + ": expected a number");
  double x = v.get<double>();
  check(std::isfinite(x) && x >= lo && x <= hi, ErrorCode::config,
        path + ": value outside [" + std::to_string(lo) + ", " +
            std::to_string(hi) + "]");
  return x;
}

bool as_bool(const Json& v, const std::string& path) {
  check(v.is_boolean(), ErrorCode::config, path + ": expected a boolean");
  return v.get<bool>();
}

std::string as_enum(const Json& v, const std::string& path,
                    const std::vector<std::string>& allowed) {
  check(v.is_string(), ErrorCode::config, path + ": expected a string");
  std::string s = v.get<std::string>();
  for (const auto& a : allowed)
    if (s == a) return s;
  std::string opts;
  for (const auto& a : allowed) opts += (opts.empty() ? "" : "|") + a;
  fail(ErrorCode::config, path + ": '" + s + "' not one of " + opts);
}

std::string as_string(const Json& v, const std::string& path) {
  check(v.is_string(), ErrorCode::config, path + ": expected a string");
  return v.get<std::string>();
}

uint64_t as_seed(const Json& v, const std::string& path) {
  check(v.is_number_integer(), ErrorCode::config,
        path + ": expected an integer");
  check(v.is_number_unsigned() || v.get<int64_t>() >= 0, ErrorCode::config,
        path + ": seed must be nonnegative");
  return v.get<uint64_t>();
}

struct LeafSpec {
  std::function<void(const Json&, const std::string&, RunConfig&)> apply;
  bool per_stage = false;  // may appear inside stages.stageN overrides
};

constexpr int64_t kMaxI = 1'000'000'000;

const std::map<std::string, LeafSpec>& leaf_table() {
  static const std::map<std::string, LeafSpec> table = [] {
    std::map<std::string, LeafSpec> t;
    auto add = [&](const std::string& path, bool per_stage, auto fn) {
      t[path] = LeafSpec{fn, per_stage};
    };

    add("experiment.max_train_examples", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.experiment.max_train_examples = as_int(v, p, 1, kMaxI);
        });
    add("experiment.resume_training", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.experiment.resume_training = as_bool(v, p);
        });
    add("experiment.seed", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.experiment.seed = as_seed(v, p);
        });
    add("experiment.eval_examples", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.experiment.eval_examples = as_int(v, p, 2, kMaxI);
        });

    add("model.vq_model.codebook_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.codebook_size = static_cast<int>(as_int(v, p, 1, 1 << 20));
        });
    add("model.vq_model.token_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.token_size = static_cast<int>(as_int(v, p, 1, 4096));
        });
    add("model.vq_model.use_l2_norm", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.use_l2_norm = as_bool(v, p);
        });
    add("model.vq_model.commitment_cost", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.commitment_cost = as_real(v, p, 0.0, 1e6);
        });
    add("model.vq_model.vit_enc_model_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.vit_enc_model_size =
              as_enum(v, p, {"micro", "tiny", "small", "base"});
        });
    add("model.vq_model.vit_enc_patch_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.vit_enc_patch_size =
              static_cast<int>(as_int(v, p, 1, 256));
        });
    add("model.vq_model.num_latent_tokens", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.num_latent_tokens =
              static_cast<int>(as_int(v, p, 1, 4096));
        });
    add("model.vq_model.num_group", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.num_group = static_cast<int>(as_int(v, p, 1, 1));
        });
    add("model.vq_model.finetune_decoder", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.finetune_decoder = as_bool(v, p);
        });
    add("model.vq_model.vit_enc_width", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.enc_dims.width = as_int(v, p, 8, 8192);
        });
    add("model.vq_model.vit_enc_num_layers", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.enc_dims.num_layers =
              static_cast<int>(as_int(v, p, 1, 64));
        });
    add("model.vq_model.vit_enc_num_heads", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.enc_dims.num_heads =
              static_cast<int>(as_int(v, p, 1, 64));
        });
    add("model.vq_model.vit_enc_mlp_dim", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.vq_model.enc_dims.mlp_dim = as_int(v, p, 8, 65536);
        });

    add("model.decoder.vit_dec_model_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.vit_dec_model_size =
              as_enum(v, p, {"micro", "tiny", "small", "base"});
        });
    add("model.decoder.vit_dec_patch_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.vit_dec_patch_size =
              static_cast<int>(as_int(v, p, 1, 256));
        });
    add("model.decoder.num_latent_tokens", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.num_latent_tokens = static_cast<int>(as_int(v, p, 1, 4096));
        });
    add("model.decoder.token_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.token_size = static_cast<int>(as_int(v, p, 1, 4096));
        });
    add("model.decoder.num_proxy_codes", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.num_proxy_codes = static_cast<int>(as_int(v, p, 1, 65536));
        });
    add("model.decoder.codebook_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.codebook_size = static_cast<int>(as_int(v, p, 2, 1 << 20));
        });
    add("model.decoder.randomize_temperature", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.randomize_temperature = as_real(v, p, 0.0, 100.0);
        });
    add("model.decoder.guidance_scale", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.guidance_scale = as_real(v, p, 0.0, 0.0);
        });
    add("model.decoder.guidance_decay", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.guidance_decay = as_enum(v, p, {"constant"});
        });
    add("model.decoder.replace_prob", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.replace_prob = as_real(v, p, 0.0, 1.0);
        });
    add("model.decoder.vit_dec_width", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.dec_dims.width = as_int(v, p, 8, 8192);
        });
    add("model.decoder.vit_dec_num_layers", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.dec_dims.num_layers =
              static_cast<int>(as_int(v, p, 1, 64));
        });
    add("model.decoder.vit_dec_num_heads", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.dec_dims.num_heads =
              static_cast<int>(as_int(v, p, 1, 64));
        });
    add("model.decoder.vit_dec_mlp_dim", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.decoder.dec_dims.mlp_dim = as_int(v, p, 8, 65536);
        });

    add("losses.quantizer_weight", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.quantizer_weight = as_real(v, p, 0.0, 1e6);
        });
    add("losses.label_smoothing", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.label_smoothing = as_real(v, p, 0.0, 0.999);
        });
    add("losses.loss_weight_unmasked_token", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.loss_weight_unmasked_token = as_real(v, p, 0.0, 1e6);
        });
    add("losses.discriminator_type", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.discriminator_type = as_enum(v, p, {"patch_vit"});
        });
    add("losses.discriminator_start", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.discriminator_start = as_int(v, p, 0, kMaxI);
        });
    add("losses.discriminator_factor", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.discriminator_factor = as_real(v, p, 0.0, 1e6);
        });
    add("losses.discriminator_weight", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.discriminator_weight = as_real(v, p, 0.0, 1e6);
        });
    add("losses.perceptual_loss", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.perceptual_loss = as_enum(v, p, {"classifier", "none"});
        });
    add("losses.perceptual_weight", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.perceptual_weight = as_real(v, p, 0.0, 1e6);
        });
    add("losses.reconstruction_loss", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.reconstruction_loss = as_enum(v, p, {"l2"});
        });
    add("losses.reconstruction_weight", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.reconstruction_weight = as_real(v, p, 0.0, 1e6);
        });
    add("losses.lecam_regularization_weight", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.losses.lecam_regularization_weight = as_real(v, p, 0.0, 1e6);
        });

    add("dataset.params.num_workers_per_gpu", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.dataset.num_workers_per_gpu = static_cast<int>(as_int(v, p, 0, 64));
        });
    add("dataset.params.dataset_type", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.dataset.dataset_type = as_enum(v, p, {"synthetic", "folder"});
        });
    add("dataset.params.manifest_path", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.dataset.manifest_path = as_string(v, p);
        });
    add("dataset.params.num_classes", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.dataset.num_classes = static_cast<int>(as_int(v, p, 1, 10000));
        });
    add("dataset.preprocessing.resize_shorter_edge", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.dataset.resize_shorter_edge =
              static_cast<int>(as_int(v, p, 4, 4096));
        });
    add("dataset.preprocessing.crop_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.dataset.crop_size = static_cast<int>(as_int(v, p, 4, 4096));
        });

    add("optimizer.params.learning_rate", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.optimizer.learning_rate = as_real(v, p, 1e-12, 10.0);
        });
    add("optimizer.params.discriminator_learning_rate", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.optimizer.discriminator_learning_rate =
              as_real(v, p, 1e-12, 10.0);
        });
    add("optimizer.params.beta1", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.optimizer.beta1 = as_real(v, p, 0.0, 0.9999);
        });
    add("optimizer.params.beta2", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.optimizer.beta2 = as_real(v, p, 0.0, 0.9999999);
        });
    add("optimizer.params.weight_decay", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.optimizer.weight_decay = as_real(v, p, 0.0, 10.0);
        });

    add("lr_scheduler.params.learning_rate", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.lr_scheduler.learning_rate = as_real(v, p, 1e-12, 10.0);
        });
    add("lr_scheduler.params.warmup_steps", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.lr_scheduler.warmup_steps = as_int(v, p, 0, kMaxI);
        });
    add("lr_scheduler.params.end_lr", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.lr_scheduler.end_lr = as_real(v, p, 0.0, 10.0);
        });

    add("training.gradient_accumulation_steps", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.gradient_accumulation_steps =
              static_cast<int>(as_int(v, p, 1, 1024));
        });
    add("training.per_gpu_batch_size", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.per_gpu_batch_size =
              static_cast<int>(as_int(v, p, 1, 65536));
        });
    add("training.mixed_precision", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.mixed_precision =
              as_enum(v, p, {"fp32", "fp16", "bf16", "none"});
        });
    add("training.enable_tf32", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.enable_tf32 = as_bool(v, p);
        });
    add("training.use_ema", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.use_ema = as_bool(v, p);
        });
    add("training.ema_decay", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.ema_decay = as_real(v, p, 0.0, 0.9999999);
        });
    add("training.max_train_steps", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.max_train_steps = as_int(v, p, 1, kMaxI);
        });
    add("training.max_grad_norm", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.max_grad_norm = as_real(v, p, 0.0, 1e9);
        });
    add("training.use_mlmloss", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.use_mlmloss = as_bool(v, p);
          check(rc.training.use_mlmloss, ErrorCode::unsupported,
                p + ": only the masked-token objective is supported");
        });
    add("training.single_step_generation", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.single_step_generation = as_bool(v, p);
        });
    add("training.guided_mask", true,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.training.guided_mask = as_bool(v, p);
        });

    add("teacher.width", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.teacher.width = as_int(v, p, 8, 8192);
        });
    add("teacher.num_layers", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.teacher.num_layers = static_cast<int>(as_int(v, p, 1, 64));
        });
    add("teacher.num_heads", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.teacher.num_heads = static_cast<int>(as_int(v, p, 1, 64));
        });
    add("teacher.max_train_steps", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.teacher.max_train_steps = as_int(v, p, 1, 100000000);
        });
    add("teacher.batch_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.teacher.batch_size = static_cast<int>(as_int(v, p, 1, 65536));
        });
    add("teacher.pixel_num_layers", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.teacher.pixel_num_layers = static_cast<int>(as_int(v, p, 1, 64));
        });

    add("classifier.width", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.classifier.width = as_int(v, p, 8, 8192);
        });
    add("classifier.num_layers", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.classifier.num_layers = static_cast<int>(as_int(v, p, 1, 64));
        });
    add("classifier.num_heads", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.classifier.num_heads = static_cast<int>(as_int(v, p, 1, 64));
        });
    add("classifier.patch_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.classifier.patch_size = static_cast<int>(as_int(v, p, 1, 256));
        });
    add("classifier.max_train_steps", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.classifier.max_train_steps = as_int(v, p, 1, kMaxI);
        });
    add("classifier.batch_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.classifier.batch_size = static_cast<int>(as_int(v, p, 1, 65536));
        });

    add("generator.width", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.generator.width = as_int(v, p, 8, 8192);
        });
    add("generator.num_layers", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.generator.num_layers = static_cast<int>(as_int(v, p, 1, 64));
        });
    add("generator.num_heads", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.generator.num_heads = static_cast<int>(as_int(v, p, 1, 64));
        });
    add("generator.max_train_steps", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.generator.max_train_steps = as_int(v, p, 1, kMaxI);
        });
    add("generator.batch_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.generator.batch_size = static_cast<int>(as_int(v, p, 1, 65536));
        });
    add("generator.default_steps", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.generator.default_steps = static_cast<int>(as_int(v, p, 1, 4096));
        });

    add("discriminator.width", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.discriminator.width = as_int(v, p, 8, 8192);
        });
    add("discriminator.num_layers", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.discriminator.num_layers = static_cast<int>(as_int(v, p, 1, 64));
        });
    add("discriminator.num_heads", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.discriminator.num_heads = static_cast<int>(as_int(v, p, 1, 64));
        });
    add("discriminator.patch_size", false,
        [](const Json& v, const std::string& p, RunConfig& rc) {
          rc.discriminator.patch_size = static_cast<int>(as_int(v, p, 1, 256));
        });

    return t;
  }();
  return table;
}

void collect_leaves(const Json& j, const std::string& prefix,
                    std::vector<std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it.value().is_object()) {
        if (it.value().empty()) out.push_back(path);
        else collect_leaves(it.value(), path, out);
      } else {
        out.push_back(path);
      }
    }
  }
}

const Json* find_path(const Json& j, const std::string& dotted) {
  const Json* cur = &j;
  size_t start = 0;
  while (true) {
    size_t dot = dotted.find('.', start);
    std::string key = dotted.substr(start, dot - start);
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &(*cur)[key];
    if (dot == std::string::npos) return cur;
    start = dot + 1;
  }
}

// Keys allowed at top level but meaningless for a given stage; setting them
// inside that stage's override block is an error.
const std::vector<std::string>& stage12_denied() {
  static const std::vector<std::string> v = {
      "losses.discriminator_type", "losses.discriminator_start",
      "losses.discriminator_factor", "losses.discriminator_weight",
      "losses.perceptual_loss", "losses.perceptual_weight",
      "losses.reconstruction_loss", "losses.reconstruction_weight",
      "losses.lecam_regularization_weight",
      "optimizer.params.discriminator_learning_rate"};
  return v;
}

const std::vector<std::string>& stage3_denied() {
  static const std::vector<std::string> v = {
      "losses.label_smoothing", "losses.loss_weight_unmasked_token"};
  return v;
}

const std::vector<std::string>& stage1_denied_extra() {
  static const std::vector<std::string> v = {"model.decoder.replace_prob"};
  return v;
}

void validate_stage_override(const Json& block, int stage) {
  std::vector<std::string> leaves;
  collect_leaves(block, "", leaves);
  const auto& table = leaf_table();
  for (const auto& path : leaves) {
    auto it = table.find(path);
    check(it != table.end(), ErrorCode::config,
          "unknown key in stage override: " + path);
    check(it->second.per_stage, ErrorCode::config,
          path + " cannot vary per stage");
    const auto deny_has = [&](const std::vector<std::string>& deny) {
      for (const auto& d : deny)
        if (d == path) return true;
      return false;
    };
    if (stage <= 2)
      check(!deny_has(stage12_denied()), ErrorCode::config,
            path + " only applies to stage 3, rejected for stage " +
                std::to_string(stage));
    if (stage == 1)
      check(!deny_has(stage1_denied_extra()), ErrorCode::config,
            path + " has no effect in stage 1 (no positions are revealed)");
    if (stage == 3)
      check(!deny_has(stage3_denied()), ErrorCode::config,
            path + " only applies to stages 1-2, rejected for stage 3");
    // Type/range check now so errors surface at load time.
    RunConfig scratch;
    it->second.apply(*find_path(block, path), path, scratch);
  }
}

void fill_dims(VitDims& dims, const std::string& size_name,
               const std::string& what) {
  VitDims base = vit_dims_for(size_name);
  if (dims.width == 0) dims.width = base.width;
  if (dims.num_layers == 0) dims.num_layers = base.num_layers;
  if (dims.num_heads == 0) dims.num_heads = base.num_heads;
  if (dims.mlp_dim == 0) dims.mlp_dim = base.mlp_dim;
  check(dims.width % dims.num_heads == 0, ErrorCode::config,
        what + ": width must be divisible by num_heads");
}

void cross_validate(RunConfig& rc) {
  fill_dims(rc.vq_model.enc_dims, rc.vq_model.vit_enc_model_size, "encoder");
  fill_dims(rc.decoder.dec_dims, rc.decoder.vit_dec_model_size, "decoder");
  check(rc.teacher.width % rc.teacher.num_heads == 0, ErrorCode::config,
        "teacher: width must be divisible by num_heads");
  check(rc.classifier.width % rc.classifier.num_heads == 0, ErrorCode::config,
        "classifier: width must be divisible by num_heads");
  check(rc.generator.width % rc.generator.num_heads == 0, ErrorCode::config,
        "generator: width must be divisible by num_heads");
  check(rc.discriminator.width % rc.discriminator.num_heads == 0,
        ErrorCode::config, "discriminator: width must be divisible by heads");

  check(rc.vq_model.num_latent_tokens == rc.decoder.num_latent_tokens,
        ErrorCode::config,
        "model.vq_model.num_latent_tokens and model.decoder.num_latent_tokens "
        "must agree");
  check(rc.vq_model.token_size == rc.decoder.token_size, ErrorCode::config,
        "model.vq_model.token_size and model.decoder.token_size must agree");

  const int crop = rc.dataset.crop_size;
  check(crop <= rc.dataset.resize_shorter_edge, ErrorCode::config,
        "dataset.preprocessing.crop_size exceeds resize_shorter_edge");
  check(crop % rc.vq_model.vit_enc_patch_size == 0, ErrorCode::config,
        "crop_size must be divisible by vit_enc_patch_size");
  check(crop % rc.decoder.vit_dec_patch_size == 0, ErrorCode::config,
        "crop_size must be divisible by vit_dec_patch_size");
  check(crop % rc.classifier.patch_size == 0, ErrorCode::config,
        "crop_size must be divisible by classifier.patch_size");
  check(crop % rc.discriminator.patch_size == 0, ErrorCode::config,
        "crop_size must be divisible by discriminator.patch_size");

  const int grid = crop / rc.decoder.vit_dec_patch_size;
  check(rc.decoder.num_proxy_codes == grid * grid, ErrorCode::config,
        "model.decoder.num_proxy_codes must equal (crop_size / "
        "vit_dec_patch_size)^2 = " +
            std::to_string(grid * grid));

  check(rc.lr_scheduler.learning_rate == rc.optimizer.learning_rate,
        ErrorCode::config,
        "lr_scheduler.params.learning_rate must match "
        "optimizer.params.learning_rate");
  check(rc.lr_scheduler.end_lr <= rc.lr_scheduler.learning_rate,
        ErrorCode::config, "end_lr must not exceed the base learning rate");

  if (rc.dataset.dataset_type == "folder")
    check(!rc.dataset.manifest_path.empty(), ErrorCode::config,
          "dataset.params.manifest_path required for dataset_type 'folder'");
}

}  // namespace

int64_t RunConfig::patch_count() const {
  int64_t side = resolution() / vq_model.vit_enc_patch_size;
  return side * side;
}

int64_t RunConfig::teacher_grid_length() const {
  int64_t side = resolution() / decoder.vit_dec_patch_size;
  return side * side;
}

RunConfig default_config() { return parse_config(Json::object()); }

RunConfig parse_config(const Json& user) {
  check(user.is_object(), ErrorCode::config,
        "config root must be a JSON object");
  RunConfig rc;

  Json base = user;
  if (base.contains("stages")) {
    const Json& stages = base["stages"];
    check(stages.is_object(), ErrorCode::config,
          "stages must be an object with stage1/stage2/stage3 blocks");
    for (auto it = stages.begin(); it != stages.end(); ++it) {
      check(it.key() == "stage1" || it.key() == "stage2" ||
                it.key() == "stage3",
            ErrorCode::config, "unknown key: stages." + it.key());
      int stage = it.key()[5] - '0';
      validate_stage_override(it.value(), stage);
    }
    rc.stage_overrides = stages;
    base.erase("stages");
  }

  std::vector<std::string> leaves;
  collect_leaves(base, "", leaves);
  const auto& table = leaf_table();
  for (const auto& path : leaves) {
    auto it = table.find(path);
    check(it != table.end(), ErrorCode::config, "unknown key: " + path);
    it->second.apply(*find_path(base, path), path, rc);
    rc.explicit_paths.insert(path);
  }

  cross_validate(rc);
  resolve_stage(rc, 1);
  resolve_stage(rc, 2);
  resolve_stage(rc, 3);
  return rc;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), ErrorCode::io, "cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  bool blank = true;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) {
      blank = false;
      break;
    }
  if (blank) return parse_config(Json::object());
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::io, "malformed JSON in " + path + ": " + e.what());
  }
  if (j.is_null()) j = Json::object();
  return parse_config(j);
}

RunConfig stage_view(const RunConfig& rc, int stage) {
  check(stage >= 1 && stage <= 3, ErrorCode::invalid_argument,
        "stage must be 1, 2, or 3");
  const std::string block_key = "stage" + std::to_string(stage);
  const Json* block = rc.stage_overrides.contains(block_key)
                          ? &rc.stage_overrides[block_key]
                          : nullptr;
  RunConfig out = rc;
  if (block) {
    std::vector<std::string> leaves;
    collect_leaves(*block, "", leaves);
    for (const auto& path : leaves)
      leaf_table().at(path).apply(*find_path(*block, path), path, out);
  }
  return out;
}

StageSetup resolve_stage(const RunConfig& rc, int stage) {
  check(stage >= 1 && stage <= 3, ErrorCode::invalid_argument,
        "stage must be 1, 2, or 3");
  const std::string block_key = "stage" + std::to_string(stage);
  const Json* block = rc.stage_overrides.contains(block_key)
                          ? &rc.stage_overrides[block_key]
                          : nullptr;

  // Per-stage columns mirroring the three-stage protocol; a key set by the
  // user (globally or in this stage's block) wins over the column default.
  struct Varying {
    const char* path;
    std::function<void(StageSetup&, const RunConfig&)> from_base;
    std::function<void(StageSetup&, int)> from_default;
  };

  RunConfig with_override = rc;
  if (block) {
    std::vector<std::string> leaves;
    collect_leaves(*block, "", leaves);
    for (const auto& path : leaves)
      leaf_table().at(path).apply(*find_path(*block, path), path,
                                  with_override);
  }
  auto overridden = [&](const std::string& path) {
    return block && find_path(*block, path) != nullptr;
  };
  auto user_set = [&](const std::string& path) {
    return rc.explicit_paths.count(path) > 0 || overridden(path);
  };

  StageSetup s;
  s.stage = stage;
  s.steps = user_set("training.max_train_steps")
                ? with_override.training.max_train_steps
                : (stage == 1 ? 5000 : 20000);
  s.beta2 = user_set("optimizer.params.beta2") ? with_override.optimizer.beta2
                                               : (stage == 3 ? 0.999 : 0.99);
  s.finetune_decoder = user_set("model.vq_model.finetune_decoder")
                           ? with_override.vq_model.finetune_decoder
                           : (stage == 3);
  s.single_step_generation = user_set("training.single_step_generation")
                                 ? with_override.training.single_step_generation
                                 : (stage == 1);
  s.guided_mask = user_set("training.guided_mask")
                      ? with_override.training.guided_mask
                      : (stage >= 2);
  s.gradient_accumulation_steps =
      with_override.training.gradient_accumulation_steps;
  s.batch_size = with_override.training.per_gpu_batch_size;
  s.replace_prob = with_override.decoder.replace_prob;
  return s;
}

Json RunConfig::resolved_json() const {
  Json j;
  j["experiment"] = {{"max_train_examples", experiment.max_train_examples},
                     {"resume_training", experiment.resume_training},
                     {"seed", experiment.seed},
                     {"eval_examples", experiment.eval_examples}};
  j["model"]["vq_model"] = {
      {"codebook_size", vq_model.codebook_size},
      {"token_size", vq_model.token_size},
      {"use_l2_norm", vq_model.use_l2_norm},
      {"commitment_cost", vq_model.commitment_cost},
      {"vit_enc_model_size", vq_model.vit_enc_model_size},
      {"vit_enc_patch_size", vq_model.vit_enc_patch_size},
      {"num_latent_tokens", vq_model.num_latent_tokens},
      {"num_group", vq_model.num_group},
      {"vit_enc_width", vq_model.enc_dims.width},
      {"vit_enc_num_layers", vq_model.enc_dims.num_layers},
      {"vit_enc_num_heads", vq_model.enc_dims.num_heads},
      {"vit_enc_mlp_dim", vq_model.enc_dims.mlp_dim}};
  j["model"]["decoder"] = {
      {"vit_dec_model_size", decoder.vit_dec_model_size},
      {"vit_dec_patch_size", decoder.vit_dec_patch_size},
      {"num_latent_tokens", decoder.num_latent_tokens},
      {"token_size", decoder.token_size},
      {"num_proxy_codes", decoder.num_proxy_codes},
      {"codebook_size", decoder.codebook_size},
      {"randomize_temperature", decoder.randomize_temperature},
      {"guidance_scale", decoder.guidance_scale},
      {"guidance_decay", decoder.guidance_decay},
      {"replace_prob", decoder.replace_prob},
      {"vit_dec_width", decoder.dec_dims.width},
      {"vit_dec_num_layers", decoder.dec_dims.num_layers},
      {"vit_dec_num_heads", decoder.dec_dims.num_heads},
      {"vit_dec_mlp_dim", decoder.dec_dims.mlp_dim}};
  j["losses"] = {{"quantizer_weight", losses.quantizer_weight},
                 {"label_smoothing", losses.label_smoothing},
                 {"loss_weight_unmasked_token",
                  losses.loss_weight_unmasked_token},
                 {"discriminator_type", losses.discriminator_type},
                 {"discriminator_start", losses.discriminator_start},
                 {"discriminator_factor", losses.discriminator_factor},
                 {"discriminator_weight", losses.discriminator_weight},
                 {"perceptual_loss", losses.perceptual_loss},
                 {"perceptual_weight", losses.perceptual_weight},
                 {"reconstruction_loss", losses.reconstruction_loss},
                 {"reconstruction_weight", losses.reconstruction_weight},
                 {"lecam_regularization_weight",
                  losses.lecam_regularization_weight}};
  j["dataset"]["params"] = {{"num_workers_per_gpu", dataset.num_workers_per_gpu},
                            {"dataset_type", dataset.dataset_type},
                            {"manifest_path", dataset.manifest_path},
                            {"num_classes", dataset.num_classes}};
  j["dataset"]["preprocessing"] = {
      {"resize_shorter_edge", dataset.resize_shorter_edge},
      {"crop_size", dataset.crop_size}};
  j["optimizer"]["params"] = {
      {"learning_rate", optimizer.learning_rate},
      {"discriminator_learning_rate", optimizer.discriminator_learning_rate},
      {"beta1", optimizer.beta1},
      {"beta2", optimizer.beta2},
      {"weight_decay", optimizer.weight_decay}};
  j["lr_scheduler"]["params"] = {{"learning_rate", lr_scheduler.learning_rate},
                                 {"warmup_steps", lr_scheduler.warmup_steps},
                                 {"end_lr", lr_scheduler.end_lr}};
  j["training"] = {{"gradient_accumulation_steps",
                    training.gradient_accumulation_steps},
                   {"per_gpu_batch_size", training.per_gpu_batch_size},
                   {"mixed_precision", training.mixed_precision},
                   {"enable_tf32", training.enable_tf32},
                   {"use_ema", training.use_ema},
                   {"ema_decay", training.ema_decay},
                   {"max_grad_norm", training.max_grad_norm},
                   {"use_mlmloss", training.use_mlmloss}};
  j["teacher"] = {{"width", teacher.width},
                  {"num_layers", teacher.num_layers},
                  {"num_heads", teacher.num_heads},
                  {"pixel_num_layers", teacher.pixel_num_layers},
                  {"max_train_steps", teacher.max_train_steps},
                  {"batch_size", teacher.batch_size}};
  j["classifier"] = {{"width", classifier.width},
                     {"num_layers", classifier.num_layers},
                     {"num_heads", classifier.num_heads},
                     {"patch_size", classifier.patch_size},
                     {"max_train_steps", classifier.max_train_steps},
                     {"batch_size", classifier.batch_size}};
  j["generator"] = {{"width", generator.width},
                    {"num_layers", generator.num_layers},
                    {"num_heads", generator.num_heads},
                    {"max_train_steps", generator.max_train_steps},
                    {"batch_size", generator.batch_size},
                    {"default_steps", generator.default_steps}};
  j["discriminator"] = {{"width", discriminator.width},
                        {"num_layers", discriminator.num_layers},
                        {"num_heads", discriminator.num_heads},
                        {"patch_size", discriminator.patch_size}};

  for (int stage = 1; stage <= 3; ++stage) {
    StageSetup s = resolve_stage(*this, stage);
    Json& sj = j["stages"]["stage" + std::to_string(stage)];
    sj = {{"steps", s.steps},
          {"beta2", s.beta2},
          {"finetune_decoder", s.finetune_decoder},
          {"single_step_generation", s.single_step_generation},
          {"guided_mask", s.guided_mask},
          {"gradient_accumulation_steps", s.gradient_accumulation_steps},
          {"batch_size", s.batch_size},
          {"replace_prob", s.replace_prob}};
  }
  return j;
}

std::string RunConfig::config_hash() const {
  return hash_hex(fnv1a64(canonical_dump(resolved_json())));
}

}  // namespace sftok
