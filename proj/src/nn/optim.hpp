#pragma once

#include <cstdint>
#include <vector>

#include "nn/param.hpp"

namespace sftok::nn {

struct AdamWConfig {
  real lr = 1e-4;
  real beta1 = 0.9;
  real beta2 = 0.99;
  real eps = 1e-8;
  real weight_decay = 1e-4;
  real max_grad_norm = 1.0;  // <= 0 disables clipping
};

// Piecewise schedule: linear warmup from 0 to base_lr over warmup_steps,
// then cosine decay from base_lr down to end_lr at total_steps.
struct LrSchedule {
  real base_lr = 1e-4;
  real end_lr = 1e-5;
  int64_t warmup_steps = 0;
  int64_t total_steps = 1;

  real at(int64_t step) const;
};

// AdamW with decoupled weight decay. Decay is skipped for rank-1 parameters
// (biases, norm scales, per-slot tables declared flat).
class AdamW {
 public:
  AdamW(ParamRegistry& params, AdamWConfig cfg);

  // Clips the global grad norm, then applies one update with the given lr.
  // Returns the pre-clip global grad norm.
  real step(real lr);

  int64_t steps_done() const { return t_; }

  // Raw state access for checkpointing. Layout follows registry order.
  std::vector<std::vector<real>>& m() { return m_; }
  std::vector<std::vector<real>>& v() { return v_; }
  int64_t& t() { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  ParamRegistry& params_;
  AdamWConfig cfg_;
  std::vector<std::vector<real>> m_, v_;
  std::vector<bool> decay_;
  int64_t t_ = 0;
};

// Exponential moving average of all registry parameters:
// shadow = decay * shadow + (1 - decay) * raw.
class Ema {
 public:
  Ema(ParamRegistry& params, real decay);

  void update();
  // Copies shadow values into the live parameters (used at eval/export time).
  void copy_to_params() const;

  real decay() const { return decay_; }
  std::vector<std::vector<real>>& shadow() { return shadow_; }

 private:
  ParamRegistry& params_;
  real decay_;
  std::vector<std::vector<real>> shadow_;
};

}  // namespace sftok::nn
