#include "nn/optim.hpp"

#include <cmath>

namespace sftok::nn {

real LrSchedule::at(int64_t step) const {
  check(total_steps >= 1, ErrorCode::config, "lr schedule: total_steps >= 1");
  if (warmup_steps > 0 && step < warmup_steps) {
    return base_lr * static_cast<real>(step + 1) /
           static_cast<real>(warmup_steps);
  }
  if (step >= total_steps) return end_lr;
  const int64_t span = total_steps - warmup_steps;
  if (span <= 0) return end_lr;
  const real frac =
      static_cast<real>(step - warmup_steps) / static_cast<real>(span);
  const real c = 0.5 * (1.0 + std::cos(M_PI * frac));
  return end_lr + (base_lr - end_lr) * c;
}

AdamW::AdamW(ParamRegistry& params, AdamWConfig cfg)
    : params_(params), cfg_(cfg) {
  for (const auto& p : params_.tensors()) {
    m_.emplace_back(p->numel(), 0.0);
    v_.emplace_back(p->numel(), 0.0);
    decay_.push_back(p->rank() > 1);
  }
}

real AdamW::step(real lr) {
  real norm2 = 0.0;
  for (const auto& p : params_.tensors()) {
    if (p->g.empty()) continue;
    for (real g : p->g) norm2 += g * g;
  }
  const real norm = std::sqrt(norm2);
  real clip = 1.0;
  if (cfg_.max_grad_norm > 0.0 && norm > cfg_.max_grad_norm) {
    clip = cfg_.max_grad_norm / norm;
  }

  ++t_;
  const real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<real>(t_));
  const real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<real>(t_));

  const auto& tensors = params_.tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    Tensor& p = *tensors[i];
    if (p.g.empty()) continue;
    std::vector<real>& m = m_[i];
    std::vector<real>& v = v_[i];
    const real wd = decay_[i] ? cfg_.weight_decay : 0.0;
    for (size_t k = 0; k < p.v.size(); ++k) {
      const real g = p.g[k] * clip;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      const real mhat = m[k] / bc1;
      const real vhat = v[k] / bc2;
      p.v[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * p.v[k]);
    }
  }
  return norm;
}

Ema::Ema(ParamRegistry& params, real decay) : params_(params), decay_(decay) {
  check(decay >= 0.0 && decay <= 1.0, ErrorCode::config,
        "ema decay must be in [0, 1]");
  for (const auto& p : params_.tensors()) shadow_.push_back(p->v);
}

void Ema::update() {
  const auto& tensors = params_.tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    const std::vector<real>& raw = tensors[i]->v;
    std::vector<real>& s = shadow_[i];
    for (size_t k = 0; k < s.size(); ++k)
      s[k] = decay_ * s[k] + (1.0 - decay_) * raw[k];
  }
}

void Ema::copy_to_params() const {
  const auto& tensors = params_.tensors();
  for (size_t i = 0; i < tensors.size(); ++i) tensors[i]->v = shadow_[i];
}

}  // namespace sftok::nn
