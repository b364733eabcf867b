#include "multistep/multistep.hpp"

#include <algorithm>
#include <cmath>

namespace sftok {

using nn::real;

StepSchedule make_schedule(int num_steps, int64_t grid_length,
                           const std::string& mode) {
  check(num_steps >= 1 && num_steps <= grid_length, ErrorCode::invalid_argument,
        "schedule needs 1 <= steps <= grid length");
  StepSchedule s;
  s.mode = mode;
  s.counts.assign(size_t(num_steps), 0);
  if (mode == "uniform") {
    const int64_t base = grid_length / num_steps;
    const int64_t extra = grid_length % num_steps;
    for (int t = 0; t < num_steps; ++t)
      s.counts[size_t(t)] = base + (t >= num_steps - extra ? 1 : 0);
  } else if (mode == "cosine") {
    const double T = double(num_steps);
    std::vector<int64_t> boundary(size_t(num_steps) + 1);
    for (int t = 0; t <= num_steps; ++t) {
      const double frac = std::cos(M_PI * double(t) / (2.0 * T));
      boundary[size_t(t)] =
          static_cast<int64_t>(std::ceil(double(grid_length) * frac));
    }
    boundary[0] = grid_length;
    boundary[size_t(num_steps)] = 0;
    for (int t = 0; t < num_steps; ++t)
      s.counts[size_t(t)] = boundary[size_t(t)] - boundary[size_t(t) + 1];
    for (;;) {
      int zero = -1;
      for (int t = 0; t < num_steps; ++t)
        if (s.counts[size_t(t)] == 0) {
          zero = t;
          break;
        }
      if (zero < 0) break;
      int big = 0;
      for (int t = 1; t < num_steps; ++t)
        if (s.counts[size_t(t)] > s.counts[size_t(big)]) big = t;
      s.counts[size_t(big)] -= 1;
      s.counts[size_t(zero)] += 1;
    }
  } else {
    fail(ErrorCode::invalid_argument, "unknown schedule mode: " + mode);
  }
  int64_t total = 0;
  for (auto c : s.counts) {
    check(c >= 1, ErrorCode::state, "schedule produced an empty step");
    total += c;
  }
  check(total == grid_length, ErrorCode::state,
        "schedule counts do not cover the grid");
  return s;
}

// Samples one position. temperature == 0 takes the argmax (lowest index on
// ties) without consuming randomness; otherwise draws from the scaled softmax.
// The returned confidence is the chosen token's log-probability under the
// sampling distribution (softmax at temperature 1 in the greedy case).
std::pair<int32_t, real> sample_position(const real* logits, int64_t V,
                                         real temperature, Rng& rng) {
  real mx = logits[0];
  int64_t arg = 0;
  for (int64_t j = 1; j < V; ++j)
    if (logits[j] > mx) {
      mx = logits[j];
      arg = j;
    }
  if (temperature == 0.0) {
    real z = 0;
    for (int64_t j = 0; j < V; ++j) z += std::exp(logits[j] - mx);
    return {static_cast<int32_t>(arg), -std::log(z)};
  }
  std::vector<double> p(static_cast<size_t>(V), 0.0);
  real z = 0;
  for (int64_t j = 0; j < V; ++j) {
    p[size_t(j)] = std::exp((logits[j] - mx) / temperature);
    z += p[size_t(j)];
  }
  const int id = rng.sample_discrete(p);
  const real logp = std::log(p[size_t(id)] / z);
  return {static_cast<int32_t>(id), logp};
}

static void check_logits(const nn::TensorPtr& logits, int64_t B, int64_t L2,
                         int V) {
  check(logits->rank() == 3 && logits->dim(0) == B && logits->dim(1) == L2 &&
            logits->dim(2) == V,
        ErrorCode::shape_mismatch, "unexpected decoder output shape");
  check(logits->finite(), ErrorCode::numeric, "non-finite decoder logits");
}

TokenGrid first_step_predict(const QuantizedLatent& zq,
                             const TokenizerModel& model, real temperature,
                             Rng& rng) {
  check(temperature >= 0.0, ErrorCode::invalid_argument,
        "temperature must be non-negative");
  const int64_t B = zq.ids.batch;
  const int64_t L2 = model.grid_length();
  const int V = model.teacher_vocab();
  MaskState state = fully_masked(B, L2, V);
  auto logits = model.decode_step(nullptr, state, zq.data);
  check_logits(logits, B, L2, V);
  TokenGrid out = make_token_grid(B, L2, V);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < L2; ++i) {
      const real* row = logits->v.data() + (b * L2 + i) * V;
      out.at(b, i) = sample_position(row, V, temperature, rng).first;
    }
  return out;
}

MaskState sfvr_replace(const MaskState& state, const TokenGrid& pred,
                       const std::vector<std::vector<int64_t>>& reveals,
                       double ratio, const TokenGrid& truth, Rng& rng) {
  check(ratio >= 0.0 && ratio <= 1.0, ErrorCode::invalid_argument,
        "replace ratio must lie in [0,1]");
  check(pred.batch == state.batch && pred.length == state.length,
        ErrorCode::shape_mismatch, "prediction grid does not match the state");
  check(truth.batch == state.batch && truth.length == state.length,
        ErrorCode::shape_mismatch, "truth grid does not match the state");
  check(int64_t(reveals.size()) == state.batch, ErrorCode::shape_mismatch,
        "need one reveal list per batch row");
  MaskState out = state;
  for (int64_t b = 0; b < state.batch; ++b)
    for (int64_t i : reveals[size_t(b)]) {
      check(i >= 0 && i < state.length, ErrorCode::out_of_range,
            "reveal position outside the grid");
      const bool take_pred = rng.bernoulli(ratio);
      const int32_t tok = take_pred ? pred.at(b, i) : truth.at(b, i);
      commit_position(out, b, i, tok);
    }
  out.step_index = state.step_index + 1;
  return out;
}

TokenGrid multistep_reconstruct(const QuantizedLatent& zq,
                                const TokenizerModel& model,
                                const StepSchedule& schedule, real temperature,
                                Rng& rng, const StepObserver& observer) {
  check(temperature >= 0.0, ErrorCode::invalid_argument,
        "temperature must be non-negative");
  const int64_t B = zq.ids.batch;
  const int64_t L2 = model.grid_length();
  const int V = model.teacher_vocab();
  int64_t total = 0;
  for (auto c : schedule.counts) total += c;
  check(total == L2, ErrorCode::shape_mismatch,
        "schedule does not cover the decoder grid");
  const int T = int(schedule.counts.size());

  MaskState state = fully_masked(B, L2, V);
  std::vector<int32_t> sampled(size_t(B) * size_t(L2));
  std::vector<real> conf(size_t(B) * size_t(L2));

  for (int t = 0; t < T; ++t) {
    auto logits = model.decode_step(nullptr, state, zq.data);
    check_logits(logits, B, L2, V);

    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < L2; ++i) {
        if (state.is_resolved(b, i)) continue;
        const real* row = logits->v.data() + (b * L2 + i) * V;
        auto [id, logp] = sample_position(row, V, temperature, rng);
        sampled[size_t(b * L2 + i)] = id;
        conf[size_t(b * L2 + i)] = logp;
      }
    const real noise = temperature *(1.0 - real(t + 1) / real(T));
    if (noise > 0.0)
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < L2; ++i)
          if (!state.is_resolved(b, i))
            conf[size_t(b * L2 + i)] += noise * rng.gumbel();

    MaskState before = state;
    for (int64_t b = 0; b < B; ++b) {
      std::vector<int64_t> open;
      for (int64_t i = 0; i < L2; ++i)
        if (!state.is_resolved(b, i)) open.push_back(i);
      const int64_t k = schedule.counts[size_t(t)];
      check(k <= int64_t(open.size()), ErrorCode::state,
            "schedule reveals more positions than remain masked");
      std::stable_sort(open.begin(), open.end(), [&](int64_t a, int64_t c) {
        return conf[size_t(b * L2 + a)] > conf[size_t(b * L2 + c)];
      });
      for (int64_t j = 0; j < k; ++j)
        commit_position(state, b, open[size_t(j)],
                        sampled[size_t(b * L2 + open[size_t(j)])]);
    }
    state.step_index = t + 1;

    if (observer) {
      StepCapture cap;
      cap.step = t;
      cap.logits = logits;
      cap.before = &before;
      cap.after = &state;
      observer(cap);
    }
  }

  TokenGrid out = make_token_grid(B, L2, V);
  out.ids = state.tokens;
  check_token_grid(out);
  return out;
}

}  // namespace sftok
