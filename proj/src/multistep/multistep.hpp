#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "vq/quantizer.hpp"

namespace sftok {

// Per-step reveal counts for iterative decoding. Counts sum to the grid
// length and every step reveals at least one position.
struct StepSchedule {
  std::vector<int64_t> counts;
  std::string mode;  // cosine | uniform
};

// cosine: difference the ceil'd cosine mask-ratio boundaries, then shift
// reveals from the largest step into any zero step so every count is >= 1.
// uniform: equal split, remainder distributed to the last steps.
StepSchedule make_schedule(int num_steps, int64_t grid_length,
                           const std::string& mode);

// Samples one token id from a single logit row: strict argmax at temperature
// zero (consumes no randomness), otherwise the temperature-scaled softmax.
// Returns the id with its log-probability under the sampling distribution.
std::pair<int32_t, nn::real> sample_position(const nn::real* logits, int64_t V,
                                             nn::real temperature, Rng& rng);

// One decode pass on the fully masked grid; every position sampled from the
// temperature-scaled softmax (argmax when temperature == 0). No gradients.
TokenGrid first_step_predict(const QuantizedLatent& zq,
                             const TokenizerModel& model, nn::real temperature,
                             Rng& rng);

// Reveals the given still-masked positions (one index list per batch row).
// Each revealed position independently takes `pred` with probability `ratio`
// and `truth` otherwise; only the chosen source is ever read.
MaskState sfvr_replace(const MaskState& state, const TokenGrid& pred,
                       const std::vector<std::vector<int64_t>>& reveals,
                       double ratio, const TokenGrid& truth, Rng& rng);

struct StepCapture {
  int step = 0;            // 0-based
  nn::TensorPtr logits;    // [B, L2, V] for this pass
  const MaskState* before = nullptr;
  const MaskState* after = nullptr;
};
using StepObserver = std::function<void(const StepCapture&)>;

// Iterative masked decoding: T passes, committing the scheduled count of
// highest-confidence sampled positions per row after each pass. Confidence is
// the sampled token's log-probability plus Gumbel noise scaled by
// temperature * (1 - (t+1)/T). Deterministic given the rng state.
TokenGrid multistep_reconstruct(const QuantizedLatent& zq,
                                const TokenizerModel& model,
                                const StepSchedule& schedule,
                                nn::real temperature, Rng& rng,
                                const StepObserver& observer = {});

}  // namespace sftok
