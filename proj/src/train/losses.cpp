#include "train/losses.hpp"

namespace sftok {

using nn::real;
using nn::TensorPtr;

MaskedCeTerms masked_ce_terms(nn::Tape* tape, const TensorPtr& logits,
                              const TokenGrid& truth, const MaskState& state,
                              real label_smoothing) {
  const int64_t B = state.batch, L = state.length;
  check(logits->rank() == 3 && logits->dim(0) == B && logits->dim(1) == L &&
            logits->dim(2) == state.vocab,
        ErrorCode::shape_mismatch, "logits do not match the mask state");
  check(truth.batch == B && truth.length == L && truth.vocab == state.vocab,
        ErrorCode::shape_mismatch, "truth grid does not match the mask state");

  int64_t n_masked = 0, n_resolved = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < L; ++i)
      (state.is_resolved(b, i) ? n_resolved : n_masked)++;
  check(n_masked + n_resolved > 0, ErrorCode::invalid_argument,
        "empty grid for the token loss");

  std::vector<int64_t> targets(size_t(B * L));
  for (int64_t r = 0; r < B * L; ++r) targets[size_t(r)] = truth.ids[size_t(r)];

  MaskedCeTerms out;
  if (n_masked > 0) {
    std::vector<real> w(size_t(B * L), 0.0);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < L; ++i)
        if (!state.is_resolved(b, i)) w[size_t(b * L + i)] = 1.0 / real(n_masked);
    out.masked = nn::weighted_ce_sum(tape, logits, targets, w, label_smoothing);
  }
  if (n_resolved > 0) {
    std::vector<real> w(size_t(B * L), 0.0);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < L; ++i)
        if (state.is_resolved(b, i)) w[size_t(b * L + i)] = 1.0 / real(n_resolved);
    out.unmasked = nn::weighted_ce_sum(tape, logits, targets, w, label_smoothing);
  }
  return out;
}

TensorPtr masked_ce_loss(nn::Tape* tape, const TensorPtr& logits,
                         const TokenGrid& truth, const MaskState& state,
                         real w_unmasked, real label_smoothing) {
  MaskedCeTerms t = masked_ce_terms(tape, logits, truth, state, label_smoothing);
  std::vector<std::pair<real, TensorPtr>> parts;
  if (t.masked) parts.push_back({1.0, t.masked});
  if (t.unmasked) parts.push_back({w_unmasked, t.unmasked});
  return nn::weighted_sum_scalars(tape, parts);
}

}  // namespace sftok
