#pragma once

#include <string>
#include <vector>

#include "core/types.hpp"
#include "nn/autodiff.hpp"

namespace sftok {

// Per-term record of one training step. `total` must equal the weighted term
// sum within 1e-6; additivity_gap() is asserted by tests and the trainer.
struct LossReport {
  struct Term {
    std::string name;
    double weight = 0.0;
    double value = 0.0;
  };
  std::vector<Term> terms;
  double total = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;

  void add(const std::string& name, double weight, double value) {
    terms.push_back({name, weight, value});
  }
  double weighted_sum() const {
    double s = 0.0;
    for (const auto& t : terms) s += t.weight * t.value;
    return s;
  }
  double additivity_gap() const { return std::abs(total - weighted_sum()); }
  const Term* find(const std::string& name) const {
    for (const auto& t : terms)
      if (t.name == name) return &t;
    return nullptr;
  }
};

// Token losses against the teacher grid: mean cross-entropy over still-masked
// positions plus w_unmasked times the mean over already-resolved positions.
// Either set may be empty (its term is then dropped); both empty is an error.
struct MaskedCeTerms {
  nn::TensorPtr masked;    // null when no position is masked
  nn::TensorPtr unmasked;  // null when no position is resolved
};

MaskedCeTerms masked_ce_terms(nn::Tape* tape, const nn::TensorPtr& logits,
                              const TokenGrid& truth, const MaskState& state,
                              nn::real label_smoothing);

// The combined scalar: masked + w_unmasked * unmasked.
nn::TensorPtr masked_ce_loss(nn::Tape* tape, const nn::TensorPtr& logits,
                             const TokenGrid& truth, const MaskState& state,
                             nn::real w_unmasked, nn::real label_smoothing);

}  // namespace sftok
