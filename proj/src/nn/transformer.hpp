#pragma once

#include <string>
#include <vector>

#include "nn/autodiff.hpp"
#include "nn/param.hpp"

namespace sftok::nn {

// Pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
// Full bidirectional attention, no masking, no dropout.
struct TransformerBlock {
  TensorPtr ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  TensorPtr ln2_g, ln2_b, w1, b1, w2, b2;
  int num_heads = 0;
  int64_t dim = 0;

  // Registers all block parameters under `prefix.` in `reg`.
  static TransformerBlock create(ParamRegistry& reg, const std::string& prefix,
                                 int64_t dim, int num_heads, int64_t mlp_dim,
                                 Rng& rng);

  TensorPtr forward(Tape* tape, const TensorPtr& x) const;
};

// A stack of identical blocks followed by a final layer norm.
struct TransformerStack {
  std::vector<TransformerBlock> blocks;
  TensorPtr lnf_g, lnf_b;

  static TransformerStack create(ParamRegistry& reg, const std::string& prefix,
                                 int num_layers, int64_t dim, int num_heads,
                                 int64_t mlp_dim, Rng& rng);

  TensorPtr forward(Tape* tape, const TensorPtr& x) const;
};

}  // namespace sftok::nn
