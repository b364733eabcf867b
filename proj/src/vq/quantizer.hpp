#pragma once

#include "core/types.hpp"
#include "nn/autodiff.hpp"

namespace sftok {

// Code table for nearest-neighbor quantization. `vectors` is shared with the
// model's parameter registry; updates happen only through the optimizer, after
// which renormalize() restores unit rows when the flag is set.
struct Codebook {
  nn::TensorPtr vectors;  // [n, d]
  bool l2_normalized = false;

  int64_t size() const { return vectors->dim(0); }
  int64_t dim() const { return vectors->dim(1); }
};

// Discrete latents: `data` holds the exact codebook rows (detached constants),
// `ids` the selected indices with vocab = codebook size.
struct QuantizedLatent {
  nn::TensorPtr data;  // [B, K, d]
  TokenGrid ids;
};

// Nearest codebook row per position under squared L2 distance, lowest index on
// ties. When the codebook is l2_normalized, inputs are normalized before the
// search.
QuantizedLatent quantize(const nn::TensorPtr& ze_codes, const Codebook& cb);

// Table rows for explicit ids.
QuantizedLatent lookup(const TokenGrid& ids, const Codebook& cb);

// Differentiable pieces of the training path.
// Row-normalizes the projected features iff the codebook is l2_normalized.
nn::TensorPtr prepare_codes(nn::Tape* tape, const nn::TensorPtr& ze_codes,
                            const Codebook& cb);
// Differentiable gather of codebook rows (gradients reach the table).
nn::TensorPtr embed_ids(nn::Tape* tape, const TokenGrid& ids,
                        const Codebook& cb);
// mean over positions of ||sg(ze) - zq||^2 + beta * ||ze - sg(zq)||^2.
nn::TensorPtr quantizer_loss(nn::Tape* tape, const nn::TensorPtr& ze,
                             const nn::TensorPtr& zq, nn::real beta);

// |unique ids| / n.
double codebook_usage(const TokenGrid& ids, int64_t codebook_size);

// Restores unit-norm rows after an optimizer update; no-op when the flag is
// off.
void renormalize(Codebook& cb);

}  // namespace sftok
