#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "nn/tensor.hpp"

namespace sftok::nn {

// Reverse-mode tape. Ops push backward closures while they run forward;
// backward() replays them in reverse. One tape per training step, cleared
// afterwards. Passing a null Tape* to any op runs it in inference mode.
class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  void backward(const TensorPtr& loss);

  void clear() { ops_.clear(); }
  size_t size() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
};

// ---- Linear algebra ----

// x [..., Din] * W [Din, Dout] (+ b [Dout]); leading dims flattened to rows.
TensorPtr linear(Tape* tape, const TensorPtr& x, const TensorPtr& W,
                 const TensorPtr& b);

// Batched matmul: A [G, M, K] * B [G, K, N] -> [G, M, N].
// With trans_b, B is [G, N, K] and the product is A * B^T.
TensorPtr bmm(Tape* tape, const TensorPtr& A, const TensorPtr& B, bool trans_b);

// ---- Shape plumbing ----

TensorPtr split_heads(Tape* tape, const TensorPtr& x, int num_heads);
TensorPtr merge_heads(Tape* tape, const TensorPtr& x, int num_heads,
                      int64_t batch);
TensorPtr concat_seq(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr slice_seq(Tape* tape, const TensorPtr& x, int64_t start, int64_t len);
TensorPtr reshape(Tape* tape, const TensorPtr& x, std::vector<int64_t> shape);

// ---- Elementwise ----

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
// x [B, S, D] + p [S, D], p broadcast over the batch dim.
TensorPtr add_seq_bias(Tape* tape, const TensorPtr& x, const TensorPtr& p);
// Scales each last-dim row r of x by the constant row_scale[r]
// (rows indexed over the flattened leading dims).
TensorPtr mask_rows(Tape* tape, const TensorPtr& x,
                    const std::vector<real>& row_scale);
TensorPtr scale(Tape* tape, const TensorPtr& x, real c);
TensorPtr affine(Tape* tape, const TensorPtr& x, real a, real b);
TensorPtr gelu(Tape* tape, const TensorPtr& x);
TensorPtr tanh_act(Tape* tape, const TensorPtr& x);
TensorPtr relu(Tape* tape, const TensorPtr& x);

// ---- Normalization / attention pieces ----

TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, real eps = 1e-6);
TensorPtr softmax_rows(Tape* tape, const TensorPtr& x);
TensorPtr l2_normalize_rows(Tape* tape, const TensorPtr& x, real eps = 1e-12);

// ---- Tables ----

// Gathers rows of table [V, D] at ids; output shape = prefix + [D].
// Backward scatter-adds into the table.
TensorPtr embedding(Tape* tape, const TensorPtr& table,
                    const std::vector<int64_t>& ids,
                    std::vector<int64_t> prefix_shape);

// ---- Patch layout ----

// [B,H,W,3] -> [B, (H/P)*(W/P), P*P*3], row-major patches in raster order.
TensorPtr extract_patches(Tape* tape, const TensorPtr& images, int P);
// Inverse of extract_patches.
TensorPtr merge_patches(Tape* tape, const TensorPtr& x, int P, int64_t H,
                        int64_t W);

// ---- Reductions / losses ----

TensorPtr mean_pool_seq(Tape* tape, const TensorPtr& x);
TensorPtr mean_all(Tape* tape, const TensorPtr& x);

// Sum over flattened positions i of w[i] * nll(logits row i, target[i]).
// Rows with w[i] == 0 are skipped entirely (their target id is never read).
// label_smoothing s replaces the one-hot target with (1-s)*onehot + s/V.
TensorPtr weighted_ce_sum(Tape* tape, const TensorPtr& logits,
                          const std::vector<int64_t>& targets,
                          const std::vector<real>& weights,
                          real label_smoothing = 0.0);

TensorPtr mse(Tape* tape, const TensorPtr& a, const TensorPtr& b);
// mean((x - c)^2) against a constant; used by the LeCam terms.
TensorPtr mean_sq_const(Tape* tape, const TensorPtr& x, real c);

// total = sum_i coef_i * scalar_i (each scalar_i shape [1]).
TensorPtr weighted_sum_scalars(
    Tape* tape, const std::vector<std::pair<real, TensorPtr>>& terms);

// ---- Gradient flow control ----

TensorPtr detach(const TensorPtr& x);

// Forward value is `quantized`; gradient w.r.t. `ze` is the identity map.
// `quantized` is treated as a constant.
TensorPtr straight_through(Tape* tape, const TensorPtr& ze,
                           const TensorPtr& quantized);

// Hard embedding with a soft backward: forward returns table[ids[r]] per row,
// gradients flow as if the output were probs @ table (both sides).
// probs: [R,V], ids: R sampled indices, table: [V,D] -> out [R,D] reshaped to
// prefix_shape + [D].
TensorPtr mixture_embedding_st(Tape* tape, const TensorPtr& probs,
                               const std::vector<int64_t>& ids,
                               const TensorPtr& table,
                               std::vector<int64_t> prefix_shape);

}  // namespace sftok::nn
