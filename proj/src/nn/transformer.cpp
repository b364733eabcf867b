#include "nn/transformer.hpp"

#include <cmath>

namespace sftok::nn {

TransformerBlock TransformerBlock::create(ParamRegistry& reg,
                                          const std::string& prefix,
                                          int64_t dim, int num_heads,
                                          int64_t mlp_dim, Rng& rng) {
  check(dim % num_heads == 0, ErrorCode::config,
        "transformer: dim must be divisible by num_heads");
  TransformerBlock b;
  b.num_heads = num_heads;
  b.dim = dim;
  const real ws = 0.02;
  b.ln1_g = reg.full(prefix + ".ln1.g", {dim}, 1.0);
  b.ln1_b = reg.zeros(prefix + ".ln1.b", {dim});
  b.wq = reg.randn(prefix + ".attn.wq", {dim, dim}, ws, rng);
  b.bq = reg.zeros(prefix + ".attn.bq", {dim});
  b.wk = reg.randn(prefix + ".attn.wk", {dim, dim}, ws, rng);
  b.bk = reg.zeros(prefix + ".attn.bk", {dim});
  b.wv = reg.randn(prefix + ".attn.wv", {dim, dim}, ws, rng);
  b.bv = reg.zeros(prefix + ".attn.bv", {dim});
  b.wo = reg.randn(prefix + ".attn.wo", {dim, dim}, ws, rng);
  b.bo = reg.zeros(prefix + ".attn.bo", {dim});
  b.ln2_g = reg.full(prefix + ".ln2.g", {dim}, 1.0);
  b.ln2_b = reg.zeros(prefix + ".ln2.b", {dim});
  b.w1 = reg.randn(prefix + ".mlp.w1", {dim, mlp_dim}, ws, rng);
  b.b1 = reg.zeros(prefix + ".mlp.b1", {mlp_dim});
  b.w2 = reg.randn(prefix + ".mlp.w2", {mlp_dim, dim}, ws, rng);
  b.b2 = reg.zeros(prefix + ".mlp.b2", {dim});
  return b;
}

TensorPtr TransformerBlock::forward(Tape* tape, const TensorPtr& x) const {
  check(x->rank() == 3 && x->dim(2) == dim, ErrorCode::shape_mismatch,
        "transformer block: input " + x->shape_str());
  const int64_t B = x->dim(0);
  const int64_t dh = dim / num_heads;

  auto h = layer_norm(tape, x, ln1_g, ln1_b);
  auto q = split_heads(tape, linear(tape, h, wq, bq), num_heads);
  auto k = split_heads(tape, linear(tape, h, wk, bk), num_heads);
  auto v = split_heads(tape, linear(tape, h, wv, bv), num_heads);

  auto scores = scale(tape, bmm(tape, q, k, /*trans_b=*/true),
                      1.0 / std::sqrt(static_cast<real>(dh)));
  auto attn = softmax_rows(tape, scores);
  auto ctx = merge_heads(tape, bmm(tape, attn, v, /*trans_b=*/false),
                         num_heads, B);
  auto x1 = add(tape, x, linear(tape, ctx, wo, bo));

  auto h2 = layer_norm(tape, x1, ln2_g, ln2_b);
  auto mid = gelu(tape, linear(tape, h2, w1, b1));
  return add(tape, x1, linear(tape, mid, w2, b2));
}

TransformerStack TransformerStack::create(ParamRegistry& reg,
                                          const std::string& prefix,
                                          int num_layers, int64_t dim,
                                          int num_heads, int64_t mlp_dim,
                                          Rng& rng) {
  TransformerStack s;
  for (int i = 0; i < num_layers; ++i) {
    s.blocks.push_back(TransformerBlock::create(
        reg, prefix + ".block" + std::to_string(i), dim, num_heads, mlp_dim,
        rng));
  }
  s.lnf_g = reg.full(prefix + ".lnf.g", {dim}, 1.0);
  s.lnf_b = reg.zeros(prefix + ".lnf.b", {dim});
  return s;
}

TensorPtr TransformerStack::forward(Tape* tape, const TensorPtr& x) const {
  TensorPtr h = x;
  for (const auto& b : blocks) h = b.forward(tape, h);
  return layer_norm(tape, h, lnf_g, lnf_b);
}

}  // namespace sftok::nn
