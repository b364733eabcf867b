#include "vq/quantizer.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <set>

namespace sftok {

using nn::real;
using nn::TensorPtr;
using EMat =
    Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

static void check_codebook(const Codebook& cb) {
  check(cb.vectors && cb.vectors->rank() == 2, ErrorCode::invalid_argument,
        "codebook must be a [n,d] table");
  check(cb.vectors->dim(0) > 0, ErrorCode::invalid_argument, "empty codebook");
}

QuantizedLatent quantize(const nn::TensorPtr& ze_codes, const Codebook& cb) {
  check_codebook(cb);
  const int64_t n = cb.size(), d = cb.dim();
  check(ze_codes->rank() == 3 && ze_codes->dim(2) == d,
        ErrorCode::shape_mismatch,
        "quantize expects [B,K," + std::to_string(d) + "], got " +
            ze_codes->shape_str());
  check(ze_codes->finite(), ErrorCode::numeric,
        "quantize: non-finite encoder output");
  const int64_t B = ze_codes->dim(0), K = ze_codes->dim(1);
  const int64_t R = B * K;

  std::vector<real> x = ze_codes->v;
  if (cb.l2_normalized) {
    for (int64_t r = 0; r < R; ++r) {
      real s = 0;
      for (int64_t c = 0; c < d; ++c) s += x[r * d + c] * x[r * d + c];
      const real inv = 1.0 / std::sqrt(std::max(s, real(1e-24)));
      for (int64_t c = 0; c < d; ++c) x[r * d + c] *= inv;
    }
  }

  // dist(r, j) = ||x_r||^2 - 2 x_r . c_j + ||c_j||^2; the first term is
  // constant per row and dropped.
  EMap X(x.data(), R, d);
  ECMap C(cb.vectors->v.data(), n, d);
  EMat scores = X * C.transpose() * real(-2.0);
  std::vector<real> cnorm(static_cast<size_t>(n), 0.0);
  for (int64_t j = 0; j < n; ++j) cnorm[size_t(j)] = C.row(j).squaredNorm();

  QuantizedLatent out;
  out.ids = make_token_grid(B, K, static_cast<int>(n));
  out.data = nn::make_tensor({B, K, d});
  for (int64_t r = 0; r < R; ++r) {
    int64_t best = 0;
    real best_d = scores(r, 0) + cnorm[0];
    for (int64_t j = 1; j < n; ++j) {
      const real dj = scores(r, j) + cnorm[size_t(j)];
      if (dj < best_d) {
        best_d = dj;
        best = j;
      }
    }
    out.ids.ids[size_t(r)] = static_cast<int32_t>(best);
    for (int64_t c = 0; c < d; ++c)
      out.data->v[r * d + c] = cb.vectors->v[best * d + c];
  }
  return out;
}

QuantizedLatent lookup(const TokenGrid& ids, const Codebook& cb) {
  check_codebook(cb);
  const int64_t n = cb.size(), d = cb.dim();
  check(ids.vocab == n, ErrorCode::shape_mismatch,
        "lookup: id vocabulary does not match the codebook size");
  check_token_grid(ids);
  QuantizedLatent out;
  out.ids = ids;
  out.data = nn::make_tensor({ids.batch, ids.length, d});
  const int64_t R = ids.batch * ids.length;
  for (int64_t r = 0; r < R; ++r) {
    const int64_t j = ids.ids[size_t(r)];
    for (int64_t c = 0; c < d; ++c)
      out.data->v[r * d + c] = cb.vectors->v[j * d + c];
  }
  return out;
}

TensorPtr prepare_codes(nn::Tape* tape, const nn::TensorPtr& ze_codes,
                        const Codebook& cb) {
  if (!cb.l2_normalized) return ze_codes;
  return nn::l2_normalize_rows(tape, ze_codes);
}

TensorPtr embed_ids(nn::Tape* tape, const TokenGrid& ids, const Codebook& cb) {
  check_codebook(cb);
  check(ids.vocab == cb.size(), ErrorCode::shape_mismatch,
        "embed_ids: id vocabulary does not match the codebook size");
  std::vector<int64_t> flat(ids.ids.begin(), ids.ids.end());
  return nn::embedding(tape, cb.vectors, flat, {ids.batch, ids.length});
}

TensorPtr quantizer_loss(nn::Tape* tape, const nn::TensorPtr& ze,
                         const nn::TensorPtr& zq, real beta) {
  check(nn::same_shape(*ze, *zq), ErrorCode::shape_mismatch,
        "quantizer_loss: shapes differ");
  check(ze->rank() >= 1, ErrorCode::invalid_argument,
        "quantizer_loss: rank-0 input");
  const real d = real(ze->dim(ze->rank() - 1));
  auto codebook_term = nn::mse(tape, nn::detach(ze), zq);
  auto commit_term = nn::mse(tape, ze, nn::detach(zq));
  return nn::weighted_sum_scalars(tape,
                                  {{d, codebook_term}, {beta * d, commit_term}});
}

double codebook_usage(const TokenGrid& ids, int64_t codebook_size) {
  check(codebook_size > 0, ErrorCode::invalid_argument, "empty codebook");
  std::set<int32_t> uniq(ids.ids.begin(), ids.ids.end());
  return double(uniq.size()) / double(codebook_size);
}

void renormalize(Codebook& cb) {
  if (!cb.l2_normalized) return;
  const int64_t n = cb.size(), d = cb.dim();
  for (int64_t r = 0; r < n; ++r) {
    real s = 0;
    for (int64_t c = 0; c < d; ++c)
      s += cb.vectors->v[r * d + c] * cb.vectors->v[r * d + c];
    const real inv = 1.0 / std::sqrt(std::max(s, real(1e-24)));
    for (int64_t c = 0; c < d; ++c) cb.vectors->v[r * d + c] *= inv;
  }
}

}  // namespace sftok
