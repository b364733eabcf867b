#include "nn/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace sftok::nn {

namespace {

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

constexpr real kInvSqrt2 = 0.70710678118654752440;
constexpr real kInvSqrt2Pi = 0.39894228040143267794;

bool want_grad(Tape* tape, std::initializer_list<const TensorPtr*> inputs) {
  if (!tape) return false;
  for (const TensorPtr* t : inputs) {
    if (*t && (*t)->requires_grad) return true;
  }
  return false;
}

int64_t rows_of(const Tensor& t, int64_t last) {
  return t.numel() / last;
}

}  // namespace

void Tape::backward(const TensorPtr& loss) {
  check(loss->numel() == 1, ErrorCode::invalid_argument,
        "backward: loss must be a scalar");
  loss->ensure_grad();
  loss->g[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

TensorPtr linear(Tape* tape, const TensorPtr& x, const TensorPtr& W,
                 const TensorPtr& b) {
  const int64_t din = W->dim(0);
  const int64_t dout = W->dim(1);
  check(x->rank() >= 1 && x->shape.back() == din, ErrorCode::shape_mismatch,
        "linear: input feature dim " + x->shape_str() + " vs W " + W->shape_str());
  if (b) {
    check(b->numel() == dout, ErrorCode::shape_mismatch, "linear: bias size");
  }
  const int64_t rows = rows_of(*x, din);

  std::vector<int64_t> out_shape = x->shape;
  out_shape.back() = dout;
  auto out = make_tensor(out_shape);

  CMapM X(x->v.data(), rows, din);
  CMapM Wm(W->v.data(), din, dout);
  MapM Y(out->v.data(), rows, dout);
  Y.noalias() = X * Wm;
  if (b) {
    CMapM bm(b->v.data(), 1, dout);
    Y.rowwise() += bm.row(0);
  }

  if (want_grad(tape, {&x, &W, &b})) {
    out->requires_grad = true;
    tape->record([x, W, b, out, rows, din, dout]() {
      if (out->g.empty()) return;
      CMapM dY(out->g.data(), rows, dout);
      CMapM X(x->v.data(), rows, din);
      CMapM Wm(W->v.data(), din, dout);
      if (x->requires_grad) {
        x->ensure_grad();
        MapM dX(x->g.data(), rows, din);
        dX.noalias() += dY * Wm.transpose();
      }
      if (W->requires_grad) {
        W->ensure_grad();
        MapM dW(W->g.data(), din, dout);
        dW.noalias() += X.transpose() * dY;
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        MapM db(b->g.data(), 1, dout);
        db.row(0) += dY.colwise().sum();
      }
    });
  }
  return out;
}

TensorPtr bmm(Tape* tape, const TensorPtr& A, const TensorPtr& B, bool trans_b) {
  check(A->rank() == 3 && B->rank() == 3, ErrorCode::shape_mismatch,
        "bmm: expects rank-3 inputs");
  const int64_t G = A->dim(0), M = A->dim(1), K = A->dim(2);
  const int64_t N = trans_b ? B->dim(1) : B->dim(2);
  const int64_t Bk = trans_b ? B->dim(2) : B->dim(1);
  check(B->dim(0) == G && Bk == K, ErrorCode::shape_mismatch,
        "bmm: " + A->shape_str() + " x " + B->shape_str());

  auto out = make_tensor({G, M, N});
  for (int64_t g = 0; g < G; ++g) {
    CMapM Am(A->v.data() + g * M * K, M, K);
    MapM Om(out->v.data() + g * M * N, M, N);
    if (trans_b) {
      CMapM Bm(B->v.data() + g * N * K, N, K);
      Om.noalias() = Am * Bm.transpose();
    } else {
      CMapM Bm(B->v.data() + g * K * N, K, N);
      Om.noalias() = Am * Bm;
    }
  }

  if (want_grad(tape, {&A, &B})) {
    out->requires_grad = true;
    tape->record([A, B, out, trans_b, G, M, K, N]() {
      if (out->g.empty()) return;
      if (A->requires_grad) A->ensure_grad();
      if (B->requires_grad) B->ensure_grad();
      for (int64_t g = 0; g < G; ++g) {
        CMapM dO(out->g.data() + g * M * N, M, N);
        CMapM Am(A->v.data() + g * M * K, M, K);
        if (trans_b) {
          CMapM Bm(B->v.data() + g * N * K, N, K);
          if (A->requires_grad) {
            MapM dA(A->g.data() + g * M * K, M, K);
            dA.noalias() += dO * Bm;
          }
          if (B->requires_grad) {
            MapM dB(B->g.data() + g * N * K, N, K);
            dB.noalias() += dO.transpose() * Am;
          }
        } else {
          CMapM Bm(B->v.data() + g * K * N, K, N);
          if (A->requires_grad) {
            MapM dA(A->g.data() + g * M * K, M, K);
            dA.noalias() += dO * Bm.transpose();
          }
          if (B->requires_grad) {
            MapM dB(B->g.data() + g * K * N, K, N);
            dB.noalias() += Am.transpose() * dO;
          }
        }
      }
    });
  }
  return out;
}

TensorPtr split_heads(Tape* tape, const TensorPtr& x, int num_heads) {
  check(x->rank() == 3, ErrorCode::shape_mismatch, "split_heads: rank-3 input");
  const int64_t B = x->dim(0), S = x->dim(1), D = x->dim(2);
  check(D % num_heads == 0, ErrorCode::shape_mismatch,
        "split_heads: D not divisible by heads");
  const int64_t H = num_heads, Dh = D / H;
  auto out = make_tensor({B * H, S, Dh});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t s = 0; s < S; ++s)
      for (int64_t h = 0; h < H; ++h) {
        const real* src = x->v.data() + (b * S + s) * D + h * Dh;
        real* dst = out->v.data() + ((b * H + h) * S + s) * Dh;
        std::copy(src, src + Dh, dst);
      }

  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, B, S, H, Dh]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      const int64_t D = H * Dh;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s)
          for (int64_t h = 0; h < H; ++h) {
            const real* src = out->g.data() + ((b * H + h) * S + s) * Dh;
            real* dst = x->g.data() + (b * S + s) * D + h * Dh;
            for (int64_t i = 0; i < Dh; ++i) dst[i] += src[i];
          }
    });
  }
  return out;
}

TensorPtr merge_heads(Tape* tape, const TensorPtr& x, int num_heads,
                      int64_t batch) {
  check(x->rank() == 3, ErrorCode::shape_mismatch, "merge_heads: rank-3 input");
  const int64_t H = num_heads, S = x->dim(1), Dh = x->dim(2);
  check(x->dim(0) == batch * H, ErrorCode::shape_mismatch, "merge_heads: dims");
  auto out = make_tensor({batch, S, H * Dh});
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t s = 0; s < S; ++s) {
        const real* src = x->v.data() + ((b * H + h) * S + s) * Dh;
        real* dst = out->v.data() + (b * S + s) * (H * Dh) + h * Dh;
        std::copy(src, src + Dh, dst);
      }

  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, batch, H, S, Dh]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (int64_t b = 0; b < batch; ++b)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t s = 0; s < S; ++s) {
            const real* src = out->g.data() + (b * S + s) * (H * Dh) + h * Dh;
            real* dst = x->g.data() + ((b * H + h) * S + s) * Dh;
            for (int64_t i = 0; i < Dh; ++i) dst[i] += src[i];
          }
    });
  }
  return out;
}

TensorPtr concat_seq(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  check(a->rank() == 3 && b->rank() == 3 && a->dim(0) == b->dim(0) &&
            a->dim(2) == b->dim(2),
        ErrorCode::shape_mismatch,
        "concat_seq: " + a->shape_str() + " vs " + b->shape_str());
  const int64_t B = a->dim(0), S1 = a->dim(1), S2 = b->dim(1), D = a->dim(2);
  auto out = make_tensor({B, S1 + S2, D});
  for (int64_t i = 0; i < B; ++i) {
    std::copy(a->v.data() + i * S1 * D, a->v.data() + (i + 1) * S1 * D,
              out->v.data() + i * (S1 + S2) * D);
    std::copy(b->v.data() + i * S2 * D, b->v.data() + (i + 1) * S2 * D,
              out->v.data() + i * (S1 + S2) * D + S1 * D);
  }

  if (want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out, B, S1, S2, D]() {
      if (out->g.empty()) return;
      for (int64_t i = 0; i < B; ++i) {
        if (a->requires_grad) {
          a->ensure_grad();
          const real* src = out->g.data() + i * (S1 + S2) * D;
          real* dst = a->g.data() + i * S1 * D;
          for (int64_t k = 0; k < S1 * D; ++k) dst[k] += src[k];
        }
        if (b->requires_grad) {
          b->ensure_grad();
          const real* src = out->g.data() + i * (S1 + S2) * D + S1 * D;
          real* dst = b->g.data() + i * S2 * D;
          for (int64_t k = 0; k < S2 * D; ++k) dst[k] += src[k];
        }
      }
    });
  }
  return out;
}

TensorPtr slice_seq(Tape* tape, const TensorPtr& x, int64_t start, int64_t len) {
  check(x->rank() == 3, ErrorCode::shape_mismatch, "slice_seq: rank-3 input");
  const int64_t B = x->dim(0), S = x->dim(1), D = x->dim(2);
  check(start >= 0 && start + len <= S, ErrorCode::out_of_range,
        "slice_seq: window out of range");
  auto out = make_tensor({B, len, D});
  for (int64_t i = 0; i < B; ++i) {
    const real* src = x->v.data() + (i * S + start) * D;
    std::copy(src, src + len * D, out->v.data() + i * len * D);
  }

  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, B, S, D, start, len]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (int64_t i = 0; i < B; ++i) {
        const real* src = out->g.data() + i * len * D;
        real* dst = x->g.data() + (i * S + start) * D;
        for (int64_t k = 0; k < len * D; ++k) dst[k] += src[k];
      }
    });
  }
  return out;
}

TensorPtr reshape(Tape* tape, const TensorPtr& x, std::vector<int64_t> shape) {
  auto out = make_tensor(shape);
  check(out->numel() == x->numel(), ErrorCode::shape_mismatch,
        "reshape: element count mismatch");
  out->v = x->v;
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->g.size(); ++i) x->g[i] += out->g[i];
    });
  }
  return out;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  check(same_shape(*a, *b), ErrorCode::shape_mismatch,
        "add: " + a->shape_str() + " vs " + b->shape_str());
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] + b->v[i];
  if (want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out]() {
      if (out->g.empty()) return;
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < out->g.size(); ++i) a->g[i] += out->g[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < out->g.size(); ++i) b->g[i] += out->g[i];
      }
    });
  }
  return out;
}

TensorPtr add_seq_bias(Tape* tape, const TensorPtr& x, const TensorPtr& p) {
  check(x->rank() == 3 && p->rank() == 2 && x->dim(1) == p->dim(0) &&
            x->dim(2) == p->dim(1),
        ErrorCode::shape_mismatch,
        "add_seq_bias: " + x->shape_str() + " vs " + p->shape_str());
  const int64_t B = x->dim(0), SD = p->numel();
  auto out = make_tensor(x->shape);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < SD; ++k)
      out->v[b * SD + k] = x->v[b * SD + k] + p->v[k];

  if (want_grad(tape, {&x, &p})) {
    out->requires_grad = true;
    tape->record([x, p, out, B, SD]() {
      if (out->g.empty()) return;
      if (x->requires_grad) {
        x->ensure_grad();
        for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += out->g[i];
      }
      if (p->requires_grad) {
        p->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t k = 0; k < SD; ++k) p->g[k] += out->g[b * SD + k];
      }
    });
  }
  return out;
}

TensorPtr scale(Tape* tape, const TensorPtr& x, real c) {
  return affine(tape, x, c, 0.0);
}

TensorPtr affine(Tape* tape, const TensorPtr& x, real a, real b) {
  auto out = make_tensor(x->shape);
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a * x->v[i] + b;
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, a]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += a * out->g[i];
    });
  }
  return out;
}

TensorPtr mask_rows(Tape* tape, const TensorPtr& x,
                    const std::vector<real>& row_scale) {
  if (x->shape.empty())
    throw Error(ErrorCode::shape_mismatch, "mask_rows: scalar input");
  int64_t D = x->shape.back();
  int64_t R = x->numel() / D;
  if ((int64_t)row_scale.size() != R)
    throw Error(ErrorCode::shape_mismatch,
                "mask_rows: " + std::to_string(row_scale.size()) +
                    " scales for " + std::to_string(R) + " rows");
  auto out = make_tensor(x->shape);
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < D; ++c)
      out->v[r * D + c] = x->v[r * D + c] * row_scale[r];
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, row_scale, R, D]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < D; ++c)
          x->g[r * D + c] += out->g[r * D + c] * row_scale[r];
    });
  }
  return out;
}

TensorPtr gelu(Tape* tape, const TensorPtr& x) {
  auto out = make_tensor(x->shape);
  for (size_t i = 0; i < out->v.size(); ++i) {
    real v = x->v[i];
    out->v[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i) {
        real v = x->v[i];
        real cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        real pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        x->g[i] += out->g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

TensorPtr tanh_act(Tape* tape, const TensorPtr& x) {
  auto out = make_tensor(x->shape);
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = std::tanh(x->v[i]);
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i) {
        real y = out->v[i];
        x->g[i] += out->g[i] * (1.0 - y * y);
      }
    });
  }
  return out;
}

TensorPtr relu(Tape* tape, const TensorPtr& x) {
  auto out = make_tensor(x->shape);
  for (size_t i = 0; i < out->v.size(); ++i)
    out->v[i] = x->v[i] > 0.0 ? x->v[i] : 0.0;
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i)
        if (x->v[i] > 0.0) x->g[i] += out->g[i];
    });
  }
  return out;
}

TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, real eps) {
  const int64_t D = x->shape.back();
  check(gamma->numel() == D && beta->numel() == D, ErrorCode::shape_mismatch,
        "layer_norm: affine params vs feature dim");
  const int64_t rows = rows_of(*x, D);
  auto out = make_tensor(x->shape);
  // Cache per-row sigma and normalized values for the backward pass.
  auto xhat = std::make_shared<std::vector<real>>(x->v.size());
  auto inv_sigma = std::make_shared<std::vector<real>>(rows);

  for (int64_t r = 0; r < rows; ++r) {
    const real* xr = x->v.data() + r * D;
    real mu = 0.0;
    for (int64_t i = 0; i < D; ++i) mu += xr[i];
    mu /= static_cast<real>(D);
    real var = 0.0;
    for (int64_t i = 0; i < D; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<real>(D);
    real is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[r] = is;
    real* hr = xhat->data() + r * D;
    real* yr = out->v.data() + r * D;
    for (int64_t i = 0; i < D; ++i) {
      hr[i] = (xr[i] - mu) * is;
      yr[i] = hr[i] * gamma->v[i] + beta->v[i];
    }
  }

  if (want_grad(tape, {&x, &gamma, &beta})) {
    out->requires_grad = true;
    tape->record([x, gamma, beta, out, xhat, inv_sigma, rows, D]() {
      if (out->g.empty()) return;
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const real* dy = out->g.data() + r * D;
        const real* hr = xhat->data() + r * D;
        if (gamma->requires_grad)
          for (int64_t i = 0; i < D; ++i) gamma->g[i] += dy[i] * hr[i];
        if (beta->requires_grad)
          for (int64_t i = 0; i < D; ++i) beta->g[i] += dy[i];
        if (x->requires_grad) {
          real mean_dh = 0.0, mean_dhh = 0.0;
          for (int64_t i = 0; i < D; ++i) {
            real dh = dy[i] * gamma->v[i];
            mean_dh += dh;
            mean_dhh += dh * hr[i];
          }
          mean_dh /= static_cast<real>(D);
          mean_dhh /= static_cast<real>(D);
          real is = (*inv_sigma)[r];
          real* dx = x->g.data() + r * D;
          for (int64_t i = 0; i < D; ++i) {
            real dh = dy[i] * gamma->v[i];
            dx[i] += (dh - mean_dh - hr[i] * mean_dhh) * is;
          }
        }
      }
    });
  }
  return out;
}

TensorPtr softmax_rows(Tape* tape, const TensorPtr& x) {
  const int64_t D = x->shape.back();
  const int64_t rows = rows_of(*x, D);
  auto out = make_tensor(x->shape);
  for (int64_t r = 0; r < rows; ++r) {
    const real* xr = x->v.data() + r * D;
    real* yr = out->v.data() + r * D;
    real mx = xr[0];
    for (int64_t i = 1; i < D; ++i) mx = std::max(mx, xr[i]);
    real sum = 0.0;
    for (int64_t i = 0; i < D; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    real inv = 1.0 / sum;
    for (int64_t i = 0; i < D; ++i) yr[i] *= inv;
  }
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, rows, D]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const real* p = out->v.data() + r * D;
        const real* dy = out->g.data() + r * D;
        real dot = 0.0;
        for (int64_t i = 0; i < D; ++i) dot += dy[i] * p[i];
        real* dx = x->g.data() + r * D;
        for (int64_t i = 0; i < D; ++i) dx[i] += p[i] * (dy[i] - dot);
      }
    });
  }
  return out;
}

TensorPtr l2_normalize_rows(Tape* tape, const TensorPtr& x, real eps) {
  const int64_t D = x->shape.back();
  const int64_t rows = rows_of(*x, D);
  auto out = make_tensor(x->shape);
  auto inv_norm = std::make_shared<std::vector<real>>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const real* xr = x->v.data() + r * D;
    real n2 = 0.0;
    for (int64_t i = 0; i < D; ++i) n2 += xr[i] * xr[i];
    real inv = 1.0 / std::sqrt(n2 + eps);
    (*inv_norm)[r] = inv;
    real* yr = out->v.data() + r * D;
    for (int64_t i = 0; i < D; ++i) yr[i] = xr[i] * inv;
  }
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, inv_norm, rows, D]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const real* y = out->v.data() + r * D;
        const real* dy = out->g.data() + r * D;
        real dot = 0.0;
        for (int64_t i = 0; i < D; ++i) dot += dy[i] * y[i];
        real inv = (*inv_norm)[r];
        real* dx = x->g.data() + r * D;
        for (int64_t i = 0; i < D; ++i) dx[i] += (dy[i] - y[i] * dot) * inv;
      }
    });
  }
  return out;
}

TensorPtr embedding(Tape* tape, const TensorPtr& table,
                    const std::vector<int64_t>& ids,
                    std::vector<int64_t> prefix_shape) {
  check(table->rank() == 2, ErrorCode::shape_mismatch, "embedding: table rank");
  const int64_t V = table->dim(0), D = table->dim(1);
  int64_t n = 1;
  for (int64_t d : prefix_shape) n *= d;
  check(static_cast<int64_t>(ids.size()) == n, ErrorCode::shape_mismatch,
        "embedding: ids vs prefix shape");
  for (int64_t id : ids)
    check(id >= 0 && id < V, ErrorCode::out_of_range,
          "embedding: id " + std::to_string(id) + " outside [0, " +
              std::to_string(V) + ")");

  prefix_shape.push_back(D);
  auto out = make_tensor(prefix_shape);
  for (int64_t i = 0; i < n; ++i) {
    const real* src = table->v.data() + ids[i] * D;
    std::copy(src, src + D, out->v.data() + i * D);
  }
  if (want_grad(tape, {&table})) {
    out->requires_grad = true;
    auto ids_copy = std::make_shared<std::vector<int64_t>>(ids);
    tape->record([table, out, ids_copy, n, D]() {
      if (out->g.empty() || !table->requires_grad) return;
      table->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const real* src = out->g.data() + i * D;
        real* dst = table->g.data() + (*ids_copy)[i] * D;
        for (int64_t k = 0; k < D; ++k) dst[k] += src[k];
      }
    });
  }
  return out;
}

namespace {

// Shared index plan for patch <-> grid reshuffles: output element i of the
// patch layout corresponds to input element plan[i] of the image layout.
std::vector<int64_t> patch_plan(int64_t B, int64_t H, int64_t W, int P) {
  const int64_t gh = H / P, gw = W / P;
  std::vector<int64_t> plan(B * H * W * 3);
  int64_t o = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t gy = 0; gy < gh; ++gy)
      for (int64_t gx = 0; gx < gw; ++gx)
        for (int64_t py = 0; py < P; ++py)
          for (int64_t px = 0; px < P; ++px)
            for (int64_t c = 0; c < 3; ++c)
              plan[o++] = ((b * H + gy * P + py) * W + gx * P + px) * 3 + c;
  return plan;
}

}  // namespace

TensorPtr extract_patches(Tape* tape, const TensorPtr& images, int P) {
  check(images->rank() == 4 && images->dim(3) == 3, ErrorCode::shape_mismatch,
        "extract_patches: expected [B,H,W,3], got " + images->shape_str());
  const int64_t B = images->dim(0), H = images->dim(1), W = images->dim(2);
  check(P > 0 && H % P == 0 && W % P == 0, ErrorCode::shape_mismatch,
        "extract_patches: image dims not divisible by patch size " +
            std::to_string(P));
  const int64_t L = (H / P) * (W / P);
  auto out = make_tensor({B, L, static_cast<int64_t>(P) * P * 3});
  auto plan = std::make_shared<std::vector<int64_t>>(patch_plan(B, H, W, P));
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = images->v[(*plan)[i]];

  if (want_grad(tape, {&images})) {
    out->requires_grad = true;
    tape->record([images, out, plan]() {
      if (out->g.empty() || !images->requires_grad) return;
      images->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i)
        images->g[(*plan)[i]] += out->g[i];
    });
  }
  return out;
}

TensorPtr merge_patches(Tape* tape, const TensorPtr& x, int P, int64_t H,
                        int64_t W) {
  check(x->rank() == 3, ErrorCode::shape_mismatch, "merge_patches: rank-3 input");
  const int64_t B = x->dim(0);
  check(P > 0 && H % P == 0 && W % P == 0 &&
            x->dim(1) == (H / P) * (W / P) &&
            x->dim(2) == static_cast<int64_t>(P) * P * 3,
        ErrorCode::shape_mismatch,
        "merge_patches: " + x->shape_str() + " does not tile " +
            std::to_string(H) + "x" + std::to_string(W));
  auto out = make_tensor({B, H, W, 3});
  auto plan = std::make_shared<std::vector<int64_t>>(patch_plan(B, H, W, P));
  for (size_t i = 0; i < x->v.size(); ++i) out->v[(*plan)[i]] = x->v[i];

  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, plan]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->g.size(); ++i) x->g[i] += out->g[(*plan)[i]];
    });
  }
  return out;
}

TensorPtr mean_pool_seq(Tape* tape, const TensorPtr& x) {
  check(x->rank() == 3, ErrorCode::shape_mismatch, "mean_pool_seq: rank-3 input");
  const int64_t B = x->dim(0), S = x->dim(1), D = x->dim(2);
  auto out = make_tensor({B, D});
  const real inv = 1.0 / static_cast<real>(S);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t s = 0; s < S; ++s)
      for (int64_t i = 0; i < D; ++i)
        out->v[b * D + i] += x->v[(b * S + s) * D + i] * inv;
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, B, S, D, inv]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < S; ++s)
          for (int64_t i = 0; i < D; ++i)
            x->g[(b * S + s) * D + i] += out->g[b * D + i] * inv;
    });
  }
  return out;
}

TensorPtr mean_all(Tape* tape, const TensorPtr& x) {
  auto out = make_tensor({1});
  const real inv = 1.0 / static_cast<real>(x->numel());
  real acc = 0.0;
  for (real v : x->v) acc += v;
  out->v[0] = acc * inv;
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, inv]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      const real d = out->g[0] * inv;
      for (size_t i = 0; i < x->g.size(); ++i) x->g[i] += d;
    });
  }
  return out;
}

TensorPtr weighted_ce_sum(Tape* tape, const TensorPtr& logits,
                          const std::vector<int64_t>& targets,
                          const std::vector<real>& weights,
                          real label_smoothing) {
  const int64_t V = logits->shape.back();
  const int64_t rows = rows_of(*logits, V);
  check(static_cast<int64_t>(targets.size()) == rows &&
            static_cast<int64_t>(weights.size()) == rows,
        ErrorCode::shape_mismatch, "weighted_ce_sum: rows mismatch");
  check(label_smoothing >= 0.0 && label_smoothing < 1.0,
        ErrorCode::invalid_argument, "weighted_ce_sum: smoothing in [0, 1)");
  const real s = label_smoothing;

  auto out = make_tensor({1});
  real acc = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    if (weights[r] == 0.0) continue;
    const int64_t t = targets[r];
    check(t >= 0 && t < V, ErrorCode::out_of_range,
          "weighted_ce_sum: target outside vocabulary");
    const real* xr = logits->v.data() + r * V;
    real mx = xr[0];
    for (int64_t i = 1; i < V; ++i) mx = std::max(mx, xr[i]);
    real lse = 0.0, mean_x = 0.0;
    for (int64_t i = 0; i < V; ++i) {
      lse += std::exp(xr[i] - mx);
      mean_x += xr[i];
    }
    lse = std::log(lse) + mx;
    mean_x /= static_cast<real>(V);
    acc += weights[r] * (lse - (1.0 - s) * xr[t] - s * mean_x);
  }
  out->v[0] = acc;

  if (want_grad(tape, {&logits})) {
    out->requires_grad = true;
    auto tg = std::make_shared<std::vector<int64_t>>(targets);
    auto wt = std::make_shared<std::vector<real>>(weights);
    tape->record([logits, out, tg, wt, rows, V, s]() {
      if (out->g.empty() || !logits->requires_grad) return;
      logits->ensure_grad();
      const real d = out->g[0];
      for (int64_t r = 0; r < rows; ++r) {
        const real w = (*wt)[r];
        if (w == 0.0) continue;
        const real* xr = logits->v.data() + r * V;
        real* gr = logits->g.data() + r * V;
        real mx = xr[0];
        for (int64_t i = 1; i < V; ++i) mx = std::max(mx, xr[i]);
        real sum = 0.0;
        for (int64_t i = 0; i < V; ++i) sum += std::exp(xr[i] - mx);
        const real inv = 1.0 / sum;
        for (int64_t i = 0; i < V; ++i)
          gr[i] += d * w * (std::exp(xr[i] - mx) * inv - s / V);
        gr[(*tg)[r]] -= d * w * (1.0 - s);
      }
    });
  }
  return out;
}

TensorPtr mse(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  check(same_shape(*a, *b), ErrorCode::shape_mismatch,
        "mse: " + a->shape_str() + " vs " + b->shape_str());
  auto out = make_tensor({1});
  const real inv = 1.0 / static_cast<real>(a->numel());
  real acc = 0.0;
  for (size_t i = 0; i < a->v.size(); ++i) {
    real d = a->v[i] - b->v[i];
    acc += d * d;
  }
  out->v[0] = acc * inv;
  if (want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out, inv]() {
      if (out->g.empty()) return;
      const real d2 = 2.0 * out->g[0] * inv;
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < a->v.size(); ++i)
          a->g[i] += d2 * (a->v[i] - b->v[i]);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < b->v.size(); ++i)
          b->g[i] -= d2 * (a->v[i] - b->v[i]);
      }
    });
  }
  return out;
}

TensorPtr mean_sq_const(Tape* tape, const TensorPtr& x, real c) {
  auto out = make_tensor({1});
  const real inv = 1.0 / static_cast<real>(x->numel());
  real acc = 0.0;
  for (real v : x->v) acc += (v - c) * (v - c);
  out->v[0] = acc * inv;
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, c, inv]() {
      if (out->g.empty() || !x->requires_grad) return;
      x->ensure_grad();
      const real d2 = 2.0 * out->g[0] * inv;
      for (size_t i = 0; i < x->v.size(); ++i) x->g[i] += d2 * (x->v[i] - c);
    });
  }
  return out;
}

TensorPtr weighted_sum_scalars(
    Tape* tape, const std::vector<std::pair<real, TensorPtr>>& terms) {
  auto out = make_tensor({1});
  bool rg = false;
  for (const auto& [w, t] : terms) {
    check(t->numel() == 1, ErrorCode::shape_mismatch,
          "weighted_sum_scalars: term must be scalar");
    out->v[0] += w * t->v[0];
    rg = rg || t->requires_grad;
  }
  if (tape && rg) {
    out->requires_grad = true;
    auto copy = terms;
    tape->record([copy, out]() {
      if (out->g.empty()) return;
      for (const auto& [w, t] : copy) {
        if (!t->requires_grad) continue;
        t->ensure_grad();
        t->g[0] += w * out->g[0];
      }
    });
  }
  return out;
}

TensorPtr detach(const TensorPtr& x) {
  auto out = make_tensor(x->shape);
  out->v = x->v;
  return out;
}

TensorPtr straight_through(Tape* tape, const TensorPtr& ze,
                           const TensorPtr& quantized) {
  check(same_shape(*ze, *quantized), ErrorCode::shape_mismatch,
        "straight_through: " + ze->shape_str() + " vs " + quantized->shape_str());
  auto out = make_tensor(ze->shape);
  out->v = quantized->v;
  if (want_grad(tape, {&ze})) {
    out->requires_grad = true;
    tape->record([ze, out]() {
      if (out->g.empty() || !ze->requires_grad) return;
      ze->ensure_grad();
      for (size_t i = 0; i < out->g.size(); ++i) ze->g[i] += out->g[i];
    });
  }
  return out;
}

TensorPtr mixture_embedding_st(Tape* tape, const TensorPtr& probs,
                               const std::vector<int64_t>& ids,
                               const TensorPtr& table,
                               std::vector<int64_t> prefix_shape) {
  check(probs->rank() >= 1 && table->rank() == 2, ErrorCode::shape_mismatch,
        "mixture_embedding_st: probs/table ranks");
  const int64_t V = table->dim(0), D = table->dim(1);
  check(probs->shape.back() == V, ErrorCode::shape_mismatch,
        "mixture_embedding_st: probs width vs table rows");
  const int64_t R = probs->numel() / V;
  check(static_cast<int64_t>(ids.size()) == R, ErrorCode::shape_mismatch,
        "mixture_embedding_st: id count vs probs rows");
  int64_t n = 1;
  for (int64_t d : prefix_shape) n *= d;
  check(n == R, ErrorCode::shape_mismatch,
        "mixture_embedding_st: prefix shape vs rows");
  for (int64_t id : ids)
    check(id >= 0 && id < V, ErrorCode::out_of_range,
          "mixture_embedding_st: id outside table");

  prefix_shape.push_back(D);
  auto out = make_tensor(prefix_shape);
  for (int64_t r = 0; r < R; ++r) {
    const real* src = table->v.data() + ids[r] * D;
    std::copy(src, src + D, out->v.data() + r * D);
  }

  if (want_grad(tape, {&probs, &table})) {
    out->requires_grad = true;
    tape->record([probs, table, out, R, V, D]() {
      if (out->g.empty()) return;
      if (probs->requires_grad) {
        probs->ensure_grad();
        CMapM dY(out->g.data(), R, D);
        CMapM T(table->v.data(), V, D);
        MapM dP(probs->g.data(), R, V);
        dP.noalias() += dY * T.transpose();
      }
      if (table->requires_grad) {
        table->ensure_grad();
        CMapM dY(out->g.data(), R, D);
        CMapM P(probs->v.data(), R, V);
        MapM dT(table->g.data(), V, D);
        dT.noalias() += P.transpose() * dY;
      }
    });
  }
  return out;
}

}  // namespace sftok::nn
