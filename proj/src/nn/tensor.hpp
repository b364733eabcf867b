#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "util/error.hpp"
#include "util/rng.hpp"

namespace sftok::nn {

using real = double;

// Dense row-major tensor with an optional gradient buffer. Rank up to 4.
// All training-time numerics run in double; checkpoints keep full precision
// so resume is bit-exact.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<real> v;
  std::vector<real> g;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s, bool rg = false)
      : shape(std::move(s)), requires_grad(rg) {
    v.assign(static_cast<size_t>(numel()), 0.0);
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
  void zero_grad() {
    if (!g.empty()) std::fill(g.begin(), g.end(), 0.0);
  }

  bool finite() const;
  std::string shape_str() const;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int64_t> shape, bool requires_grad = false);

// Leaf parameter initializers.
TensorPtr randn_tensor(std::vector<int64_t> shape, real stddev, Rng& rng,
                       bool requires_grad = true);
TensorPtr zeros_tensor(std::vector<int64_t> shape, bool requires_grad = true);
TensorPtr full_tensor(std::vector<int64_t> shape, real value,
                      bool requires_grad = true);

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace sftok::nn
