#include "nn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace sftok::nn {

bool Tensor::finite() const {
  for (real x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream oss;
  oss << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ", ";
    oss << shape[i];
  }
  oss << "]";
  return oss.str();
}

TensorPtr make_tensor(std::vector<int64_t> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
  return t;
}

TensorPtr randn_tensor(std::vector<int64_t> shape, real stddev, Rng& rng,
                       bool requires_grad) {
  auto t = make_tensor(std::move(shape), requires_grad);
  for (real& x : t->v) x = rng.normal(0.0, stddev);
  return t;
}

TensorPtr zeros_tensor(std::vector<int64_t> shape, bool requires_grad) {
  return make_tensor(std::move(shape), requires_grad);
}

TensorPtr full_tensor(std::vector<int64_t> shape, real value, bool requires_grad) {
  auto t = make_tensor(std::move(shape), requires_grad);
  std::fill(t->v.begin(), t->v.end(), value);
  return t;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace sftok::nn
