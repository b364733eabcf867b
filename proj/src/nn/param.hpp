#pragma once

#include <map>
#include <string>
#include <vector>

#include "nn/tensor.hpp"
#include "util/error.hpp"
#include "util/rng.hpp"

namespace sftok::nn {

// Ordered registry of named trainable tensors. Names are stable across runs
// and used as checkpoint keys; registration order defines optimizer slot order.
class ParamRegistry {
 public:
  TensorPtr add(const std::string& name, TensorPtr t) {
    check(index_.find(name) == index_.end(), ErrorCode::state,
          "parameter registered twice: " + name);
    t->requires_grad = true;
    index_[name] = names_.size();
    names_.push_back(name);
    params_.push_back(t);
    return t;
  }

  TensorPtr randn(const std::string& name, std::vector<int64_t> shape,
                  real stddev, Rng& rng) {
    return add(name, randn_tensor(std::move(shape), stddev, rng));
  }

  TensorPtr zeros(const std::string& name, std::vector<int64_t> shape) {
    return add(name, zeros_tensor(std::move(shape)));
  }

  TensorPtr full(const std::string& name, std::vector<int64_t> shape, real v) {
    return add(name, full_tensor(std::move(shape), v));
  }

  TensorPtr get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), ErrorCode::state, "unknown parameter: " + name);
    return params_[it->second];
  }

  bool has(const std::string& name) const {
    return index_.find(name) != index_.end();
  }

  size_t size() const { return params_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<TensorPtr>& tensors() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  int64_t num_values() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<TensorPtr> params_;
  std::map<std::string, size_t> index_;
};

}  // namespace sftok::nn
