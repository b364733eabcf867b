#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "nn/autodiff.hpp"

namespace sftok::testing {

using nn::real;
using nn::Tape;
using nn::TensorPtr;

// Central finite-difference check of d(loss)/d(input) for every element of
// every input tensor. `fn` must rebuild the graph from scratch on each call.
inline void gradcheck(
    const std::vector<TensorPtr>& inputs,
    const std::function<TensorPtr(Tape*)>& fn, real h = 1e-5,
    real rel_tol = 1e-5, real abs_tol = 1e-7) {
  for (auto& in : inputs) in->requires_grad = true;

  Tape tape;
  auto loss = fn(&tape);
  REQUIRE(loss->numel() == 1);
  for (auto& in : inputs) in->zero_grad();
  tape.backward(loss);

  for (auto& in : inputs) {
    in->ensure_grad();
    for (size_t i = 0; i < in->v.size(); ++i) {
      const real keep = in->v[i];
      in->v[i] = keep + h;
      const real lp = fn(nullptr)->v[0];
      in->v[i] = keep - h;
      const real lm = fn(nullptr)->v[0];
      in->v[i] = keep;
      const real fd = (lp - lm) / (2.0 * h);
      const real got = in->g[i];
      const real err = std::abs(fd - got);
      const real tol = abs_tol + rel_tol * std::max(std::abs(fd), std::abs(got));
      CAPTURE(i);
      CAPTURE(fd);
      CAPTURE(got);
      CHECK(err <= tol);
    }
  }
}

}  // namespace sftok::testing
