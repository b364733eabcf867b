#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "util/error.hpp"

namespace sftok {

// Deterministic random stream. Thin wrapper over mt19937_64 whose state can be
// serialized into checkpoints, plus stateless draw helpers (the standard
// distribution objects keep hidden state that would break bit-exact resume).
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1). 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n). Rejection-free modulo is fine at our scales.
  int64_t uniform_int(int64_t n) {
    check(n > 0, ErrorCode::invalid_argument, "uniform_int: n must be positive");
    return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
  }

  // Box-Muller from two fresh uniforms; no cached state.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Standard Gumbel(0,1) draw.
  double gumbel() {
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    return -std::log(-std::log(u));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Fisher-Yates over indices [0, n).
  std::vector<int> permutation(int n) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = static_cast<int>(uniform_int(i + 1));
      std::swap(idx[i], idx[j]);
    }
    return idx;
  }

  // Inverse-CDF draw from unnormalized nonnegative weights.
  int sample_discrete(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    check(total > 0.0, ErrorCode::numeric, "sample_discrete: zero total mass");
    double u = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  std::string serialize() const;
  void deserialize(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

// Named random streams for one run (data order, masking, sampling, init, ...).
// Derivation from the master seed is stable across runs and platforms.
class RngPool {
 public:
  RngPool() : master_seed_(0) {}
  explicit RngPool(uint64_t master_seed) : master_seed_(master_seed) {}

  Rng& stream(const std::string& name);
  uint64_t master_seed() const { return master_seed_; }

  std::map<std::string, std::string> serialize_all() const;
  void deserialize_all(const std::map<std::string, std::string>& states);

 private:
  uint64_t master_seed_;
  std::map<std::string, Rng> streams_;
};

}  // namespace sftok
