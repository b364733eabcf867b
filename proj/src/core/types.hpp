#pragma once

#include <cstdint>
#include <vector>

#include "nn/tensor.hpp"
#include "util/error.hpp"
#include "util/image.hpp"

namespace sftok {

// A batch of discrete token sequences with a shared vocabulary bound.
// Serves both teacher grids (length L2) and latent token rows (length K).
struct TokenGrid {
  int64_t batch = 0;
  int64_t length = 0;
  int vocab = 0;
  std::vector<int32_t> ids;  // batch * length, row-major

  int32_t at(int64_t b, int64_t i) const { return ids[b * length + i]; }
  int32_t& at(int64_t b, int64_t i) { return ids[b * length + i]; }
};

TokenGrid make_token_grid(int64_t batch, int64_t length, int vocab);
void check_token_grid(const TokenGrid& g);

// Per-position decode status over the teacher grid, batched.
struct MaskState {
  int64_t batch = 0;
  int64_t length = 0;  // L2
  int vocab = 0;
  int step_index = 0;
  std::vector<uint8_t> resolved;  // batch * length, 0 or 1
  std::vector<int32_t> tokens;    // valid only where resolved

  bool is_resolved(int64_t b, int64_t i) const {
    return resolved[b * length + i] != 0;
  }
  int32_t token(int64_t b, int64_t i) const { return tokens[b * length + i]; }
  int64_t resolved_count(int64_t b) const;
};

MaskState fully_masked(int64_t batch, int64_t length, int vocab);

// Marks one position resolved; refuses to overwrite a prior commitment.
void commit_position(MaskState& state, int64_t b, int64_t i, int32_t token);

// Images flow through the graph as [B,H,W,3] tensors in [-1,1].
nn::TensorPtr image_batch_tensor(const std::vector<Image>& images);
std::vector<Image> tensor_to_images(const nn::Tensor& t);
void check_image_batch(const nn::Tensor& t);

}  // namespace sftok
