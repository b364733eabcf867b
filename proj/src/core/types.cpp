#include "core/types.hpp"

namespace sftok {

TokenGrid make_token_grid(int64_t batch, int64_t length, int vocab) {
  check(batch >= 1 && length >= 1 && vocab >= 1, ErrorCode::invalid_argument,
        "token grid dims must be positive");
  TokenGrid g;
  g.batch = batch;
  g.length = length;
  g.vocab = vocab;
  g.ids.assign(batch * length, 0);
  return g;
}

void check_token_grid(const TokenGrid& g) {
  check(static_cast<int64_t>(g.ids.size()) == g.batch * g.length,
        ErrorCode::shape_mismatch, "token grid: id count vs dims");
  for (int32_t id : g.ids)
    check(id >= 0 && id < g.vocab, ErrorCode::out_of_range,
          "token grid: id outside vocabulary");
}

int64_t MaskState::resolved_count(int64_t b) const {
  int64_t n = 0;
  for (int64_t i = 0; i < length; ++i) n += resolved[b * length + i] ? 1 : 0;
  return n;
}

MaskState fully_masked(int64_t batch, int64_t length, int vocab) {
  check(batch >= 1 && length >= 1 && vocab >= 1, ErrorCode::invalid_argument,
        "mask state dims must be positive");
  MaskState s;
  s.batch = batch;
  s.length = length;
  s.vocab = vocab;
  s.step_index = 0;
  s.resolved.assign(batch * length, 0);
  s.tokens.assign(batch * length, 0);
  return s;
}

void commit_position(MaskState& state, int64_t b, int64_t i, int32_t token) {
  check(b >= 0 && b < state.batch && i >= 0 && i < state.length,
        ErrorCode::out_of_range, "commit: position outside state");
  check(!state.is_resolved(b, i), ErrorCode::state,
        "commit: position already resolved");
  check(token >= 0 && token < state.vocab, ErrorCode::out_of_range,
        "commit: token outside vocabulary");
  state.resolved[b * state.length + i] = 1;
  state.tokens[b * state.length + i] = token;
}

nn::TensorPtr image_batch_tensor(const std::vector<Image>& images) {
  check(!images.empty(), ErrorCode::invalid_argument, "empty image batch");
  const int h = images[0].h, w = images[0].w;
  auto t = nn::make_tensor(
      {static_cast<int64_t>(images.size()), h, w, 3});
  size_t o = 0;
  for (const auto& img : images) {
    check(img.h == h && img.w == w, ErrorCode::shape_mismatch,
          "image batch: mixed resolutions");
    std::copy(img.v.begin(), img.v.end(), t->v.begin() + o);
    o += img.v.size();
  }
  check_image_batch(*t);
  return t;
}

std::vector<Image> tensor_to_images(const nn::Tensor& t) {
  check(t.rank() == 4 && t.dim(3) == 3, ErrorCode::shape_mismatch,
        "expected [B,H,W,3], got " + t.shape_str());
  std::vector<Image> out;
  const int64_t per = t.dim(1) * t.dim(2) * 3;
  for (int64_t b = 0; b < t.dim(0); ++b) {
    Image img = make_image(static_cast<int>(t.dim(1)),
                           static_cast<int>(t.dim(2)));
    std::copy(t.v.begin() + b * per, t.v.begin() + (b + 1) * per,
              img.v.begin());
    out.push_back(std::move(img));
  }
  return out;
}

void check_image_batch(const nn::Tensor& t) {
  check(t.rank() == 4 && t.dim(3) == 3, ErrorCode::shape_mismatch,
        "image batch must be [B,H,W,3], got " + t.shape_str());
  for (double v : t.v)
    check(v >= -1.0 - 1e-9 && v <= 1.0 + 1e-9, ErrorCode::out_of_range,
          "image values must lie in [-1, 1]");
}

}  // namespace sftok
