#pragma once

#include <map>
#include <string>
#include <vector>

#include "nn/tensor.hpp"
#include "util/json_io.hpp"
#include "vq/quantizer.hpp"

namespace sftok {

// Single-archive training snapshot: a JSON header (identity, resolved config,
// rng states, kind-specific extras) followed by named float64 blocks holding
// parameters, optimizer moments, and EMA shadows, and - when the model carries
// one - the code table repeated as a float32 block with its own small header.
// The float64 blocks are authoritative; the float32 copy is an interchange
// view verified on load.
struct CheckpointMeta {
  std::string kind;  // "model" | "teacher" | "classifier" | "generator"
  int stage = 0;
  int64_t step = 0;
  std::string config_hash;
  Json config = Json::object();
  std::map<std::string, std::string> rng;
  Json extra = Json::object();
};

struct BlockRef {
  std::string name;
  std::vector<nn::real>* data;
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<BlockRef>& blocks,
                     const Codebook* codebook);

// Fills every referenced block in place. The file must carry exactly the
// referenced names with matching sizes; the codebook argument must match the
// file's presence or absence of a code-table section.
CheckpointMeta load_checkpoint(const std::string& path,
                               std::vector<BlockRef>& blocks,
                               const Codebook* codebook);

// Fills only the referenced blocks, skipping everything else in the archive.
// Every referenced name must be present with a matching size; the float32
// code-table tail is ignored.
CheckpointMeta load_checkpoint_subset(const std::string& path,
                                      std::vector<BlockRef>& blocks);

// Header only, for inspection and compatibility probes.
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace sftok
