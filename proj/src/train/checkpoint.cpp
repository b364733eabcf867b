#include "train/checkpoint.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "util/binio.hpp"

namespace sftok {

namespace {

constexpr char kMagic[] = "SFTKCKP1\n";
constexpr size_t kMagicLen = 9;

Json meta_to_json(const CheckpointMeta& m, const std::vector<BlockRef>& blocks,
                  const Codebook* cb) {
  Json j;
  j["kind"] = m.kind;
  j["stage"] = m.stage;
  j["step"] = m.step;
  j["config_hash"] = m.config_hash;
  j["config"] = m.config;
  j["rng"] = m.rng;
  j["extra"] = m.extra;
  j["blocks"] = Json::array();
  for (const auto& b : blocks)
    j["blocks"].push_back({{"name", b.name}, {"size", b.data->size()}});
  if (cb) {
    j["codebook"] = {{"n", cb->size()},
                     {"d", cb->dim()},
                     {"l2_normalized", cb->l2_normalized}};
  } else {
    j["codebook"] = nullptr;
  }
  return j;
}

CheckpointMeta meta_from_json(const Json& j, const std::string& path) {
  CheckpointMeta m;
  try {
    m.kind = j.at("kind").get<std::string>();
    m.stage = j.at("stage").get<int>();
    m.step = j.at("step").get<int64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config");
    m.rng = j.at("rng").get<std::map<std::string, std::string>>();
    m.extra = j.at("extra");
  } catch (const Json::exception& e) {
    fail(ErrorCode::io, "corrupt checkpoint header in " + path + ": " + e.what());
  }
  return m;
}

Json read_header(std::istream& in, const std::string& path) {
  std::string magic = read_bytes(in, kMagicLen);
  check(magic == kMagic, ErrorCode::io, path + " is not a checkpoint");
  int64_t len = read_i64(in);
  check(len > 0 && len < (int64_t(1) << 31), ErrorCode::io,
        "implausible checkpoint header length");
  std::string text = read_bytes(in, size_t(len));
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::io, "corrupt checkpoint header in " + path + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<BlockRef>& blocks,
                     const Codebook* codebook) {
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);

  // Write to a sibling temp file then rename, so an interrupted save never
  // clobbers the previous snapshot.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    check(out.good(), ErrorCode::io, "cannot write " + tmp);

    const std::string header = meta_to_json(meta, blocks, codebook).dump();
    write_bytes(out, std::string(kMagic, kMagicLen));
    write_i64(out, int64_t(header.size()));
    write_bytes(out, header);
    for (const auto& b : blocks) write_f64_block(out, *b.data);
    if (codebook) {
      const auto& v = codebook->vectors->v;
      std::vector<float> f(v.size());
      for (size_t i = 0; i < v.size(); ++i) f[i] = float(v[i]);
      write_f32_block(out, f);
    }
    check(out.good(), ErrorCode::io, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointMeta load_checkpoint(const std::string& path,
                               std::vector<BlockRef>& blocks,
                               const Codebook* codebook) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCode::io, "cannot open checkpoint " + path);
  Json j = read_header(in, path);
  CheckpointMeta meta = meta_from_json(j, path);

  const Json& jb = j.at("blocks");
  check(jb.size() == blocks.size(), ErrorCode::state,
        path + " holds " + std::to_string(jb.size()) + " blocks, expected " +
            std::to_string(blocks.size()));
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string name = jb[i].at("name").get<std::string>();
    const size_t size = jb[i].at("size").get<size_t>();
    check(name == blocks[i].name, ErrorCode::state,
          "checkpoint block order mismatch: file has '" + name +
              "' where '" + blocks[i].name + "' was expected");
    check(size == blocks[i].data->size(), ErrorCode::state,
          "checkpoint block '" + name + "' holds " + std::to_string(size) +
              " values, expected " + std::to_string(blocks[i].data->size()));
    *blocks[i].data = read_f64_block(in, size);
  }

  const Json& jcb = j.at("codebook");
  if (codebook) {
    check(!jcb.is_null(), ErrorCode::state,
          path + " carries no code table but one was expected");
    const int64_t n = jcb.at("n").get<int64_t>();
    const int64_t d = jcb.at("d").get<int64_t>();
    check(n == codebook->size() && d == codebook->dim(), ErrorCode::state,
          "code table is " + std::to_string(n) + "x" + std::to_string(d) +
              ", expected " + std::to_string(codebook->size()) + "x" +
              std::to_string(codebook->dim()));
    check(jcb.at("l2_normalized").get<bool>() == codebook->l2_normalized,
          ErrorCode::state, "code table normalization flag mismatch");
    auto f = read_f32_block(in, size_t(n * d));
    const auto& v = codebook->vectors->v;
    for (size_t i = 0; i < f.size(); ++i)
      check(std::abs(double(f[i]) - v[i]) <= 1e-6, ErrorCode::io,
            "float32 code table disagrees with the parameter block");
  } else {
    check(jcb.is_null(), ErrorCode::state,
          path + " carries a code table but none was expected");
  }
  return meta;
}

CheckpointMeta load_checkpoint_subset(const std::string& path,
                                      std::vector<BlockRef>& blocks) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCode::io, "cannot open checkpoint " + path);
  Json j = read_header(in, path);
  CheckpointMeta meta = meta_from_json(j, path);

  std::map<std::string, BlockRef*> wanted;
  for (auto& b : blocks) wanted[b.name] = &b;
  for (const auto& entry : j.at("blocks")) {
    const std::string name = entry.at("name").get<std::string>();
    const size_t size = entry.at("size").get<size_t>();
    auto it = wanted.find(name);
    if (it == wanted.end()) {
      in.seekg(std::streamoff(size * sizeof(double)), std::ios::cur);
      continue;
    }
    check(size == it->second->data->size(), ErrorCode::state,
          "checkpoint block '" + name + "' holds " + std::to_string(size) +
              " values, expected " +
              std::to_string(it->second->data->size()));
    *it->second->data = read_f64_block(in, size);
    wanted.erase(it);
  }
  if (!wanted.empty())
    fail(ErrorCode::state,
         path + " lacks block '" + wanted.begin()->first + "'");
  return meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCode::io, "cannot open checkpoint " + path);
  return meta_from_json(read_header(in, path), path);
}

}  // namespace sftok
