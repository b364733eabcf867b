#include "util/rng.hpp"

#include <sstream>

#include "util/hash.hpp"

namespace sftok {

std::string Rng::serialize() const {
  std::ostringstream oss;
  oss << engine_;
  return oss.str();
}

void Rng::deserialize(const std::string& text) {
  std::istringstream iss(text);
  iss >> engine_;
  check(!iss.fail(), ErrorCode::io, "Rng::deserialize: malformed engine state");
}

Rng& RngPool::stream(const std::string& name) {
  auto it = streams_.find(name);
  if (it == streams_.end()) {
    uint64_t seed = master_seed_ ^ fnv1a64(name);
    it = streams_.emplace(name, Rng(seed)).first;
  }
  return it->second;
}

std::map<std::string, std::string> RngPool::serialize_all() const {
  std::map<std::string, std::string> out;
  for (const auto& [name, rng] : streams_) out[name] = rng.serialize();
  return out;
}

void RngPool::deserialize_all(const std::map<std::string, std::string>& states) {
  for (const auto& [name, state] : states) {
    stream(name).deserialize(state);
  }
}

}  // namespace sftok
