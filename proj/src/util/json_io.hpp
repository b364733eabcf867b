#pragma once

#include <string>

#include "json.hpp"
#include "util/error.hpp"
#include "util/hash.hpp"

namespace sftok {

using Json = nlohmann::json;

Json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const Json& j);

// Keys sorted, round-trip float formatting; stable across runs, so its
// FNV-1a hash serves as the config fingerprint embedded in every artifact.
std::string canonical_dump(const Json& j);

std::string hash_hex(uint64_t h);

}  // namespace sftok
