#include "util/json_io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace sftok {

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), ErrorCode::io, "cannot open " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::io, "malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

void save_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  check(out.good(), ErrorCode::io, "cannot write " + path);
  out << j.dump(2) << "\n";
  check(out.good(), ErrorCode::io, "write failed for " + path);
}

std::string canonical_dump(const Json& j) { return j.dump(); }

std::string hash_hex(uint64_t h) {
  std::ostringstream oss;
  oss << std::hex << std::setw(16) << std::setfill('0') << h;
  return oss.str();
}

}  // namespace sftok
