#pragma once

#include <cstdint>
#include <string>

namespace sftok {

// FNV-1a over bytes. Used for rng stream seeds and config fingerprints.
inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace sftok
