#pragma once

#include <stdexcept>
#include <string>

namespace sftok {

// Error codes shared between the C++ core and the C API surface.
enum class ErrorCode : int {
  ok = 0,
  invalid_argument = 1,
  shape_mismatch = 2,
  out_of_range = 3,
  config = 4,
  io = 5,
  numeric = 6,
  state = 7,
  unsupported = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void check(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) fail(code, message);
}

}  // namespace sftok
