#pragma once

#include <stdexcept>
#include <string>

namespace cactus {

// Mirrors cactus_status in the C API (values must stay in sync).
enum class ErrorCode {
  InvalidArgument = 1,
  Io = 2,
  Format = 3,
  Checksum = 4,
  Version = 5,
  State = 6,
  Internal = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::InvalidArgument, message);
}

}  // namespace cactus
