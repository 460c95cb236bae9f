#pragma once

#include <stdexcept>
#include <string>

namespace loclin {

enum class ErrorCode {
  usage,
  config,
  invalid_token,
  shape,
  numeric,
  stale_frozen_state,
  resource,
  unsupported_input,
  undefined_result,
  io,
  format,
  checksum,
};

const char* to_string(ErrorCode code);

/// Every failure inside the core library is reported as an Error. The code
/// decides how the C boundary and the CLI classify it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace loclin
