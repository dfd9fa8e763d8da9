#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lorafed {

enum class ErrorCode {
  kShape,
  kInvalidArgument,
  kNumeric,
  kCongruence,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kDimOverflow,
  kIo,
  kConfig,
  kClientFailure,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShape: return "shape_error";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNumeric: return "numeric_error";
    case ErrorCode::kCongruence: return "congruence_error";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kDimOverflow: return "dim_overflow";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kConfig: return "config_error";
    case ErrorCode::kClientFailure: return "client_failure";
  }
  return "unknown";
}

// Every failure raised by the library carries a stable machine-readable code.
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

}  // namespace lorafed
