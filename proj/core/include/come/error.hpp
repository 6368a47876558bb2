#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace come {

enum class ErrorCode {
  kDimensionMismatch,
  kNotPositiveDefinite,
  kNonFinite,
  kOutOfRange,
  kSubjectNotFound,
  kInvalidConfig,
  kInvalidData,
  kEmptyInput,
  kDivergence,
  kIo,
};

std::string_view error_code_name(ErrorCode code);

// Every failure surfaced by the library carries a machine-readable code so the
// CLI can map it onto exit codes and error JSON.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace come
