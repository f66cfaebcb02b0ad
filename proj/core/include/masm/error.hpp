#pragma once

#include <stdexcept>
#include <string>

namespace masm {

// Error categories double as the machine-readable code the CLI prints.
enum class ErrorCode {
  kInvalidArgument,
  kNonFinite,
  kNoConvergence,
  kShapeMismatch,
  kRankPolicy,
  kIo,
  kConfig,
  kUnreachable,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace masm
