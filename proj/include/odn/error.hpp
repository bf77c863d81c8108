#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace odn {

enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kOutOfRange,
  kUninitializedBuffer,
  kMissingGradient,
  kNonScalarLoss,
  kDivergence,
  kEmptyDataset,
  kIo,
  kBadMagic,
  kTruncated,
  kCountMismatch,
  kVersionMismatch,
  kNameCollision,
  kLengthMismatch,
  kConfig,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-checkable code in
/// addition to the human-readable message.
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

}  // namespace odn
