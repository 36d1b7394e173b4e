#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowsim {

enum class ErrorCode {
  kMissingFile,
  kUndecodableImage,
  kInvalidDimensions,
  kBadMagic,
  kTruncatedFile,
  kIoFailure,
  kInvalidFlow,
  kDegenerateWarp,
  kEmptyMask,
  kBackendTimeout,
  kIncompleteSequence,
  kDimensionMismatch,
  kBadResult,
  kDuplicatePairId,
  kEmptyDirectory,
  kMissingMask,
  kShapeMismatch,
  kEmptySource,
  kEmptyGroundTruth,
  kMissingPrediction,
  kInvalidConfig,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the toolkit carries one of the codes above so that
/// callers (and the CLI diagnostics) can branch on the kind of failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace flowsim
