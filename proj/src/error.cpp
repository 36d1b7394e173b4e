#include "flowsim/error.hpp"

namespace flowsim {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kUndecodableImage: return "UndecodableImage";
    case ErrorCode::kInvalidDimensions: return "InvalidDimensions";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kInvalidFlow: return "InvalidFlow";
    case ErrorCode::kDegenerateWarp: return "DegenerateWarp";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kBackendTimeout: return "BackendTimeout";
    case ErrorCode::kIncompleteSequence: return "IncompleteSequence";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kBadResult: return "BadResult";
    case ErrorCode::kDuplicatePairId: return "DuplicatePairId";
    case ErrorCode::kEmptyDirectory: return "EmptyDirectory";
    case ErrorCode::kMissingMask: return "MissingMask";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEmptySource: return "EmptySource";
    case ErrorCode::kEmptyGroundTruth: return "EmptyGroundTruth";
    case ErrorCode::kMissingPrediction: return "MissingPrediction";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace flowsim
