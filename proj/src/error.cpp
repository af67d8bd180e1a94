#include "mvnet/error.hpp"

namespace mvnet {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kInvalidDepth: return "invalid depth";
    case ErrorCode::kUndefinedRatio: return "undefined ratio";
    case ErrorCode::kEmptyCloud: return "empty cloud";
    case ErrorCode::kInvalidGeometry: return "invalid geometry";
    case ErrorCode::kDimension: return "dimension error";
    case ErrorCode::kGridTooLarge: return "grid too large";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kInvalidQuery: return "invalid query";
    case ErrorCode::kUndefinedLoss: return "undefined loss";
    case ErrorCode::kNoPair: return "no pair";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kDegenerateProbe: return "degenerate probe";
    case ErrorCode::kIo: return "io error";
  }
  return "unknown error";
}

}  // namespace mvnet
