#pragma once

#include <stdexcept>
#include <string>

namespace mvnet {

enum class ErrorCode {
  kInvalidInput,
  kInvalidDepth,
  kUndefinedRatio,
  kEmptyCloud,
  kInvalidGeometry,
  kDimension,
  kGridTooLarge,
  kShapeMismatch,
  kInvalidQuery,
  kUndefinedLoss,
  kNoPair,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kDegenerateProbe,
  kIo,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace mvnet
