#pragma once

#include <stdexcept>
#include <string>

namespace dexforge {

// Numeric values are shared with the C API status codes (dexforge.h).
enum class ErrorCode : int {
  kOk = 0,
  kParse = 1,
  kValidation = 2,
  kDimensionMismatch = 3,
  kSingularUpdate = 4,
  kInvalidRotation = 5,
  kDegenerateInput = 6,
  kMissingProvenance = 7,
  kNoGeometry = 8,
  kShapeMismatch = 9,
  kNonFiniteState = 10,
  kCorruptShard = 11,
  kVersionMismatch = 12,
  kInvalidRate = 13,
  kInsufficientData = 14,
  kIo = 15,
  kNotFound = 16,
  kInvalidArgument = 17,
  kConflict = 18,
  kInternal = 99,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dexforge
