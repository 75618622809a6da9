#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dnrf {

// Broken preconditions: shape mismatches, unsorted samples, stale tapes.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite losses or gradients.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataErrorCode {
  kMissingFile,
  kMalformed,
  kBadPose,
  kBadFrame,
  kVersionMismatch,
  kTruncated,
  kIo,
};

std::string_view to_string(DataErrorCode code);

// Anything wrong with a dataset directory, an image, or a checkpoint file.
class DataError : public std::runtime_error {
 public:
  DataError(DataErrorCode code, const std::string& message);

  DataErrorCode code() const noexcept { return code_; }

 private:
  DataErrorCode code_;
};

}  // namespace dnrf
