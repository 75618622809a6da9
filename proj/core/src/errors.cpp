#include "dnrf/errors.hpp"

namespace dnrf {

std::string_view to_string(DataErrorCode code) {
  switch (code) {
    case DataErrorCode::kMissingFile: return "missing-file";
    case DataErrorCode::kMalformed: return "malformed";
    case DataErrorCode::kBadPose: return "bad-pose";
    case DataErrorCode::kBadFrame: return "bad-frame";
    case DataErrorCode::kVersionMismatch: return "version-mismatch";
    case DataErrorCode::kTruncated: return "truncated";
    case DataErrorCode::kIo: return "io";
  }
  return "unknown";
}

DataError::DataError(DataErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace dnrf
