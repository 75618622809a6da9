#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dnrf::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

// `args` excludes the program name. Machine output goes to `out`, the resolved
// config and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dnrf::cli
