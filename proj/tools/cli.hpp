#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mtcmtm::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericFailure = 3,
  kTestFailure = 4,
};

/// Runs one command line (args[0] is the program name) and returns its exit
/// code. Output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mtcmtm::cli
