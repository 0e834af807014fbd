#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ratspn::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kDataError = 3,
  kNumericError = 4,
};

/// Bad flag values or conflicting options, detected before any work.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Entry point behind main(). `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ratspn::cli
