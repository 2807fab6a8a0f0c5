#pragma once

#include <string>
#include <vector>

namespace rlvr {

// Exit codes shared by every subcommand:
//   0 success, 2 usage, 3 missing input, 4 integrity failure, 5 numeric failure.
enum ExitCode {
  kExitOk = 0,
  kExitUsage = 2,
  kExitMissingInput = 3,
  kExitIntegrity = 4,
  kExitNumeric = 5,
};

int run_cli(const std::vector<std::string>& args);

}  // namespace rlvr
