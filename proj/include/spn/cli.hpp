// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Lives in the library so tests can drive it
// without spawning processes.

#ifndef SPN_CLI_HPP
#define SPN_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace spn {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumerical = 3,
};

/// `args` excludes the program name. Reports go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spn

#endif  // SPN_CLI_HPP
