#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bfl::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2 };

/// Runs the bflsim command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bfl::cli
