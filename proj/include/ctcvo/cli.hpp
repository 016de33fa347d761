#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctcvo {

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Entry point of the `vo` tool. `args` excludes the program name.
/// Errors are reported on `err` and mapped to exit codes; nothing throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctcvo
