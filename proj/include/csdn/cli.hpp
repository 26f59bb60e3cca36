#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace csdn {

/// Process exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Runs one command line (args[0] is the program name). Errors are
/// reported on `err` as a single line starting with "error:".
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace csdn
