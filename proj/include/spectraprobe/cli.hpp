#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace spectraprobe {

/// Runs the command-line interface. `args` excludes the program name.
/// Returns the exit code: 0 success, 1 data violation or degenerate
/// analysis, 2 usage or I/O error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spectraprobe
