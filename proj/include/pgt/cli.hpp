#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pgt {

enum ExitCode : int { exit_ok = 0, exit_verify_failed = 1, exit_usage = 2, exit_numeric = 3 };

/// Entry point of the `pgt` tool; argv[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pgt
