#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ddae {

// Exit statuses besides 0 (success).
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitPartialFailure = 3;  // harmonization finished with per-image failures

// Runs the command line `args` (without the program name). Errors are reported as one line on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ddae
