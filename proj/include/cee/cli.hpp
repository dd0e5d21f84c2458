#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cee {

// Exit codes of the `cee` tool. 1 is reserved for I/O and unexpected
// failures.
enum ExitCode : int {
    kExitOk = 0,
    kExitInternal = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumerical = 4,
};

inline constexpr const char* kToolVersion = "0.1.0";

// Entry point of the `cee` command line (estimate / simulate / report).
// Human-readable output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cee
