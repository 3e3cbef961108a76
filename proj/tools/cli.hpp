#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mirg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs `mirg` with argv-style arguments (without the program name). Machine
// output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mirg::cli
