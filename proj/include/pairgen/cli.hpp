#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pairgen {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs one command. `args` excludes the program name. Machine-readable
// records go to `out` as JSON lines; failures print one line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pairgen
