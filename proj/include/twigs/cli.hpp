#pragma once

// The `twigs` command line: gen-data, train, sample, eval, selfcheck.
// Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or invalid configuration.

#include <ostream>

namespace twigs {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace twigs
