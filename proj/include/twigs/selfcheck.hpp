#pragma once

// Embedded numerical checks run by `twigs selfcheck`.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace twigs {

struct CheckResult {
  std::string name;
  double value = 0.0;      // measured error
  double tolerance = 0.0;  // pass iff value < tolerance
  bool pass = false;
};

struct SelfcheckOptions {
  double tolerance_scale = 1.0;  // multiplies every tolerance; 0 forces failure
  std::uint64_t seed = 0;
};

// Runs every check, printing one line per check to log when given.
std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opts, std::ostream* log = nullptr);

}  // namespace twigs
