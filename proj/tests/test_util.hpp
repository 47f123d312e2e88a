#pragma once

#include "twigs/verify.hpp"

namespace twigs::testing {
using verify::max_rel_error;
using verify::numeric_grad;
}  // namespace twigs::testing
