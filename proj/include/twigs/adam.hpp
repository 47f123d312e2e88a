#pragma once

#include <vector>

#include "twigs/tensor.hpp"

namespace twigs {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates for a fixed, ordered parameter list.
struct AdamState {
  AdamConfig config;
  std::vector<Mat> m;
  std::vector<Mat> v;
  long step = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, const std::vector<Tensor>& params);
};

// Bias-corrected Adam update; clears every parameter's grad afterwards. Parameters
// without a gradient (unused by this loss) are left untouched.
void adam_step(std::vector<Tensor>& params, AdamState& state);

void zero_grad(std::vector<Tensor>& params);

}  // namespace twigs
