#include "twigs/adam.hpp"

#include <cmath>

namespace twigs {

AdamState::AdamState(AdamConfig cfg, const std::vector<Tensor>& params) : config(cfg) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Tensor& p : params) {
    m.push_back(Mat::Zero(p.rows(), p.cols()));
    v.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.m.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but state tracks " +
                        std::to_string(state.m.size()));
  }
  bool any = false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i];
    if (!p.has_grad()) continue;
    any = true;
    if (p.rows() != state.m[i].rows() || p.cols() != state.m[i].cols()) {
      throw DimensionError("adam_step: parameter '" + p.name() + "' is " + shape_string(p.value()) +
                           " but its moments are " + shape_string(state.m[i]));
    }
  }
  if (!any && !params.empty()) throw ContractError("adam_step: no parameter has a gradient");
  ++state.step;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;  // did not take part in this loss; moments stay as they are
    const Mat& g = p.grad();
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        c.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + c.eps);
    p.clear_grad();
  }
}

void zero_grad(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace twigs
