#pragma once

// Variance-preserving SDE: dy = -1/2 beta(t) y dt + sqrt(beta(t)) dw with linear beta.
// Shared by the structure variable and every property variable.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "twigs/errors.hpp"
#include "twigs/rng.hpp"
#include "twigs/tensor.hpp"

namespace twigs {

template <typename Scalar>
struct PerturbParams {
  Scalar alpha;  // mean scale exp(-B(t)/2)
  Scalar sigma;  // std sqrt(1 - alpha^2)
};

template <typename Scalar>
struct VpSchedule {
  Scalar beta_min = Scalar(0.1);
  Scalar beta_max = Scalar(20);
  Scalar t_eps = Scalar(1e-3);

  void validate() const {
    if (!(beta_min >= 0 && beta_max >= beta_min)) throw ContractError("VpSchedule: need 0 <= beta_min <= beta_max");
    if (!(t_eps > 0 && t_eps < 1)) throw ContractError("VpSchedule: t_eps must lie in (0,1)");
  }

  static void check_time(Scalar t, const char* op) {
    if (!(t >= 0 && t <= 1)) throw DomainError(std::string(op) + ": t = " + std::to_string(double(t)) + " outside [0,1]");
  }

  Scalar beta(Scalar t) const {
    check_time(t, "beta");
    return beta_min + t * (beta_max - beta_min);
  }

  // B(t) = int_0^t beta(s) ds
  Scalar integrated_beta(Scalar t) const {
    check_time(t, "integrated_beta");
    return beta_min * t + Scalar(0.5) * (beta_max - beta_min) * t * t;
  }

  Scalar diffusion(Scalar t) const {
    check_time(t, "diffusion");
    return std::sqrt(beta(t));
  }

  PerturbParams<Scalar> marginal(Scalar t) const {
    check_time(t, "marginal");
    const Scalar b = integrated_beta(t);
    // -expm1(-B) keeps sigma accurate for tiny B.
    return {std::exp(Scalar(-0.5) * b), std::sqrt(-std::expm1(-b))};
  }

  template <typename Derived>
  auto drift(const Eigen::MatrixBase<Derived>& y, Scalar t) const {
    return (Scalar(-0.5) * beta(t)) * y;
  }
};

using Schedule = VpSchedule<double>;

// Perturbed sample and its denoising score matching target grad log N(yt; alpha y0, sigma^2 I).
struct Perturbed {
  Mat yt;
  Mat target;
};

template <typename Derived1, typename Derived2>
Perturbed perturb(const Schedule& sched, const Eigen::MatrixBase<Derived1>& y0, double t,
                  const Eigen::MatrixBase<Derived2>& eps) {
  if (t < sched.t_eps) throw DomainError("perturb: t = " + std::to_string(t) + " below t_eps");
  if (y0.rows() != eps.rows() || y0.cols() != eps.cols()) throw DimensionError("perturb: noise shape differs from y0");
  const auto p = sched.marginal(t);
  if (!(p.sigma > 0)) throw DomainError("perturb: zero noise scale at t = " + std::to_string(t));
  return Perturbed{p.alpha * y0 + p.sigma * eps, -eps / p.sigma};
}

// Strictly decreasing reverse-time grid t_0 = 1 > ... > t_{steps-1} = t_eps + dt with constant dt.
struct TimeGrid {
  std::vector<double> times;
  double dt = 0.0;

  static TimeGrid reverse(int steps, double t_eps) {
    if (steps < 1) throw ContractError("TimeGrid: steps must be positive");
    TimeGrid g;
    g.dt = (1.0 - t_eps) / steps;
    g.times.reserve(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) g.times.push_back(1.0 - k * g.dt);
    return g;
  }
  int steps() const { return static_cast<int>(times.size()); }
};

// Euler-Maruyama simulation of the forward SDE from t = 0 to t = 1 in `steps` equal steps.
template <typename Derived>
Mat forward_em(const Schedule& sched, const Eigen::MatrixBase<Derived>& y0, int steps, Rng& rng) {
  if (steps < 100) throw ContractError("forward_em: grid of " + std::to_string(steps) + " steps is too coarse (< 100)");
  const double dt = 1.0 / steps;
  Mat y = y0;
  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    y = y + sched.drift(y, t) * dt + (sched.diffusion(t) * std::sqrt(dt)) * rng.normal_matrix(y.rows(), y.cols());
  }
  return y;
}

// Unadjusted Langevin move y + (alpha/2) s + sqrt(alpha) z.
template <typename Derived1, typename Derived2, typename Derived3>
Mat langevin_update(const Eigen::MatrixBase<Derived1>& y, const Eigen::MatrixBase<Derived2>& score, double alpha,
                    const Eigen::MatrixBase<Derived3>& z) {
  return y + (0.5 * alpha) * score + std::sqrt(alpha) * z;
}

template <typename Derived1, typename Derived2>
Mat langevin_step(const Eigen::MatrixBase<Derived1>& y, const Eigen::MatrixBase<Derived2>& score, double alpha,
                  Rng& rng) {
  if (y.rows() != score.rows() || y.cols() != score.cols()) throw DimensionError("langevin_step: score shape differs from y");
  if (!(alpha > 0)) throw ContractError("langevin_step: alpha must be positive");
  return langevin_update(y, score, alpha, rng.normal_matrix(y.rows(), y.cols()));
}

// One reverse-time Euler-Maruyama step from t to t - dt with the given noise.
template <typename Derived1, typename Derived2, typename Derived3>
Mat reverse_em_update(const Schedule& sched, const Eigen::MatrixBase<Derived1>& y,
                      const Eigen::MatrixBase<Derived2>& score, double t, double dt,
                      const Eigen::MatrixBase<Derived3>& z) {
  const double g = sched.diffusion(t);
  return y - (sched.drift(y, t) - (g * g) * score) * dt + (g * std::sqrt(dt)) * z;
}

template <typename Derived1, typename Derived2>
Mat reverse_em_step(const Schedule& sched, const Eigen::MatrixBase<Derived1>& y,
                    const Eigen::MatrixBase<Derived2>& score, double t, double dt, Rng& rng) {
  if (y.rows() != score.rows() || y.cols() != score.cols()) throw DimensionError("reverse_em_step: score shape differs from y");
  if (!(dt > 0)) throw ContractError("reverse_em_step: dt must be positive");
  return reverse_em_update(sched, y, score, t, dt, rng.normal_matrix(y.rows(), y.cols()));
}

}  // namespace twigs
