#pragma once

// Reference computations shared by the test suites, the self-check and the acceptance
// runner: finite differences, brute-force graph metrics, analytic SDE oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "twigs/errors.hpp"
#include "twigs/rng.hpp"
#include "twigs/sample.hpp"
#include "twigs/sde.hpp"
#include "twigs/tensor.hpp"

namespace twigs::verify {

// Central differences of a scalar function of the parameter's entries.
inline Mat numeric_grad(const std::function<double()>& f, Tensor& param, double h = 1e-5) {
  Mat g(param.rows(), param.cols());
  for (Index i = 0; i < param.size(); ++i) {
    double& x = param.mutable_value().data()[i];
    const double saved = x;
    x = saved + h;
    const double up = f();
    x = saved - h;
    const double down = f();
    x = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Entrywise |a - b| / max(|a|, |b|, floor), maximized.
inline double max_rel_error(const Mat& a, const Mat& b, double floor = 1e-3) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

// --- brute-force graph metrics ---------------------------------------------------

inline bool edge(const Mat& a, Index i, Index j) { return a(i, j) == 1.0; }

inline std::vector<int> brute_degrees(const Mat& a) {
  std::vector<int> d(static_cast<std::size_t>(a.rows()), 0);
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.rows(); ++j)
      if (edge(a, i, j)) ++d[static_cast<std::size_t>(i)];
  return d;
}

inline double brute_density(const Mat& a) {
  const Index n = a.rows();
  int m = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) m += edge(a, i, j);
  return static_cast<double>(m) / (static_cast<double>(n) * (n - 1) / 2.0);
}

inline double brute_clustering(const Mat& a) {
  const Index n = a.rows();
  double total = 0.0;
  for (Index v = 0; v < n; ++v) {
    std::vector<Index> nb;
    for (Index u = 0; u < n; ++u)
      if (edge(a, v, u)) nb.push_back(u);
    if (nb.size() < 2) continue;
    int closed = 0, pairs = 0;
    for (std::size_t p = 0; p < nb.size(); ++p)
      for (std::size_t q = p + 1; q < nb.size(); ++q) {
        ++pairs;
        closed += edge(a, nb[p], nb[q]);
      }
    total += static_cast<double>(closed) / pairs;
  }
  return total / static_cast<double>(n);
}

// Triple loop over vertex triples for triangles, center-vertex enumeration for triads.
inline double brute_transitivity(const Mat& a) {
  const Index n = a.rows();
  int triangles = 0, triads = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      for (Index k = j + 1; k < n; ++k)
        if (edge(a, i, j) && edge(a, j, k) && edge(a, i, k)) ++triangles;
  for (Index c = 0; c < n; ++c)
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j)
        if (i != c && j != c && edge(a, c, i) && edge(a, c, j)) ++triads;
  if (triads == 0) throw UndefinedMetric("no triads");
  return 3.0 * triangles / triads;
}

// Two-pass Pearson correlation over the explicit directed edge list.
inline double brute_assortativity(const Mat& a) {
  const auto d = brute_degrees(a);
  std::vector<double> xs, ys;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.rows(); ++j)
      if (edge(a, i, j)) {
        xs.push_back(d[static_cast<std::size_t>(i)]);
        ys.push_back(d[static_cast<std::size_t>(j)]);
      }
  if (xs.empty()) throw UndefinedMetric("no edges");
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    mx += xs[k];
    my += ys[k];
  }
  mx /= xs.size();
  my /= ys.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxy += (xs[k] - mx) * (ys[k] - my);
    sxx += (xs[k] - mx) * (xs[k] - mx);
    syy += (ys[k] - my) * (ys[k] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetric("zero variance");
  return sxy / std::sqrt(sxx * syy);
}

// --- random networks -------------------------------------------------------------

// Small random MLP (depth <= 3, width <= 16, tanh / exp-of-tanh / linear activations)
// with a squared-error loss.
struct RandomNet {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  std::vector<int> acts;
  Tensor input;
  Tensor target;

  explicit RandomNet(Rng& rng);
  Tensor loss() const;
};

// Largest relative error between backprop and central differences over every parameter.
double random_net_grad_error(Rng& rng);

// --- SDE oracles -----------------------------------------------------------------

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const Mat& samples);

// Forward Euler-Maruyama from y0 (all chains) up to time t on a grid of steps_per_unit
// steps per unit time.
Moments forward_em_moments(const Schedule& sched, double y0, double t, int chains, int steps_per_unit, Rng& rng);

// Reverse-time sampling of the 1-D law N(mu, var) from the prior with the analytic
// score. Langevin treats all chains as one block for the adaptive step.
Moments reverse_gaussian(const Schedule& sched, Sampler sampler, double mu, double var, int steps, int chains,
                         double snr, Rng& rng);

}  // namespace twigs::verify
