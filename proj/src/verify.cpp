#include "twigs/verify.hpp"

namespace twigs::verify {

RandomNet::RandomNet(Rng& rng) {
  const int depth = rng.uniform_int(1, 3);
  Index width = rng.uniform_int(1, 6);
  const Index batch = rng.uniform_int(1, 5);
  input = Tensor(rng.normal_matrix(batch, width));
  for (int l = 0; l < depth; ++l) {
    const Index out = rng.uniform_int(1, 16);
    weights.emplace_back(0.5 * rng.normal_matrix(width, out), true);
    biases.emplace_back(0.1 * rng.normal_matrix(1, out), true);
    acts.push_back(rng.uniform_int(0, 2));
    width = out;
  }
  target = Tensor(rng.normal_matrix(batch, width));
}

Tensor RandomNet::loss() const {
  Tensor h = input;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = add(matmul(h, weights[l]), broadcast_rows(biases[l], h.rows()));
    if (acts[l] == 0) h = tanh(h);
    if (acts[l] == 1) h = exp(scale(tanh(h), 0.5));
  }
  return mean(square(sub(h, target)));
}

double random_net_grad_error(Rng& rng) {
  RandomNet net(rng);
  std::vector<Tensor> params = net.weights;
  params.insert(params.end(), net.biases.begin(), net.biases.end());
  for (Tensor& p : params) p.clear_grad();
  backward(net.loss());
  auto f = [&] { return net.loss().item(); };
  double worst = 0.0;
  for (Tensor& p : params) worst = std::max(worst, max_rel_error(p.grad(), numeric_grad(f, p)));
  return worst;
}

Moments moments(const Mat& samples) {
  Moments m;
  const double n = static_cast<double>(samples.size());
  m.mean = samples.sum() / n;
  m.var = (samples.array() - m.mean).square().sum() / (n - 1.0);
  return m;
}

Moments forward_em_moments(const Schedule& sched, double y0, double t, int chains, int steps_per_unit, Rng& rng) {
  const int steps = std::max(1, static_cast<int>(std::lround(t * steps_per_unit)));
  const double dt = t / steps;
  Mat y = Mat::Constant(chains, 1, y0);
  for (int k = 0; k < steps; ++k) {
    const double s = k * dt;
    y = y + sched.drift(y, s) * dt + (sched.diffusion(s) * std::sqrt(dt)) * rng.normal_matrix(chains, 1);
  }
  return moments(y);
}

Moments reverse_gaussian(const Schedule& sched, Sampler sampler, double mu, double var, int steps, int chains,
                         double snr, Rng& rng) {
  SampleConfig cfg;
  cfg.sampler = sampler;
  cfg.snr = snr;
  const TimeGrid grid = TimeGrid::reverse(steps, sched.t_eps);
  Mat y = rng.normal_matrix(chains, 1);
  auto score = [&](const Mat& x, double t) -> Mat {
    const auto k = sched.marginal(t);
    const double v = k.alpha * k.alpha * var + k.sigma * k.sigma;
    return -(x.array() - k.alpha * mu) / v;
  };
  for (double t : grid.times) {
    const Mat s = score(y, t);
    const Mat z = rng.normal_matrix(chains, 1);
    if (sampler == Sampler::ReverseEm) {
      y = reverse_em_update(sched, y, s, t, grid.dt, z);
    } else {
      y = langevin_update(y, s, langevin_alpha(cfg, s, z, sched.marginal(t).sigma, true), z);
    }
  }
  return moments(y);
}

}  // namespace twigs::verify
