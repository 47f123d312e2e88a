#include "twigs/sample.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "twigs/errors.hpp"
#include "twigs/train.hpp"

namespace twigs {

using nlohmann::json;

std::string_view sample_mode_name(SampleMode m) {
  switch (m) {
    case SampleMode::Twigs: return "twigs";
    case SampleMode::ClassifierFree: return "cfg";
    case SampleMode::Unconditional: return "uncond";
  }
  return "twigs";
}

SampleMode parse_sample_mode(std::string_view s) {
  if (s == "twigs") return SampleMode::Twigs;
  if (s == "cfg") return SampleMode::ClassifierFree;
  if (s == "uncond") return SampleMode::Unconditional;
  throw ContractError("unknown mode '" + std::string(s) + "' (expected twigs, cfg or uncond)");
}

std::string_view sampler_name(Sampler s) { return s == Sampler::Langevin ? "langevin" : "reverse_em"; }

Sampler parse_sampler(std::string_view s) {
  if (s == "langevin") return Sampler::Langevin;
  if (s == "reverse_em") return Sampler::ReverseEm;
  throw ContractError("unknown sampler '" + std::string(s) + "' (expected langevin or reverse_em)");
}

void SampleConfig::validate() const {
  if (steps < 1) throw ContractError("steps must be positive");
  if (!(snr >= 0)) throw ContractError("snr must be non-negative");
  if (!(langevin_alpha > 0)) throw ContractError("langevin_alpha must be positive");
  if (!std::isfinite(guidance)) throw ContractError("guidance weight must be finite");
  if (!(threshold > 0 && threshold < 1)) throw ContractError("threshold must lie in (0,1)");
}

json SampleConfig::to_json() const {
  return {{"steps", steps},
          {"sampler", sampler_name(sampler)},
          {"mode", sample_mode_name(mode)},
          {"snr", snr},
          {"langevin_alpha", langevin_alpha},
          {"guidance", guidance},
          {"clamp_context", clamp_context},
          {"trunk_only_structure", trunk_only_structure},
          {"threshold", threshold}};
}

SampleConfig SampleConfig::from_json(const json& j) {
  SampleConfig c;
  c.steps = j.value("steps", c.steps);
  c.sampler = parse_sampler(j.value("sampler", std::string(sampler_name(c.sampler))));
  c.mode = parse_sample_mode(j.value("mode", std::string(sample_mode_name(c.mode))));
  c.snr = j.value("snr", c.snr);
  c.langevin_alpha = j.value("langevin_alpha", c.langevin_alpha);
  c.guidance = j.value("guidance", c.guidance);
  c.clamp_context = j.value("clamp_context", c.clamp_context);
  c.trunk_only_structure = j.value("trunk_only_structure", c.trunk_only_structure);
  c.threshold = j.value("threshold", c.threshold);
  return c;
}

DiffusionState init_state(const ModelConfig& cfg, Index n, const Conditioning& context, Rng& rng) {
  if (n < 2) throw ContractError("init_state: need at least two nodes");
  DiffusionState s;
  s.x = rng.normal_matrix(n, cfg.feature_dim);
  s.adj = rng.symmetric_noise(n);
  for (std::size_t i = 0; i < cfg.properties.size(); ++i) s.props.push_back(rng.normal());
  s.context = context;
  s.t = 1.0;
  return s;
}

double langevin_alpha(const SampleConfig& cfg, const Mat& score, const Mat& z, double sigma_t, bool block) {
  if (cfg.snr == 0.0) return cfg.langevin_alpha;
  if (block) {
    const double sn = score.norm();
    if (sn > 0) {
      const double r = cfg.snr * z.norm() / sn;
      return 2.0 * r * r;
    }
  }
  const double r = cfg.snr * sigma_t;
  return 2.0 * r * r;
}

namespace {

void require_finite(const Mat& m, const char* what, double t) {
  if (!m.allFinite()) {
    std::ostringstream os;
    os << "non-finite " << what << " score at t = " << t;
    throw NumericError(os.str());
  }
}

// Moves y one step along score with noise z.
Mat advance(const Schedule& sched, const SampleConfig& cfg, const Mat& y, const Mat& score, const Mat& z, double t,
            double dt, bool block) {
  if (cfg.sampler == Sampler::ReverseEm) return reverse_em_update(sched, y, score, t, dt, z);
  const double a = langevin_alpha(cfg, score, z, sched.marginal(t).sigma, block);
  return langevin_update(y, score, a, z);
}

void structure_update(const TwigsModel& model, DiffusionState& state, const Mat& sx, const Mat& sa, double t,
                      double dt, const SampleConfig& cfg, Rng& rng) {
  require_finite(sx, "node-feature", t);
  require_finite(sa, "adjacency", t);
  const Mat zx = rng.normal_matrix(state.x.rows(), state.x.cols());
  const Mat za = rng.symmetric_noise(state.adj.rows());
  state.x = advance(model.schedule(), cfg, state.x, sx, zx, t, dt, true);
  state.adj = advance(model.schedule(), cfg, state.adj, sa, za, t, dt, true);
}

template <typename F>
auto with_diagnostics(double t, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    std::ostringstream os;
    os << "sampling step at t = " << t << ": " << e.what();
    throw NumericError(os.str());
  }
}

}  // namespace

void twigs_step(const TwigsModel& model, DiffusionState& state, double t, double dt, const SampleConfig& cfg, Rng& rng,
                StepTrace* trace) {
  NoGradGuard no_grad;
  with_diagnostics(t, [&] {
    const ModelConfig& mc = model.config();
    if (trace) trace->structure_adj = state.adj;
    {
      const StructureInput s = prepare_structure(mc, state.x, state.adj);
      const TrunkScores sc = cfg.trunk_only_structure ? model.trunk_scores(s, state.context, t)
                                                      : model.total_structure_score(s, state.props, state.context, t);
      structure_update(model, state, sc.sx.value(), sc.sa.value(), t, dt, cfg, rng);
    }
    // properties see the structure that was just updated
    const StructureInput s = prepare_structure(mc, state.x, state.adj);
    if (trace) trace->property_adj = state.adj;
    for (int i = 0; i < model.num_stems(); ++i) {
      const auto yc = model.stem_context(i, state.context);
      double& y = state.props[static_cast<std::size_t>(i)];
      const Mat z = rng.normal_matrix(1, 1);
      if (cfg.clamp_context && yc) {
        y = *yc;
        continue;
      }
      const StemScores st = model.stem_scores(i, s, Tensor::scalar(y), yc, state.context.dropped, t);
      require_finite(st.prop.value(), "property", t);
      y = advance(model.schedule(), cfg, Mat::Constant(1, 1, y), st.prop.value(), z, t, dt, false)(0, 0);
    }
    state.t = t;
    return 0;
  });
}

void cfg_step(const TwigsModel& model, DiffusionState& state, double t, double dt, const SampleConfig& cfg, Rng& rng) {
  NoGradGuard no_grad;
  with_diagnostics(t, [&] {
    const StructureInput s = prepare_structure(model.config(), state.x, state.adj);
    Conditioning null_ctx = state.context;
    null_ctx.dropped = true;
    const TrunkScores cond = model.trunk_scores(s, state.context, t);
    const double w = cfg.guidance;
    Mat sx = cond.sx.value(), sa = cond.sa.value();
    if (w != 0.0) {
      const TrunkScores unc = model.trunk_scores(s, null_ctx, t);
      sx = (1.0 + w) * sx - w * unc.sx.value();
      sa = (1.0 + w) * sa - w * unc.sa.value();
    }
    structure_update(model, state, sx, sa, t, dt, cfg, rng);
    state.t = t;
    return 0;
  });
}

void unconditional_step(const TwigsModel& model, DiffusionState& state, double t, double dt, const SampleConfig& cfg,
                        Rng& rng) {
  NoGradGuard no_grad;
  with_diagnostics(t, [&] {
    const StructureInput s = prepare_structure(model.config(), state.x, state.adj);
    Conditioning null_ctx = state.context;
    null_ctx.dropped = true;
    const TrunkScores sc = model.trunk_scores(s, null_ctx, t);
    structure_update(model, state, sc.sx.value(), sc.sa.value(), t, dt, cfg, rng);
    state.t = t;
    return 0;
  });
}

namespace {

// Noise-free half step y + (alpha/2) s on the structure and properties at time t.
void finish(const TwigsModel& model, DiffusionState& state, double t, const SampleConfig& cfg) {
  NoGradGuard no_grad;
  const ModelConfig& mc = model.config();
  const StructureInput s = prepare_structure(mc, state.x, state.adj);
  const double sigma = model.schedule().marginal(t).sigma;
  Conditioning ctx = state.context;
  if (cfg.mode == SampleMode::Unconditional) ctx.dropped = true;
  TrunkScores sc;
  if (cfg.mode == SampleMode::Twigs && !cfg.trunk_only_structure) {
    sc = model.total_structure_score(s, state.props, ctx, t);
  } else {
    sc = model.trunk_scores(s, ctx, t);
  }
  if (cfg.mode == SampleMode::ClassifierFree && cfg.guidance != 0.0) {
    Conditioning null_ctx = ctx;
    null_ctx.dropped = true;
    const TrunkScores unc = model.trunk_scores(s, null_ctx, t);
    sc.sx = Tensor((1.0 + cfg.guidance) * sc.sx.value() - cfg.guidance * unc.sx.value());
    sc.sa = Tensor((1.0 + cfg.guidance) * sc.sa.value() - cfg.guidance * unc.sa.value());
  }
  require_finite(sc.sx.value(), "node-feature", t);
  require_finite(sc.sa.value(), "adjacency", t);
  // the step uses a unit-noise reference so |z| matches the block size
  const Mat zx = Mat::Ones(state.x.rows(), state.x.cols());
  Mat za = Mat::Ones(state.adj.rows(), state.adj.cols());
  za.diagonal().setZero();
  state.x += 0.5 * langevin_alpha(cfg, sc.sx.value(), zx, sigma, true) * sc.sx.value();
  state.adj += 0.5 * langevin_alpha(cfg, sc.sa.value(), za, sigma, true) * sc.sa.value();
}

}  // namespace

Graph run_chain(const TwigsModel& model, Index n, const Conditioning& context, const SampleConfig& cfg, Rng& rng) {
  cfg.validate();
  DiffusionState state = init_state(model.config(), n, context, rng);
  const TimeGrid grid = TimeGrid::reverse(cfg.steps, model.schedule().t_eps);
  for (double t : grid.times) {
    switch (cfg.mode) {
      case SampleMode::Twigs: twigs_step(model, state, t, grid.dt, cfg, rng); break;
      case SampleMode::ClassifierFree: cfg_step(model, state, t, grid.dt, cfg, rng); break;
      case SampleMode::Unconditional: unconditional_step(model, state, t, grid.dt, cfg, rng); break;
    }
  }
  finish(model, state, grid.times.back(), cfg);
  return make_graph(quantize_adjacency(state.adj, cfg.threshold));
}

Conditioning make_conditioning(const TwigsModel& model, const DatasetStats& stats, const SampleRun& run) {
  const ModelConfig& mc = model.config();
  Conditioning ctx;
  if (run.config.mode == SampleMode::Unconditional) {
    ctx.dropped = true;
    ctx.values.assign(mc.context.size(), 0.0);
    return ctx;
  }
  for (const auto& [name, value] : run.targets) {
    parse_property(name);
    if (!mc.in_context(name)) throw ContractError("model is not conditioned on '" + name + "'");
    if (!std::isfinite(value)) throw ContractError("target for '" + name + "' is not finite");
  }
  for (const auto& c : mc.context) {
    const auto it = run.targets.find(c);
    if (it == run.targets.end()) throw ContractError("missing target for conditioned property '" + c + "'");
    ctx.values.push_back(standardize(stats, c, it->second));
  }
  return ctx;
}

std::uint64_t chain_seed(std::uint64_t seed, int chain) {
  // splitmix64 of (seed, chain)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(chain) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<LabeledGraph> sample_graphs(const TwigsModel& model, const DatasetStats& stats,
                                        const std::map<int, int>& node_counts, const SampleRun& run) {
  run.config.validate();
  if (run.n_samples < 0) throw ContractError("sample count must be non-negative");
  if (run.jobs < 1) throw ContractError("jobs must be at least 1");
  if (node_counts.empty()) throw ContractError("no node-count distribution available");
  if (run.config.mode == SampleMode::ClassifierFree && model.config().context.empty()) {
    throw ContractError("classifier-free sampling needs a model trained with a context");
  }
  const Conditioning ctx = make_conditioning(model, stats, run);

  std::vector<int> sizes;
  std::vector<double> weights;
  for (const auto& [n, c] : node_counts) {
    if (n < 2) throw ContractError("node-count distribution contains n < 2");
    sizes.push_back(n);
    weights.push_back(c);
  }

  std::vector<LabeledGraph> out(static_cast<std::size_t>(run.n_samples));
  auto one = [&](int i) {
    Rng rng(chain_seed(run.seed, i));
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const Index n = sizes[pick(rng.engine())];
    const Graph g = run_chain(model, n, ctx, run.config, rng);
    out[static_cast<std::size_t>(i)] = LabeledGraph{g, measure_properties(g.adj)};
  };

  if (run.jobs == 1) {
    for (int i = 0; i < run.n_samples; ++i) one(i);
    return out;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (int w = 0; w < std::min(run.jobs, std::max(run.n_samples, 1)); ++w) {
    workers.emplace_back([&] {
      for (int i = next++; i < run.n_samples; i = next++) {
        try {
          one(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = run.n_samples;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace twigs
