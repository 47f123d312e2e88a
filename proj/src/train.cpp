#include "twigs/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "twigs/errors.hpp"

namespace twigs {

using nlohmann::json;

namespace {

Tensor constant(Mat m) { return Tensor(std::move(m), false); }

double sample_time(const Schedule& sched, Rng& rng) {
  // U(t_eps, 1]
  return 1.0 - (1.0 - sched.t_eps) * rng.uniform();
}

double property_of(const LabeledGraph& g, const std::string& prop, std::size_t index) {
  const auto it = g.properties.find(prop);
  if (it == g.properties.end()) {
    throw DataError("graph " + std::to_string(index) + " lacks property '" + prop + "'");
  }
  return it->second;
}

}  // namespace

std::string_view train_mode_name(TrainMode m) { return m == TrainMode::Twigs ? "twigs" : "cfg"; }

TrainMode parse_train_mode(std::string_view s) {
  if (s == "twigs") return TrainMode::Twigs;
  if (s == "cfg") return TrainMode::ClassifierFree;
  throw ContractError("unknown training mode '" + std::string(s) + "' (expected twigs or cfg)");
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ContractError("iterations must be non-negative");
  if (batch_size < 1) throw ContractError("batch size must be at least 1");
  if (!(lr >= 0)) throw ContractError("learning rate must be non-negative");
  if (!(w_x >= 0 && w_a >= 0 && w_prop >= 0)) throw ContractError("loss weights must be non-negative");
  if (!(context_dropout >= 0 && context_dropout <= 1)) throw ContractError("context dropout must lie in [0,1]");
  if (checkpoint_every < 0) throw ContractError("checkpoint interval must be non-negative");
  for (const auto& p : properties) parse_property(p);
  for (const auto& c : context) {
    parse_property(c);
    if (mode == TrainMode::Twigs && std::find(properties.begin(), properties.end(), c) == properties.end()) {
      throw ContractError("context property '" + c + "' is not a registered property");
    }
  }
}

json TrainConfig::to_json() const {
  return {{"iterations", iterations}, {"batch_size", batch_size},
          {"lr", lr},                 {"w_x", w_x},
          {"w_a", w_a},               {"w_prop", w_prop},
          {"context_dropout", context_dropout},
          {"seed", seed},             {"mode", train_mode_name(mode)},
          {"properties", properties}, {"context", context},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.w_x = j.value("w_x", c.w_x);
  c.w_a = j.value("w_a", c.w_a);
  c.w_prop = j.value("w_prop", c.w_prop);
  c.context_dropout = j.value("context_dropout", c.context_dropout);
  c.seed = j.value("seed", c.seed);
  c.mode = parse_train_mode(j.value("mode", std::string("twigs")));
  c.properties = j.value("properties", c.properties);
  c.context = j.value("context", c.context);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  return c;
}

ModelConfig model_config_for(const TrainConfig& cfg, ModelConfig base) {
  base.context = cfg.context;
  base.properties = cfg.mode == TrainMode::Twigs ? cfg.properties : std::vector<std::string>{};
  return base;
}

double standardize(const DatasetStats& stats, const std::string& prop, double raw) {
  const auto it = stats.find(prop);
  if (it == stats.end()) throw DataError("no statistics for property '" + prop + "'");
  return (raw - it->second.mean) / it->second.std;
}

double destandardize(const DatasetStats& stats, const std::string& prop, double z) {
  const auto it = stats.find(prop);
  if (it == stats.end()) throw DataError("no statistics for property '" + prop + "'");
  return it->second.mean + it->second.std * z;
}

// --- loss ------------------------------------------------------------------------

GraphNoise draw_noise(const LabeledGraph& g, int stems, double context_dropout, Rng& rng) {
  GraphNoise n;
  n.x = rng.normal_matrix(g.graph.x.rows(), g.graph.x.cols());
  n.a = rng.symmetric_noise(g.graph.n());
  for (int i = 0; i < stems; ++i) n.props.push_back(rng.normal());
  n.context_dropped = context_dropout > 0 && rng.bernoulli(context_dropout);
  return n;
}

LossTerms dsm_loss_with_noise(const TwigsModel& model, const std::vector<const LabeledGraph*>& batch, double t,
                              const std::vector<GraphNoise>& noise, const TrainConfig& cfg, const DatasetStats& stats) {
  if (batch.empty()) throw ContractError("dsm_loss: empty batch");
  if (noise.size() != batch.size()) throw DimensionError("dsm_loss: noise count differs from batch size");
  const Schedule& sched = model.schedule();
  if (t < sched.t_eps || t > 1.0) throw DomainError("dsm_loss: t = " + std::to_string(t) + " outside [t_eps, 1]");
  const auto kernel = sched.marginal(t);
  const ModelConfig& mc = model.config();

  Tensor lx, la, lp;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const LabeledGraph& g = *batch[b];
    const GraphNoise& eps = noise[b];
    const Index n = g.graph.n();
    if (n < 2) throw DataError("graph " + std::to_string(b) + " has fewer than two nodes");

    Conditioning ctx;
    ctx.dropped = eps.context_dropped;
    for (const auto& c : mc.context) ctx.values.push_back(standardize(stats, c, property_of(g, c, b)));

    std::vector<Tensor> props_t;
    for (int i = 0; i < model.num_stems(); ++i) {
      const std::string& p = mc.properties[static_cast<std::size_t>(i)];
      const double y0 = standardize(stats, p, property_of(g, p, b));
      props_t.push_back(Tensor::scalar(kernel.alpha * y0 + kernel.sigma * eps.props.at(static_cast<std::size_t>(i))));
    }

    const Mat xt = kernel.alpha * g.graph.x + kernel.sigma * eps.x;
    const Mat at = kernel.alpha * g.graph.adj + kernel.sigma * eps.a;
    const StructureInput s = prepare_structure(mc, xt, at);
    const JointScores scores = model.joint_scores(s, props_t, ctx, t);

    // sigma^2 |s + eps/sigma|^2 = |sigma s + eps|^2
    const Tensor ex = mean(square(add(scale(scores.sx, kernel.sigma), constant(eps.x))));
    const Tensor ea = scale(sum(square(add(scale(scores.sa, kernel.sigma), constant(eps.a)))),
                            1.0 / static_cast<double>(n * (n - 1)));
    lx = lx.defined() ? add(lx, ex) : ex;
    la = la.defined() ? add(la, ea) : ea;
    for (int i = 0; i < model.num_stems(); ++i) {
      const Tensor ep = square(add_scalar(scale(scores.props[static_cast<std::size_t>(i)], kernel.sigma),
                                          eps.props[static_cast<std::size_t>(i)]));
      lp = lp.defined() ? add(lp, ep) : ep;
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossTerms out;
  lx = scale(lx, inv_b);
  la = scale(la, inv_b);
  out.x = lx.item();
  out.a = la.item();
  out.total = add(scale(lx, cfg.w_x), scale(la, cfg.w_a));
  if (lp.defined()) {
    lp = scale(lp, inv_b);
    out.prop = lp.item();
    out.total = add(out.total, scale(lp, cfg.w_prop));
  }
  return out;
}

LossTerms dsm_loss(const TwigsModel& model, const std::vector<const LabeledGraph*>& batch, double t, Rng& rng,
                   const TrainConfig& cfg, const DatasetStats& stats) {
  const double dropout = model.config().context_dim() > 0 ? cfg.context_dropout : 0.0;
  std::vector<GraphNoise> noise;
  noise.reserve(batch.size());
  for (const LabeledGraph* g : batch) noise.push_back(draw_noise(*g, model.num_stems(), dropout, rng));
  return dsm_loss_with_noise(model, batch, t, noise, cfg, stats);
}

// --- state -----------------------------------------------------------------------

Checkpoint TrainState::to_checkpoint() const {
  Checkpoint ckpt = model.to_checkpoint();
  ckpt.config["train"] = config.to_json();
  json hist = json::array();
  for (const LossRecord& r : history) hist.push_back({r.iteration, r.t, r.x, r.a, r.prop, r.total});
  json counts = json::object();
  for (const auto& [n, c] : node_counts) counts[std::to_string(n)] = c;
  ckpt.meta = {{"iteration", iteration}, {"adam_step", adam.step}, {"rng", rng.state()},
               {"stats", stats_to_json(stats)}, {"node_counts", counts}, {"loss_history", hist}};
  const auto named = model.named_parameters();
  for (std::size_t i = 0; i < named.size() && i < adam.m.size(); ++i) {
    ckpt.tensors.emplace("adam/m/" + named[i].path, adam.m[i]);
    ckpt.tensors.emplace("adam/v/" + named[i].path, adam.v[i]);
  }
  return ckpt;
}

TrainState TrainState::from_checkpoint(const Checkpoint& ckpt) {
  TrainState st;
  st.model = TwigsModel::from_checkpoint(ckpt);
  st.config = TrainConfig::from_json(ckpt.config.value("train", json::object()));
  st.adam = AdamState(AdamConfig{.lr = st.config.lr}, st.model.parameters());
  const json& meta = ckpt.meta;
  st.iteration = meta.value("iteration", 0);
  st.adam.step = meta.value("adam_step", 0L);
  if (meta.contains("rng")) st.rng.set_state(meta.at("rng").get<std::string>());
  if (meta.contains("stats")) st.stats = stats_from_json(meta.at("stats"));
  if (meta.contains("node_counts")) {
    for (const auto& [k, v] : meta.at("node_counts").items()) st.node_counts[std::stoi(k)] = v.get<int>();
  }
  if (meta.contains("loss_history")) {
    for (const auto& r : meta.at("loss_history")) {
      st.history.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(),
                            r.at(4).get<double>(), r.at(5).get<double>()});
    }
  }
  const auto named = st.model.named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto m = ckpt.tensors.find("adam/m/" + named[i].path);
    const auto v = ckpt.tensors.find("adam/v/" + named[i].path);
    if (m == ckpt.tensors.end() || v == ckpt.tensors.end()) {
      if (st.adam.step > 0) throw ParseError("checkpoint lacks optimizer moments for '" + named[i].path + "'");
      continue;
    }
    st.adam.m[i] = m->second;
    st.adam.v[i] = v->second;
  }
  return st;
}

TrainState init_training(const std::vector<LabeledGraph>& dataset, const TrainConfig& cfg, const ModelConfig& base) {
  cfg.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  const Index f = dataset.front().graph.x.cols();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].graph.x.cols() != f) {
      throw DataError("graph " + std::to_string(i) + " has " + std::to_string(dataset[i].graph.x.cols()) +
                      " features, expected " + std::to_string(f));
    }
  }
  ModelConfig mc = model_config_for(cfg, base);
  mc.feature_dim = static_cast<int>(f);

  TrainState st;
  st.config = cfg;
  st.rng = Rng(cfg.seed);
  // parameter initialization draws from its own stream so batch noise does not depend on model size
  st.model = TwigsModel(mc, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  st.adam = AdamState(AdamConfig{.lr = cfg.lr}, st.model.parameters());
  st.stats = compute_stats(dataset);
  for (const auto& p : mc.properties) {
    if (!st.stats.count(p)) throw DataError("no graph defines property '" + p + "'");
  }
  for (const auto& c : mc.context) {
    if (!st.stats.count(c)) throw DataError("no graph defines property '" + c + "'");
  }
  for (const LabeledGraph& g : dataset) st.node_counts[static_cast<int>(g.graph.n())]++;
  return st;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,t,loss_X,loss_A,loss_prop,total\n";
  for (const LossRecord& r : history) {
    out << r.iteration << ',' << format_double(r.t) << ',' << format_double(r.x) << ',' << format_double(r.a) << ','
        << format_double(r.prop) << ',' << format_double(r.total) << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path.string());
}

double mean_loss(const std::vector<LossRecord>& history, std::size_t begin, std::size_t end) {
  end = std::min(end, history.size());
  if (begin >= end) throw ContractError("mean_loss: empty range");
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += history[i].total;
  return s / static_cast<double>(end - begin);
}

void train(TrainState& state, const std::vector<LabeledGraph>& dataset, const TrainHooks& hooks) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  std::vector<Tensor> params = state.model.parameters();
  state.adam.config.lr = cfg.lr;
  const int last = static_cast<int>(dataset.size()) - 1;

  auto save = [&] {
    if (hooks.checkpoint_path) write_checkpoint(*hooks.checkpoint_path, state.to_checkpoint());
    if (hooks.loss_csv) write_loss_csv(*hooks.loss_csv, state.history);
  };

  while (state.iteration < cfg.iterations) {
    std::vector<const LabeledGraph*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(&dataset[static_cast<std::size_t>(state.rng.uniform_int(0, last))]);
    const double t = sample_time(state.model.schedule(), state.rng);

    LossRecord rec{state.iteration, t, 0, 0, 0, 0};
    LossTerms terms;
    try {
      terms = dsm_loss(state.model, batch, t, state.rng, cfg, state.stats);
      rec.x = terms.x;
      rec.a = terms.a;
      rec.prop = terms.prop;
      rec.total = terms.total.item();
      if (!std::isfinite(rec.total)) throw NumericError("non-finite loss");
      backward(terms.total);
      adam_step(params, state.adam);
    } catch (const NumericError& e) {
      std::ostringstream os;
      os << "training aborted at iteration " << state.iteration << " (t = " << t << ", loss_X = " << rec.x
         << ", loss_A = " << rec.a << ", loss_prop = " << rec.prop << "): " << e.what();
      throw NumericError(os.str());
    }
    state.history.push_back(rec);
    ++state.iteration;
    if (hooks.on_iteration) hooks.on_iteration(rec);
    if (cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) save();
  }
  save();
}

// --- Gaussian sanity -------------------------------------------------------------

Tensor GaussianScoreNet::scaled(const Mat& x, const Eigen::VectorXd& t) const {
  Mat in(x.rows(), 2 + time_dim);
  in.leftCols(2) = x;
  for (Index i = 0; i < x.rows(); ++i) in.block(i, 2, 1, time_dim) = sinusoidal_embedding(t(i), time_dim);
  return mlp(constant(std::move(in)));
}

Eigen::Vector2d GaussianScoreNet::operator()(const Eigen::Vector2d& x, double t) const {
  NoGradGuard guard;
  const Mat out = scaled(x.transpose(), Eigen::VectorXd::Constant(1, t)).value();
  return out.row(0).transpose() / schedule.marginal(t).sigma;
}

std::vector<Tensor> GaussianScoreNet::parameters() const {
  std::vector<NamedParam> named;
  mlp.collect(named, "mlp");
  std::vector<Tensor> out;
  for (auto& p : named) out.push_back(p.tensor);
  return out;
}

Eigen::Vector2d gaussian_score(const GaussianSanityConfig& cfg, const Schedule& sched, const Eigen::Vector2d& x,
                               double t) {
  const auto k = sched.marginal(t);
  const Eigen::Matrix2d cov = k.alpha * k.alpha * cfg.cov + k.sigma * k.sigma * Eigen::Matrix2d::Identity();
  return -cov.ldlt().solve(x - k.alpha * cfg.mu);
}

GaussianScoreNet train_gaussian_sanity(const GaussianSanityConfig& cfg) {
  Rng rng(cfg.seed);
  GaussianScoreNet net;
  net.mlp = Mlp({2 + net.time_dim, cfg.hidden, cfg.hidden, 2}, rng, true);
  const Eigen::Matrix2d chol = cfg.cov.llt().matrixL();
  std::vector<Tensor> params = net.parameters();
  AdamState adam(AdamConfig{.lr = cfg.lr}, params);

  for (int it = 0; it < cfg.iterations; ++it) {
    Mat x0 = rng.normal_matrix(cfg.batch_size, 2) * chol.transpose();
    x0.rowwise() += cfg.mu.transpose();
    const Mat eps = rng.normal_matrix(cfg.batch_size, 2);
    Eigen::VectorXd t(cfg.batch_size);
    Mat xt(cfg.batch_size, 2);
    for (Index i = 0; i < cfg.batch_size; ++i) {
      t(i) = sample_time(net.schedule, rng);
      const auto k = net.schedule.marginal(t(i));
      xt.row(i) = k.alpha * x0.row(i) + k.sigma * eps.row(i);
    }
    const Tensor loss = mean(square(add(net.scaled(xt, t), constant(eps))));
    if (!std::isfinite(loss.item())) {
      throw NumericError("gaussian sanity training diverged at iteration " + std::to_string(it));
    }
    backward(loss);
    adam_step(params, adam);
  }
  return net;
}

double gaussian_score_agreement(const GaussianSanityConfig& cfg, const GaussianScoreNet& net) {
  const std::array<double, 4> times{0.05, 0.25, 0.5, 0.9};
  double total = 0.0;
  int count = 0;
  for (double t : times) {
    const auto k = net.schedule.marginal(t);
    const Eigen::Vector2d center = k.alpha * cfg.mu;
    const Eigen::Vector2d sd =
        (k.alpha * k.alpha * cfg.cov.diagonal().array() + k.sigma * k.sigma).sqrt().matrix();
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        // offset by half a step so no grid point sits on the mode, where the score is zero
        const Eigen::Vector2d x = center + Eigen::Vector2d((i - 1.5) * sd(0), (j - 1.5) * sd(1));
        const Eigen::Vector2d a = gaussian_score(cfg, net.schedule, x, t);
        const Eigen::Vector2d b = net(x, t);
        const double denom = a.norm() * b.norm();
        total += denom > 0 ? a.dot(b) / denom : 0.0;
        ++count;
      }
    }
  }
  return total / count;
}

}  // namespace twigs
