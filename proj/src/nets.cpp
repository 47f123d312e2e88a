#include "twigs/nets.hpp"

#include <algorithm>
#include <cmath>

namespace twigs {

namespace {

Tensor constant(Mat m) { return Tensor(std::move(m), false); }

Tensor concat_present(const std::vector<Tensor>& parts) {
  std::vector<Tensor> present;
  for (const Tensor& p : parts) {
    if (p.defined() && p.cols() > 0) present.push_back(p);
  }
  return concat_cols(std::span<const Tensor>(present));
}

}  // namespace

// --- config ----------------------------------------------------------------------

bool ModelConfig::in_context(const std::string& prop) const {
  return std::find(context.begin(), context.end(), prop) != context.end();
}

nlohmann::json ModelConfig::to_json() const {
  return {{"feature_dim", feature_dim}, {"hidden", hidden},   {"gcn_layers", gcn_layers},
          {"gmh_layers", gmh_layers},   {"heads", heads},     {"powers", powers},
          {"time_dim", time_dim},       {"entry_hidden", entry_hidden},
          {"support_threshold", support_threshold},           {"properties", properties},
          {"context", context}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.gcn_layers = j.value("gcn_layers", c.gcn_layers);
  c.gmh_layers = j.value("gmh_layers", c.gmh_layers);
  c.heads = j.value("heads", c.heads);
  c.powers = j.value("powers", c.powers);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.entry_hidden = j.value("entry_hidden", c.entry_hidden);
  c.support_threshold = j.value("support_threshold", c.support_threshold);
  c.properties = j.value("properties", c.properties);
  c.context = j.value("context", c.context);
  return c;
}

// --- layers ----------------------------------------------------------------------

Linear::Linear(Index d_in, Index d_out, Rng& rng, bool zero_init) {
  Mat w = Mat::Zero(d_in, d_out);
  if (!zero_init) {
    const double a = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = a * (2.0 * rng.uniform() - 1.0);
  }
  weight = Tensor(std::move(w), true);
  bias = Tensor(Mat::Zero(1, d_out), true);
}

Tensor Linear::operator()(const Tensor& h) const {
  return add(matmul(h, weight), broadcast_rows(bias, h.rows()));
}

void Linear::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
  out.push_back({prefix + "/w", weight});
  out.push_back({prefix + "/b", bias});
}

Mlp::Mlp(const std::vector<Index>& widths, Rng& rng, bool zero_last) {
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers.emplace_back(widths[i], widths[i + 1], rng, zero_last && last);
  }
}

Tensor Mlp::operator()(const Tensor& h) const {
  Tensor out = h;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out = layers[i](out);
    if (i + 1 < layers.size()) out = tanh(out);
  }
  return out;
}

void Mlp::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + "/" + std::to_string(i));
}

Mat gcn_normalize(const Mat& adj) {
  Mat a = adj;
  a.diagonal().setOnes();
  const Eigen::VectorXd inv_sqrt = a.rowwise().sum().cwiseMax(1.0).cwiseSqrt().cwiseInverse();
  return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

Tensor gcn_forward(const GcnLayer& layer, const Tensor& h, const Mat& norm_adj) {
  if (h.rows() != norm_adj.rows()) {
    throw DimensionError("gcn_forward: features " + shape_string(h.value()) + " vs adjacency " + shape_string(norm_adj));
  }
  return tanh(layer.lin(matmul(constant(norm_adj), h)));
}

std::vector<Mat> power_supports(const Mat& adj, int powers, double threshold) {
  if (powers < 1) throw ContractError("power_supports: need at least one power");
  const Index n = adj.rows();
  Mat base = ((0.5 * (adj + adj.transpose())).cwiseAbs().array() > threshold).cast<double>();
  base.diagonal().setZero();
  std::vector<Mat> out;
  Mat reach = Mat::Identity(n, n);
  for (int p = 1; p <= powers; ++p) {
    reach = ((reach * base).array() > 0.0).cast<double>();
    Mat mask = reach;
    mask.diagonal().setOnes();
    out.push_back(std::move(mask));
  }
  return out;
}

Mat sinusoidal_embedding(double t, int dim) {
  const int m = dim / 2;
  Mat e = Mat::Zero(1, dim);
  for (int k = 0; k < m; ++k) {
    const double w = m > 1 ? std::pow(50.0, static_cast<double>(k) / (m - 1)) : 1.0;
    e(0, 2 * k) = std::sin(w * t);
    e(0, 2 * k + 1) = std::cos(w * t);
  }
  return e;
}

GmhLayer::GmhLayer(Index d_in, Index d_hidden_, Index d_out, int heads_, int powers, Rng& rng)
    : heads(heads_), d_hidden(d_hidden_) {
  if (d_hidden % heads != 0) throw ContractError("GmhLayer: hidden width must divide evenly into heads");
  for (int p = 0; p < powers; ++p) qkv.emplace_back(d_in, 3 * d_hidden, rng);
  if (d_out > 0) out = Linear(static_cast<Index>(powers) * d_hidden, d_out, rng);
}

void GmhLayer::collect(std::vector<NamedParam>& out_params, const std::string& prefix) const {
  for (std::size_t p = 0; p < qkv.size(); ++p) qkv[p].collect(out_params, prefix + "/qkv" + std::to_string(p));
  if (out.weight.defined()) out.collect(out_params, prefix + "/out");
}

GmhOutput gmh_forward(const GmhLayer& layer, const Tensor& h, const std::vector<Mat>& supports) {
  if (supports.size() != layer.qkv.size()) {
    throw DimensionError("gmh_forward: " + std::to_string(supports.size()) + " supports for " +
                         std::to_string(layer.qkv.size()) + " powers");
  }
  const Index dh = layer.d_hidden;
  const Index dk = dh / layer.heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  const double inv_heads = 1.0 / layer.heads;
  GmhOutput result;
  std::vector<Tensor> per_power;
  for (std::size_t p = 0; p < supports.size(); ++p) {
    const Tensor qkv = layer.qkv[p](h);
    std::vector<Tensor> head_out;
    Tensor attn_sum, aff_sum;
    for (int k = 0; k < layer.heads; ++k) {
      const Tensor q = slice_cols(qkv, k * dk, dk);
      const Tensor key = slice_cols(qkv, dh + k * dk, dk);
      const Tensor v = slice_cols(qkv, 2 * dh + k * dk, dk);
      const Tensor logits = scale(matmul(q, transpose(key)), inv_sqrt_dk);
      const Tensor w = masked_row_softmax(logits, supports[p]);
      head_out.push_back(matmul(w, v));
      const Tensor aff = tanh(logits);
      attn_sum = attn_sum.defined() ? add(attn_sum, w) : w;
      aff_sum = aff_sum.defined() ? add(aff_sum, aff) : aff;
    }
    per_power.push_back(concat_cols(std::span<const Tensor>(head_out)));
    result.attention.push_back(symmetrize(scale(attn_sum, inv_heads)));
    result.affinity.push_back(symmetrize(scale(aff_sum, inv_heads)));
  }
  if (layer.out.weight.defined()) result.nodes = tanh(layer.out(concat_cols(std::span<const Tensor>(per_power))));
  return result;
}

void TrunkNet::collect(std::vector<NamedParam>& out) const {
  for (std::size_t i = 0; i < node_gcn.size(); ++i) node_gcn[i].collect(out, "trunk/node/gcn" + std::to_string(i));
  node_head.collect(out, "trunk/node/head");
  for (std::size_t i = 0; i < gmh.size(); ++i) gmh[i].collect(out, "trunk/adj/gmh" + std::to_string(i));
  entry_mlp.collect(out, "trunk/adj/entry");
  if (null_context.defined()) out.push_back({"trunk/null_context", null_context});
}

void StemNet::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < body.size(); ++i) body[i].collect(out, prefix + "/gcn" + std::to_string(i));
  node_head.collect(out, prefix + "/node_head");
  prop_head.collect(out, prefix + "/prop_head");
  if (has_context) out.push_back({prefix + "/null_context", null_context});
}

StructureInput prepare_structure(const ModelConfig& cfg, const Mat& x, const Mat& adj) {
  if (adj.rows() != adj.cols() || x.rows() != adj.rows()) {
    throw DimensionError("prepare_structure: features " + shape_string(x) + " vs adjacency " + shape_string(adj));
  }
  if (x.cols() != cfg.feature_dim) {
    throw DimensionError("prepare_structure: expected " + std::to_string(cfg.feature_dim) + " feature columns, got " +
                         std::to_string(x.cols()));
  }
  StructureInput s;
  s.x = constant(x);
  s.adj = adj;
  s.norm_adj = gcn_normalize(adj);
  s.supports = power_supports(adj, cfg.powers, cfg.support_threshold);
  s.off_diagonal = Mat::Ones(adj.rows(), adj.rows());
  s.off_diagonal.diagonal().setZero();
  return s;
}

// --- model -----------------------------------------------------------------------

TwigsModel::TwigsModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  Rng rng(seed);
  const Index f = cfg_.feature_dim, h = cfg_.hidden, td = cfg_.time_dim;
  const Index cdim = cfg_.context_dim();
  const Index trunk_in = f + cdim + td;

  for (int l = 0; l < cfg_.gcn_layers; ++l) trunk_.node_gcn.emplace_back(l == 0 ? trunk_in : h, h, rng);
  trunk_.node_head = Mlp({trunk_in + static_cast<Index>(cfg_.gcn_layers) * h, h, f}, rng, true);
  for (int l = 0; l < cfg_.gmh_layers; ++l) {
    // the last layer only contributes attention channels, so it has no output projection
    const Index d_out = l + 1 < cfg_.gmh_layers ? h : 0;
    trunk_.gmh.emplace_back(l == 0 ? trunk_in : h, h, d_out, cfg_.heads, cfg_.powers, rng);
  }
  const Index channels = 1 + cfg_.powers + 2 * static_cast<Index>(cfg_.gmh_layers) * cfg_.powers;
  trunk_.entry_mlp = Mlp({channels, cfg_.entry_hidden, 1}, rng, true);
  if (cdim > 0) trunk_.null_context = Tensor(Mat::Zero(1, cdim), true);

  for (const std::string& prop : cfg_.properties) {
    StemNet stem;
    stem.has_context = cfg_.in_context(prop);
    const Index stem_in = f + 1 + (stem.has_context ? 1 : 0) + td;
    for (int l = 0; l < cfg_.gcn_layers; ++l) stem.body.emplace_back(l == 0 ? stem_in : h, h, rng);
    const Index pooled = stem_in + static_cast<Index>(cfg_.gcn_layers) * h;
    stem.node_head = Mlp({pooled, h, f}, rng, true);
    stem.prop_head = Mlp({pooled, h, 1}, rng, true);
    if (stem.has_context) stem.null_context = Tensor(Mat::Zero(1, 1), true);
    stems_.push_back(std::move(stem));
  }
}

std::vector<NamedParam> TwigsModel::named_parameters() const {
  std::vector<NamedParam> out;
  trunk_.collect(out);
  for (std::size_t i = 0; i < stems_.size(); ++i) stems_[i].collect(out, "stem/" + cfg_.properties[i]);
  for (NamedParam& p : out) p.tensor.node()->name = p.path;
  return out;
}

std::vector<Tensor> TwigsModel::parameters() const {
  std::vector<Tensor> out;
  for (NamedParam& p : named_parameters()) out.push_back(std::move(p.tensor));
  return out;
}

Mat TwigsModel::time_embedding(double t) const { return sinusoidal_embedding(t, cfg_.time_dim); }

Tensor TwigsModel::context_row(const Conditioning& ctx, Index n) const {
  const int cdim = cfg_.context_dim();
  if (cdim == 0) return {};
  if (ctx.dropped) return broadcast_rows(trunk_.null_context, n);
  if (static_cast<int>(ctx.values.size()) != cdim) {
    throw DimensionError("context has " + std::to_string(ctx.values.size()) + " values, model expects " +
                         std::to_string(cdim));
  }
  Mat row(1, cdim);
  for (int c = 0; c < cdim; ++c) row(0, c) = ctx.values[static_cast<std::size_t>(c)];
  return constant(row.replicate(n, 1));
}

std::optional<double> TwigsModel::stem_context(int i, const Conditioning& ctx) const {
  const StemNet& stem = stems_.at(static_cast<std::size_t>(i));
  if (!stem.has_context || ctx.dropped) return std::nullopt;
  const auto it = std::find(cfg_.context.begin(), cfg_.context.end(), cfg_.properties[static_cast<std::size_t>(i)]);
  return ctx.values.at(static_cast<std::size_t>(it - cfg_.context.begin()));
}

TrunkScores TwigsModel::trunk_scores(const StructureInput& s, const Conditioning& ctx, double t) const {
  const Index n = s.n();
  const double inv_sigma = 1.0 / schedule_.marginal(t).sigma;
  const Tensor temb = constant(time_embedding(t).replicate(n, 1));
  const Tensor h0 = concat_present({s.x, context_row(ctx, n), temb});

  // heads read the input next to every layer output (a skip path for the identity-like
  // score at large t, which neighbourhood averaging cannot express)
  std::vector<Tensor> layer_out{h0};
  Tensor h = h0;
  for (const GcnLayer& layer : trunk_.node_gcn) {
    h = gcn_forward(layer, h, s.norm_adj);
    layer_out.push_back(h);
  }
  TrunkScores out;
  out.sx = scale(trunk_.node_head(concat_cols(std::span<const Tensor>(layer_out))), inv_sigma);

  std::vector<Tensor> channels;
  channels.push_back(constant(s.adj));
  for (const Mat& m : s.supports) channels.push_back(constant(m));
  h = h0;
  for (const GmhLayer& layer : trunk_.gmh) {
    GmhOutput g = gmh_forward(layer, h, s.supports);
    h = g.nodes;
    for (Tensor& a : g.attention) channels.push_back(std::move(a));
    for (Tensor& a : g.affinity) channels.push_back(std::move(a));
  }
  const Tensor entries = trunk_.entry_mlp(stack_entries(std::span<const Tensor>(channels)));
  // Edge log-odds: the single-entry posterior under a fair-coin prior, (alpha/sigma^2)(a - alpha/2),
  // plus the learned correction. The score follows from E[A_0 | A_t] = sigmoid(logit).
  const auto k = schedule_.marginal(t);
  const double var = k.sigma * k.sigma;
  const Mat prior = ((k.alpha / var) * (s.adj.array() - 0.5 * k.alpha)).matrix();
  const Tensor edge_prob = sigmoid(add(symmetrize(reshape(entries, n, n)), constant(prior)));
  out.sa = mask(scale(sub(scale(edge_prob, k.alpha), constant(s.adj)), 1.0 / var), s.off_diagonal);
  return out;
}

StemScores TwigsModel::stem_scores(int i, const StructureInput& s, const Tensor& y_i, std::optional<double> y_c,
                                   bool ctx_dropped, double t) const {
  const StemNet& stem = stems_.at(static_cast<std::size_t>(i));
  const Index n = s.n();
  const double inv_sigma = 1.0 / schedule_.marginal(t).sigma;
  Tensor vc;
  if (stem.has_context) {
    if (ctx_dropped) {
      vc = broadcast_scalar(stem.null_context, n);
    } else {
      if (!y_c) throw ContractError("stem_scores: stem '" + cfg_.properties[static_cast<std::size_t>(i)] + "' needs a context value");
      vc = constant(Mat::Constant(n, 1, *y_c));
    }
  }
  const Tensor temb = constant(time_embedding(t).replicate(n, 1));
  Tensor h = concat_present({s.x, broadcast_scalar(y_i, n), vc, temb});
  std::vector<Tensor> layer_out{h};
  for (const GcnLayer& layer : stem.body) {
    h = gcn_forward(layer, h, s.norm_adj);
    layer_out.push_back(h);
  }
  const Tensor body = concat_cols(std::span<const Tensor>(layer_out));
  StemScores out;
  out.node = scale(stem.node_head(body), inv_sigma);
  out.prop = scale(stem.prop_head(mean_pool_rows(body)), inv_sigma);
  return out;
}

TrunkScores TwigsModel::total_structure_score(const StructureInput& s, const std::vector<double>& props,
                                              const Conditioning& ctx, double t) const {
  std::vector<Tensor> values;
  for (double v : props) values.push_back(Tensor::scalar(v));
  JointScores j = joint_scores(s, values, ctx, t);
  return {std::move(j.sx), std::move(j.sa)};
}

JointScores TwigsModel::joint_scores(const StructureInput& s, const std::vector<Tensor>& props,
                                     const Conditioning& ctx, double t) const {
  if (static_cast<int>(props.size()) != num_stems()) {
    throw DimensionError("total_structure_score: " + std::to_string(props.size()) + " property values for " +
                         std::to_string(num_stems()) + " stems");
  }
  TrunkScores trunk = trunk_scores(s, ctx, t);
  JointScores out{std::move(trunk.sx), std::move(trunk.sa), {}};
  for (int i = 0; i < num_stems(); ++i) {
    StemScores st = stem_scores(i, s, props[static_cast<std::size_t>(i)], stem_context(i, ctx), ctx.dropped, t);
    out.sx = add(out.sx, st.node);
    out.props.push_back(std::move(st.prop));
  }
  return out;
}

TwigsModel TwigsModel::clone() const { return from_checkpoint(to_checkpoint()); }

void TwigsModel::zero_stem_node_heads() {
  for (StemNet& stem : stems_) {
    for (Linear& l : stem.node_head.layers) {
      l.weight.mutable_value().setZero();
      l.bias.mutable_value().setZero();
    }
  }
}

Checkpoint TwigsModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = {{"model", cfg_.to_json()},
                 {"sde", {{"beta_min", schedule_.beta_min}, {"beta_max", schedule_.beta_max}, {"t_eps", schedule_.t_eps}}}};
  for (const NamedParam& p : named_parameters()) ckpt.tensors.emplace(p.path, p.tensor.value());
  return ckpt;
}

TwigsModel TwigsModel::from_checkpoint(const Checkpoint& ckpt) {
  TwigsModel model(ModelConfig::from_json(ckpt.config.at("model")), 0);
  if (ckpt.config.contains("sde")) {
    const auto& s = ckpt.config.at("sde");
    Schedule sched;
    sched.beta_min = s.value("beta_min", sched.beta_min);
    sched.beta_max = s.value("beta_max", sched.beta_max);
    sched.t_eps = s.value("t_eps", sched.t_eps);
    sched.validate();
    model.set_schedule(sched);
  }
  model.load_parameters(ckpt);
  return model;
}

void TwigsModel::load_parameters(const Checkpoint& ckpt) {
  for (NamedParam& p : named_parameters()) {
    const auto it = ckpt.tensors.find(p.path);
    if (it == ckpt.tensors.end()) throw ParseError("checkpoint lacks parameter '" + p.path + "'");
    if (it->second.rows() != p.tensor.rows() || it->second.cols() != p.tensor.cols()) {
      throw ParseError("checkpoint parameter '" + p.path + "' has shape " + shape_string(it->second) + ", expected " +
                       shape_string(p.tensor.value()));
    }
    p.tensor.mutable_value() = it->second;
  }
}

}  // namespace twigs
