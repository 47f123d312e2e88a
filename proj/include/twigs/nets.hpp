#pragma once

// Score networks for graph structure (trunk) and scalar graph properties (stems).
//
// Trunk: a GCN node-feature score conditioned on the context properties, and an
// adjacency score built from graph multi-head attention over adjacency-power supports.
// Stems: one GCN body per property with a node-shaped head (added to the structure
// score) and a pooled scalar head (the property score).
//
// Node and property heads predict -sigma_t * score. The adjacency head predicts edge
// log-odds on top of the fair-coin posterior and turns them into a score through
// E[A_0 | A_t]; at low noise this keeps entries pinned to {0, 1}, which an
// epsilon-predicting head cannot resolve. Every final layer starts at zero, so a fresh
// model has zero node and property scores and the fair-coin adjacency score.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "twigs/checkpoint.hpp"
#include "twigs/rng.hpp"
#include "twigs/sde.hpp"
#include "twigs/tensor.hpp"

namespace twigs {

struct ModelConfig {
  int feature_dim = 8;
  int hidden = 32;
  int gcn_layers = 3;
  int gmh_layers = 2;
  int heads = 4;
  int powers = 3;
  int time_dim = 4;
  int entry_hidden = 32;
  double support_threshold = 0.3;
  std::vector<std::string> properties;  // one stem each, in order
  std::vector<std::string> context;     // conditioning set, subset of properties for twigs models

  int context_dim() const { return static_cast<int>(context.size()); }
  bool in_context(const std::string& prop) const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct NamedParam {
  std::string path;
  Tensor tensor;
};

struct Linear {
  Tensor weight;  // d_in x d_out
  Tensor bias;    // 1 x d_out

  Linear() = default;
  Linear(Index d_in, Index d_out, Rng& rng, bool zero_init = false);
  Tensor operator()(const Tensor& h) const;
  void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// Linear layers with tanh between them, none after the last.
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(const std::vector<Index>& widths, Rng& rng, bool zero_last);
  Tensor operator()(const Tensor& h) const;
  void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// tanh(Â H W + b) with Â = D^{-1/2}(A + I)D^{-1/2}.
// 1 x dim row of sin/cos features of t at frequencies 50^(k/(m-1)), m = dim/2.
Mat sinusoidal_embedding(double t, int dim);

struct GcnLayer {
  Linear lin;

  GcnLayer() = default;
  GcnLayer(Index d_in, Index d_out, Rng& rng) : lin(d_in, d_out, rng) {}
  void collect(std::vector<NamedParam>& out, const std::string& prefix) const { lin.collect(out, prefix); }
};

// Normalized propagation matrix. Degrees are clamped below at 1 so noisy (possibly
// negative) weights never produce an undefined square root.
Mat gcn_normalize(const Mat& adj);

Tensor gcn_forward(const GcnLayer& layer, const Tensor& h, const Mat& norm_adj);

// Attention masks: support of A^p (p = 1..P) for the thresholded |A|, plus self loops.
std::vector<Mat> power_supports(const Mat& adj, int powers, double threshold);

struct GmhOutput {
  Tensor nodes;                   // n x d_out, undefined without an output projection
  std::vector<Tensor> attention;  // per power: head-mean attention, symmetrized
  std::vector<Tensor> affinity;   // per power: head-mean tanh(QK^T / sqrt(d_head)), symmetrized
};

struct GmhLayer {
  std::vector<Linear> qkv;  // per power: d_in x 3*d_hidden
  Linear out;               // P*d_hidden -> d_out; absent when d_out == 0
  int heads = 1;
  Index d_hidden = 0;

  GmhLayer() = default;
  GmhLayer(Index d_in, Index d_hidden, Index d_out, int heads, int powers, Rng& rng);
  void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

GmhOutput gmh_forward(const GmhLayer& layer, const Tensor& h, const std::vector<Mat>& supports);

struct TrunkNet {
  std::vector<GcnLayer> node_gcn;
  Mlp node_head;
  std::vector<GmhLayer> gmh;
  Mlp entry_mlp;
  Tensor null_context;  // 1 x |C|, used when the context is dropped

  void collect(std::vector<NamedParam>& out) const;
};

struct StemNet {
  std::vector<GcnLayer> body;
  Mlp node_head;
  Mlp prop_head;
  bool has_context = false;
  Tensor null_context;  // 1 x 1 when has_context

  void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// Per-forward structure inputs shared by every network.
struct StructureInput {
  Tensor x;                   // n x F, no gradient
  Mat adj;                    // n x n, symmetric, zero diagonal
  Mat norm_adj;               // gcn_normalize(adj)
  std::vector<Mat> supports;  // power_supports(adj)
  Mat off_diagonal;           // ones with zero diagonal

  Index n() const { return adj.rows(); }
};

StructureInput prepare_structure(const ModelConfig& cfg, const Mat& x, const Mat& adj);

// Context values in standardized units, ordered like ModelConfig::context.
struct Conditioning {
  std::vector<double> values;
  bool dropped = false;
};

struct TrunkScores {
  Tensor sx;  // n x F
  Tensor sa;  // n x n, symmetric, zero diagonal
};

struct StemScores {
  Tensor node;  // n x F
  Tensor prop;  // 1 x 1
};

// Total structure score together with every stem's property score, one stem pass each.
struct JointScores {
  Tensor sx;
  Tensor sa;
  std::vector<Tensor> props;
};

class TwigsModel {
 public:
  TwigsModel() = default;
  TwigsModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int num_stems() const { return static_cast<int>(stems_.size()); }
  const Schedule& schedule() const { return schedule_; }
  void set_schedule(const Schedule& s) { schedule_ = s; }

  std::vector<NamedParam> named_parameters() const;
  std::vector<Tensor> parameters() const;

  Mat time_embedding(double t) const;

  TrunkScores trunk_scores(const StructureInput& s, const Conditioning& ctx, double t) const;
  // y_i is the current (noisy) standardized property value; y_c the fixed context value
  // when property i is conditioned (ignored for stems without a context channel).
  StemScores stem_scores(int i, const StructureInput& s, const Tensor& y_i, std::optional<double> y_c, bool ctx_dropped,
                         double t) const;

  // Context value the given stem receives, if it has a context channel.
  std::optional<double> stem_context(int i, const Conditioning& ctx) const;

  // Trunk node score plus every stem's node head; adjacency score from the trunk only.
  TrunkScores total_structure_score(const StructureInput& s, const std::vector<double>& props, const Conditioning& ctx,
                                    double t) const;

  // Same as total_structure_score but property values may carry gradients and the
  // stems' property scores are returned as well.
  JointScores joint_scores(const StructureInput& s, const std::vector<Tensor>& props, const Conditioning& ctx,
                           double t) const;

  // Parameters are shared handles; copies of a TwigsModel alias them. clone() does not.
  TwigsModel clone() const;

  Checkpoint to_checkpoint() const;
  static TwigsModel from_checkpoint(const Checkpoint& ckpt);
  void load_parameters(const Checkpoint& ckpt);

  // Sets every parameter of the stems' node heads to zero (loop-guidance ablation).
  void zero_stem_node_heads();

 private:
  Tensor context_row(const Conditioning& ctx, Index n) const;

  ModelConfig cfg_;
  Schedule schedule_;
  TrunkNet trunk_;
  std::vector<StemNet> stems_;
};

}  // namespace twigs
