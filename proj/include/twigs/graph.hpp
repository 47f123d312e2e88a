#pragma once

// Graph data model and exact structural property extractors.
//
// Extractors take any Eigen expression for a binary symmetric adjacency with zero
// diagonal.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "twigs/errors.hpp"
#include "twigs/rng.hpp"
#include "twigs/tensor.hpp"

namespace twigs {

inline constexpr int kDegreeBuckets = 8;  // degrees 0..6 and >= 7

struct Graph {
  Mat x;    // n x F node features
  Mat adj;  // n x n, symmetric, zero diagonal

  Index n() const { return adj.rows(); }
};

enum class PropertyKind { Density, Clustering, Assortativity, Transitivity };

inline constexpr std::array<PropertyKind, 4> kAllProperties = {
    PropertyKind::Density, PropertyKind::Clustering, PropertyKind::Assortativity,
    PropertyKind::Transitivity};

std::string_view property_name(PropertyKind kind);
PropertyKind parse_property(std::string_view name);  // throws ContractError on unknown names

struct LabeledGraph {
  Graph graph;
  std::map<std::string, double> properties;  // keyed by property_name()
};

// --- validation ----------------------------------------------------------------

template <typename Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& a, double tol = 1e-12) {
  return a.rows() == a.cols() && (a - a.transpose()).cwiseAbs().maxCoeff() <= tol;
}

template <typename Derived>
bool is_binary_graph(const Eigen::MatrixBase<Derived>& a) {
  if (a.rows() != a.cols()) return false;
  for (Index i = 0; i < a.rows(); ++i) {
    if (a(i, i) != 0.0) return false;
    for (Index j = 0; j < a.cols(); ++j) {
      const double v = a(i, j);
      if ((v != 0.0 && v != 1.0) || v != a(j, i)) return false;
    }
  }
  return true;
}

template <typename Derived>
void require_binary_graph(const Eigen::MatrixBase<Derived>& a, const char* op) {
  if (!is_binary_graph(a)) {
    throw ContractError(std::string(op) + ": adjacency must be binary, symmetric, zero-diagonal");
  }
}

template <typename Derived>
Eigen::VectorXd degrees(const Eigen::MatrixBase<Derived>& a) {
  return a.rowwise().sum();
}

template <typename Derived>
double edge_count(const Eigen::MatrixBase<Derived>& a) {
  return a.sum() / 2.0;
}

// --- properties ----------------------------------------------------------------

template <typename Derived>
double density(const Eigen::MatrixBase<Derived>& a) {
  require_binary_graph(a, "density");
  const double n = static_cast<double>(a.rows());
  if (a.rows() < 2) throw ContractError("density: degenerate graph with n < 2");
  return 2.0 * edge_count(a) / (n * (n - 1.0));
}

// Mean local clustering; c_v = 0 when deg(v) < 2.
template <typename Derived>
double avg_clustering(const Eigen::MatrixBase<Derived>& a) {
  require_binary_graph(a, "avg_clustering");
  if (a.rows() < 1) throw ContractError("avg_clustering: empty graph");
  const Mat adj = a;
  const Mat a2 = adj * adj;
  const Eigen::VectorXd deg = adj.rowwise().sum();
  double total = 0.0;
  for (Index v = 0; v < adj.rows(); ++v) {
    if (deg(v) < 2.0) continue;
    // (A^3)_vv = 2 * triangles through v
    const double closed = adj.row(v).dot(a2.col(v)) / 2.0;
    total += closed / (deg(v) * (deg(v) - 1.0) / 2.0);
  }
  return total / static_cast<double>(adj.rows());
}

// 3 * triangles / triads. Throws UndefinedMetric when the graph has no triad.
template <typename Derived>
double transitivity(const Eigen::MatrixBase<Derived>& a) {
  require_binary_graph(a, "transitivity");
  const Mat adj = a;
  const Eigen::VectorXd deg = adj.rowwise().sum();
  const double triads = (deg.array() * (deg.array() - 1.0) / 2.0).sum();
  if (triads == 0.0) throw UndefinedMetric("transitivity: graph has no triads");
  const double triangles = (adj * adj).cwiseProduct(adj).sum() / 6.0;
  return 3.0 * triangles / triads;
}

// Pearson correlation of endpoint degrees over both orientations of every edge.
// Throws UndefinedMetric with no edges or zero endpoint-degree variance.
template <typename Derived>
double assortativity(const Eigen::MatrixBase<Derived>& a) {
  require_binary_graph(a, "assortativity");
  const Mat adj = a;
  const Eigen::VectorXd deg = adj.rowwise().sum();
  const double m2 = adj.sum();  // ordered edge count
  if (m2 == 0.0) throw UndefinedMetric("assortativity: graph has no edges");
  // Each orientation contributes deg(u) to the first moment at u: sum_u deg(u)^2.
  const double s1 = deg.array().square().sum() / m2;
  const double s2 = deg.array().cube().sum() / m2;
  const double cross = deg.dot(adj * deg) / m2;
  const double var = s2 - s1 * s1;
  if (var <= 1e-12 * std::max(1.0, s2)) throw UndefinedMetric("assortativity: zero degree variance");
  return (cross - s1 * s1) / var;
}

double property_value(PropertyKind kind, const Mat& adj);
// All four properties; undefined ones are absent.
std::map<std::string, double> measure_properties(const Mat& adj);

// --- construction --------------------------------------------------------------

// Symmetrize by averaging, threshold, zero the diagonal.
Mat quantize_adjacency(const Mat& adj, double threshold = 0.5);
Graph quantize(const Graph& g, double threshold = 0.5);

// One-hot degree buckets, n x kDegreeBuckets.
Mat degree_features(const Mat& adj);

Graph make_graph(const Mat& binary_adj);

// Two-community graph with fixed n; the first n/2 nodes form community 0.
Graph draw_community_graph(Rng& rng, int n, double p_intra, double p_inter);

// Two-community graph with all four properties defined and attached. Resamples up to
// max_retries times; throws ContractError when every attempt has an undefined property.
LabeledGraph gen_community_small(Rng& rng, std::array<int, 2> n_range, double p_intra, double p_inter,
                                 int max_retries = 100);

// Dataset generator: per-graph edge probabilities drawn uniformly from the given ranges.
struct CommunityConfig {
  int n_min = 12;
  int n_max = 20;
  double p_intra_min = 0.35;
  double p_intra_max = 1.0;
  double p_inter_min = 0.02;
  double p_inter_max = 0.12;
  int max_retries = 100;
};

LabeledGraph sample_community_graph(Rng& rng, const CommunityConfig& cfg);
std::vector<LabeledGraph> gen_dataset(Rng& rng, const CommunityConfig& cfg, int count);

// Relabel nodes: node i of the result is node perm[i] of g.
Graph permute(const Graph& g, const std::vector<Index>& perm);
Mat permute_rows(const Mat& m, const std::vector<Index>& perm);
Mat permute_both(const Mat& m, const std::vector<Index>& perm);
std::vector<Index> random_permutation(Rng& rng, Index n);

}  // namespace twigs
