#include "twigs/graph.hpp"

#include <algorithm>
#include <numeric>

namespace twigs {

std::string_view property_name(PropertyKind kind) {
  switch (kind) {
    case PropertyKind::Density:
      return "density";
    case PropertyKind::Clustering:
      return "clustering";
    case PropertyKind::Assortativity:
      return "assortativity";
    case PropertyKind::Transitivity:
      return "transitivity";
  }
  return "?";
}

PropertyKind parse_property(std::string_view name) {
  for (PropertyKind k : kAllProperties) {
    if (property_name(k) == name) return k;
  }
  throw ContractError("unknown property '" + std::string(name) +
                      "' (expected density, clustering, assortativity or transitivity)");
}

double property_value(PropertyKind kind, const Mat& adj) {
  switch (kind) {
    case PropertyKind::Density:
      return density(adj);
    case PropertyKind::Clustering:
      return avg_clustering(adj);
    case PropertyKind::Assortativity:
      return assortativity(adj);
    case PropertyKind::Transitivity:
      return transitivity(adj);
  }
  throw ContractError("property_value: bad kind");
}

std::map<std::string, double> measure_properties(const Mat& adj) {
  std::map<std::string, double> out;
  for (PropertyKind k : kAllProperties) {
    try {
      out.emplace(std::string(property_name(k)), property_value(k, adj));
    } catch (const UndefinedMetric&) {
    }
  }
  return out;
}

Mat quantize_adjacency(const Mat& adj, double threshold) {
  if (adj.rows() != adj.cols()) throw DimensionError("quantize: non-square adjacency " + shape_string(adj));
  const Mat sym = 0.5 * (adj + adj.transpose());
  Mat out = (sym.array() > threshold).cast<double>();
  out.diagonal().setZero();
  return out;
}

Graph quantize(const Graph& g, double threshold) {
  Graph out;
  out.adj = quantize_adjacency(g.adj, threshold);
  out.x = g.x;
  return out;
}

Mat degree_features(const Mat& adj) {
  Mat x = Mat::Zero(adj.rows(), kDegreeBuckets);
  for (Index i = 0; i < adj.rows(); ++i) {
    const auto d = static_cast<Index>(std::lround(adj.row(i).sum()));
    x(i, std::min<Index>(d, kDegreeBuckets - 1)) = 1.0;
  }
  return x;
}

Graph make_graph(const Mat& binary_adj) {
  require_binary_graph(binary_adj, "make_graph");
  return Graph{degree_features(binary_adj), binary_adj};
}

Graph draw_community_graph(Rng& rng, int n, double p_intra, double p_inter) {
  if (!(0.0 <= p_inter && p_inter <= 1.0 && 0.0 <= p_intra && p_intra <= 1.0)) {
    throw ContractError("draw_community_graph: probabilities must lie in [0,1]");
  }
  if (n < 2) throw ContractError("draw_community_graph: n must be >= 2");
  const int half = n / 2;
  Mat adj = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool same = (i < half) == (j < half);
      if (rng.bernoulli(same ? p_intra : p_inter)) adj(i, j) = adj(j, i) = 1.0;
    }
  }
  return make_graph(adj);
}

LabeledGraph gen_community_small(Rng& rng, std::array<int, 2> n_range, double p_intra, double p_inter,
                                 int max_retries) {
  if (!(0.0 <= p_inter && p_inter < p_intra && p_intra <= 1.0)) {
    throw ContractError("gen_community_small: need 0 <= p_inter < p_intra <= 1");
  }
  if (n_range[0] < 2 || n_range[1] < n_range[0]) throw ContractError("gen_community_small: bad node range");
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const int n = rng.uniform_int(n_range[0], n_range[1]);
    Graph g = draw_community_graph(rng, n, p_intra, p_inter);
    auto props = measure_properties(g.adj);
    if (props.size() == kAllProperties.size()) return LabeledGraph{std::move(g), std::move(props)};
  }
  throw ContractError("gen_community_small: every property defined on none of " +
                      std::to_string(max_retries + 1) + " attempts");
}

LabeledGraph sample_community_graph(Rng& rng, const CommunityConfig& cfg) {
  const double p_intra = cfg.p_intra_min + (cfg.p_intra_max - cfg.p_intra_min) * rng.uniform();
  const double p_inter = cfg.p_inter_min + (cfg.p_inter_max - cfg.p_inter_min) * rng.uniform();
  return gen_community_small(rng, {cfg.n_min, cfg.n_max}, p_intra, p_inter, cfg.max_retries);
}

std::vector<LabeledGraph> gen_dataset(Rng& rng, const CommunityConfig& cfg, int count) {
  std::vector<LabeledGraph> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(sample_community_graph(rng, cfg));
  return out;
}

Mat permute_rows(const Mat& m, const std::vector<Index>& perm) {
  Mat out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

Mat permute_both(const Mat& m, const std::vector<Index>& perm) {
  Mat out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      out(i, j) = m(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

Graph permute(const Graph& g, const std::vector<Index>& perm) {
  if (static_cast<Index>(perm.size()) != g.n()) throw DimensionError("permute: permutation size mismatch");
  return Graph{permute_rows(g.x, perm), permute_both(g.adj, perm)};
}

std::vector<Index> random_permutation(Rng& rng, Index n) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  return perm;
}

}  // namespace twigs
