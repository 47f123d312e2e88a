#include "twigs/dataset_io.hpp"

#include <cmath>
#include <fstream>

namespace twigs {

nlohmann::json to_json(const LabeledGraph& g) {
  const Index n = g.graph.n();
  nlohmann::json adj = nlohmann::json::array();
  for (Index i = 0; i < n; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < n; ++j) row.push_back(static_cast<int>(std::lround(g.graph.adj(i, j))));
    adj.push_back(std::move(row));
  }
  nlohmann::json x = nlohmann::json::array();
  for (Index i = 0; i < g.graph.x.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < g.graph.x.cols(); ++j) row.push_back(g.graph.x(i, j));
    x.push_back(std::move(row));
  }
  return {{"n", n}, {"adj", std::move(adj)}, {"x", std::move(x)}, {"props", g.properties}};
}

LabeledGraph labeled_graph_from_json(const nlohmann::json& j) {
  const Index n = j.at("n").get<Index>();
  const auto& adj = j.at("adj");
  const auto& x = j.at("x");
  if (static_cast<Index>(adj.size()) != n || static_cast<Index>(x.size()) != n) {
    throw ParseError("row count does not match n = " + std::to_string(n));
  }
  LabeledGraph g;
  g.graph.adj.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = adj[static_cast<std::size_t>(i)];
    if (static_cast<Index>(row.size()) != n) throw ParseError("adjacency row " + std::to_string(i) + " has wrong length");
    for (Index k = 0; k < n; ++k) g.graph.adj(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  const Index f = n > 0 ? static_cast<Index>(x[0].size()) : 0;
  g.graph.x.resize(n, f);
  for (Index i = 0; i < n; ++i) {
    const auto& row = x[static_cast<std::size_t>(i)];
    if (static_cast<Index>(row.size()) != f) throw ParseError("feature row " + std::to_string(i) + " has wrong length");
    for (Index k = 0; k < f; ++k) g.graph.x(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  if (!is_binary_graph(g.graph.adj)) {
    throw ParseError("adjacency is not binary, symmetric and zero-diagonal");
  }
  if (j.contains("props")) {
    for (const auto& [name, value] : j.at("props").items()) {
      parse_property(name);
      const double v = value.get<double>();
      if (!std::isfinite(v)) throw ParseError("property '" + name + "' is not finite");
      g.properties.emplace(name, v);
    }
  }
  return g;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<LabeledGraph>& graphs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const LabeledGraph& g : graphs) out << to_json(g).dump() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<LabeledGraph> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<LabeledGraph> graphs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      graphs.push_back(labeled_graph_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return graphs;
}

DatasetStats compute_stats(const std::vector<LabeledGraph>& graphs) {
  std::map<std::string, std::vector<double>> values;
  for (const LabeledGraph& g : graphs) {
    for (const auto& [name, v] : g.properties) values[name].push_back(v);
  }
  DatasetStats stats;
  for (const auto& [name, vs] : values) {
    double m = 0.0;
    for (double v : vs) m += v;
    m /= static_cast<double>(vs.size());
    double var = 0.0;
    for (double v : vs) var += (v - m) * (v - m);
    var /= static_cast<double>(vs.size());
    stats[name] = PropertyStats{m, std::sqrt(var)};
  }
  return stats;
}

nlohmann::json stats_to_json(const DatasetStats& stats) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, s] : stats) j[name] = {{"mean", s.mean}, {"std", s.std}};
  return j;
}

DatasetStats stats_from_json(const nlohmann::json& j) {
  DatasetStats stats;
  for (const auto& [name, entry] : j.items()) {
    stats[name] = PropertyStats{entry.at("mean").get<double>(), entry.at("std").get<double>()};
  }
  return stats;
}

}  // namespace twigs
