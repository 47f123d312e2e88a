#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "twigs/graph.hpp"

namespace twigs {

// One object per line: {"n", "adj", "x", "props"}.
nlohmann::json to_json(const LabeledGraph& g);
LabeledGraph labeled_graph_from_json(const nlohmann::json& j);  // validates symmetry and shapes

void write_jsonl(const std::filesystem::path& path, const std::vector<LabeledGraph>& graphs);
std::vector<LabeledGraph> read_jsonl(const std::filesystem::path& path);

struct PropertyStats {
  double mean = 0.0;
  double std = 1.0;
};
using DatasetStats = std::map<std::string, PropertyStats>;

// Mean and population standard deviation per property over the graphs that define it.
DatasetStats compute_stats(const std::vector<LabeledGraph>& graphs);
nlohmann::json stats_to_json(const DatasetStats& stats);
DatasetStats stats_from_json(const nlohmann::json& j);

}  // namespace twigs
