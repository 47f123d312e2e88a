#pragma once

// Run configuration shared by every subcommand. JSON with one object per section;
// unknown keys are rejected so typos fail loudly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "twigs/graph.hpp"
#include "twigs/nets.hpp"
#include "twigs/sample.hpp"
#include "twigs/sde.hpp"
#include "twigs/train.hpp"

namespace twigs {

// Invalid configuration or command line (exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunPaths {
  std::string dataset;     // JSONL of labeled graphs
  std::string stats;       // stats sidecar; defaults to <dataset>.stats.json
  std::string checkpoint;  // model checkpoint JSON
  std::string out_dir;     // samples, manifests, reports, loss logs
};

struct RunConfig {
  std::uint64_t seed = 0;
  RunPaths paths;

  int n_graphs = 500;
  CommunityConfig data;

  Schedule sde;
  ModelConfig model;  // properties and context come from the train section
  TrainConfig train;  // seed comes from the top level

  SampleConfig sample;  // steps, snr, langevin_alpha and sampler live in the sde section
  int n_samples = 64;
  int jobs = 1;
  std::map<std::string, double> targets;  // raw units

  nlohmann::json to_json() const;
  // Throws ConfigError naming the first unknown or ill-typed key.
  static RunConfig from_json(const nlohmann::json& j);
  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

std::string stats_path_for(const RunConfig& cfg);

// Stable hash of the resolved configuration, for manifests.
std::string config_hash(const nlohmann::json& resolved);

}  // namespace twigs
