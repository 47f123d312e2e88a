#pragma once

// Loop-guidance generation. Each step denoises the structure with the trunk score plus
// the stems' node heads, then denoises every property with its stem evaluated on the
// updated structure.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "twigs/dataset_io.hpp"
#include "twigs/graph.hpp"
#include "twigs/nets.hpp"
#include "twigs/rng.hpp"
#include "twigs/sde.hpp"

namespace twigs {

enum class SampleMode { Twigs, ClassifierFree, Unconditional };
enum class Sampler { Langevin, ReverseEm };

std::string_view sample_mode_name(SampleMode m);
SampleMode parse_sample_mode(std::string_view s);  // twigs | cfg | uncond
std::string_view sampler_name(Sampler s);
Sampler parse_sampler(std::string_view s);  // langevin | reverse_em

struct SampleConfig {
  int steps = 1000;
  Sampler sampler = Sampler::Langevin;
  SampleMode mode = SampleMode::Twigs;
  // Langevin step: with snr > 0, alpha = 2 (snr |z| / |s|)^2 per structure block and
  // 2 (snr sigma_t)^2 per property; with snr == 0, the constant langevin_alpha.
  double snr = 0.25;
  double langevin_alpha = 1e-4;
  double guidance = 1.0;          // classifier-free weight w
  bool clamp_context = false;     // hold conditioned properties at their targets
  bool trunk_only_structure = false;  // structure score without stem node heads
  double threshold = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
  static SampleConfig from_json(const nlohmann::json& j);
};

struct DiffusionState {
  Mat x;                      // n x F
  Mat adj;                    // n x n, symmetric, zero diagonal
  std::vector<double> props;  // one per stem, standardized units
  Conditioning context;       // fixed targets, standardized, ordered like ModelConfig::context
  double t = 1.0;
};

DiffusionState init_state(const ModelConfig& cfg, Index n, const Conditioning& context, Rng& rng);

// Adjacency each score was evaluated on; filled when requested.
struct StepTrace {
  Mat structure_adj;
  Mat property_adj;
};

// Step size for one variable block given its score and fresh noise.
double langevin_alpha(const SampleConfig& cfg, const Mat& score, const Mat& z, double sigma_t, bool block);

// One loop-guidance step at grid time t (dt is the grid spacing, used by reverse_em).
void twigs_step(const TwigsModel& model, DiffusionState& state, double t, double dt, const SampleConfig& cfg, Rng& rng,
                StepTrace* trace = nullptr);

// Classifier-free step on the structure only: (1 + w) s(C) - w s(null).
void cfg_step(const TwigsModel& model, DiffusionState& state, double t, double dt, const SampleConfig& cfg, Rng& rng);

// Structure step from the trunk with the context dropped; properties are not diffused.
void unconditional_step(const TwigsModel& model, DiffusionState& state, double t, double dt, const SampleConfig& cfg,
                        Rng& rng);

// Full chain for n nodes: init, every grid step, a noise-free half step, quantization.
Graph run_chain(const TwigsModel& model, Index n, const Conditioning& context, const SampleConfig& cfg, Rng& rng);

struct SampleRun {
  SampleConfig config;
  int n_samples = 64;
  std::uint64_t seed = 0;
  std::map<std::string, double> targets;  // raw units
  int jobs = 1;
};

// Conditioning in standardized units for the model's context set. Twigs and
// ClassifierFree need a target for every context property and accept no others;
// Unconditional ignores targets.
Conditioning make_conditioning(const TwigsModel& model, const DatasetStats& stats, const SampleRun& run);

std::uint64_t chain_seed(std::uint64_t seed, int chain);

// Samples with measured properties attached (undefined ones absent). Chain i uses
// chain_seed(run.seed, i) and draws its node count from node_counts.
std::vector<LabeledGraph> sample_graphs(const TwigsModel& model, const DatasetStats& stats,
                                        const std::map<int, int>& node_counts, const SampleRun& run);

}  // namespace twigs
