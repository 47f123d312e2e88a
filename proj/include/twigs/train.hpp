#pragma once

// Joint denoising score matching over the trunk and stem networks.
//
// One t per batch. Structure and every property are perturbed independently with the
// VP kernel; each squared error is weighted by sigma_t^2, so a model that outputs zero
// scores has expected loss w_X + w_A + k * w_prop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "twigs/adam.hpp"
#include "twigs/dataset_io.hpp"
#include "twigs/graph.hpp"
#include "twigs/nets.hpp"
#include "twigs/rng.hpp"

namespace twigs {

enum class TrainMode { Twigs, ClassifierFree };

std::string_view train_mode_name(TrainMode m);
TrainMode parse_train_mode(std::string_view s);

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 32;
  double lr = 1e-3;
  double w_x = 1.0;
  double w_a = 1.0;
  double w_prop = 1.0;
  double context_dropout = 0.1;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Twigs;
  std::vector<std::string> properties;  // one stem each (ignored in ClassifierFree mode)
  std::vector<std::string> context;     // conditioning set C
  int checkpoint_every = 500;           // 0 disables periodic checkpoints

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Network configuration implied by the training mode: ClassifierFree has no stems and
// takes C as trunk context.
ModelConfig model_config_for(const TrainConfig& cfg, ModelConfig base = {});

struct LossTerms {
  Tensor total;
  double x = 0.0;
  double a = 0.0;
  double prop = 0.0;
};

// Standardized property values the networks see.
double standardize(const DatasetStats& stats, const std::string& prop, double raw);
double destandardize(const DatasetStats& stats, const std::string& prop, double z);

// Everything random about one graph's loss term.
struct GraphNoise {
  Mat x;                      // n x F
  Mat a;                      // n x n, symmetric, zero diagonal
  std::vector<double> props;  // one per stem
  bool context_dropped = false;
};

GraphNoise draw_noise(const LabeledGraph& g, int stems, double context_dropout, Rng& rng);

LossTerms dsm_loss_with_noise(const TwigsModel& model, const std::vector<const LabeledGraph*>& batch, double t,
                              const std::vector<GraphNoise>& noise, const TrainConfig& cfg, const DatasetStats& stats);

// Batch DSM objective at time t. Noise and context dropout come from rng.
LossTerms dsm_loss(const TwigsModel& model, const std::vector<const LabeledGraph*>& batch, double t, Rng& rng,
                   const TrainConfig& cfg, const DatasetStats& stats);

struct LossRecord {
  int iteration = 0;
  double t = 0.0;
  double x = 0.0;
  double a = 0.0;
  double prop = 0.0;
  double total = 0.0;
};

struct TrainState {
  TwigsModel model;
  AdamState adam;
  int iteration = 0;
  std::vector<LossRecord> history;
  Rng rng;
  DatasetStats stats;
  std::map<int, int> node_counts;  // training node-count histogram, used for sampling
  TrainConfig config;

  Checkpoint to_checkpoint() const;
  static TrainState from_checkpoint(const Checkpoint& ckpt);
};

// Fresh state: model built from cfg, stats and node counts taken from the dataset.
TrainState init_training(const std::vector<LabeledGraph>& dataset, const TrainConfig& cfg,
                         const ModelConfig& base = {});

struct TrainHooks {
  std::optional<std::filesystem::path> checkpoint_path;  // periodic and final checkpoint
  std::optional<std::filesystem::path> loss_csv;
  std::function<void(const LossRecord&)> on_iteration;
};

// Runs until state.iteration == state.config.iterations. Throws NumericError with the
// iteration, t and loss terms when the loss stops being finite.
void train(TrainState& state, const std::vector<LabeledGraph>& dataset, const TrainHooks& hooks = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history);

double mean_loss(const std::vector<LossRecord>& history, std::size_t begin, std::size_t end);

// --- Gaussian sanity check ----------------------------------------------------------

struct GaussianSanityConfig {
  Eigen::Vector2d mu{2.0, 0.0};
  Eigen::Matrix2d cov = 0.25 * Eigen::Matrix2d::Identity();
  int iterations = 3000;
  int batch_size = 128;
  int hidden = 64;
  double lr = 2e-3;
  std::uint64_t seed = 0;
};

// Plain MLP on (x, time embedding); the score is its output divided by sigma_t.
struct GaussianScoreNet {
  Mlp mlp;
  Schedule schedule;
  int time_dim = 8;

  Eigen::Vector2d operator()(const Eigen::Vector2d& x, double t) const;
  // sigma_t * score for each row of x at the matching time.
  Tensor scaled(const Mat& x, const Eigen::VectorXd& t) const;
  std::vector<Tensor> parameters() const;
};

Eigen::Vector2d gaussian_score(const GaussianSanityConfig& cfg, const Schedule& sched, const Eigen::Vector2d& x,
                               double t);

GaussianScoreNet train_gaussian_sanity(const GaussianSanityConfig& cfg);

// Mean cosine similarity between learned and analytic scores over four times and, at
// each, a 5x5 grid around the perturbed marginal's mean, spaced one std apart.
double gaussian_score_agreement(const GaussianSanityConfig& cfg, const GaussianScoreNet& net);

}  // namespace twigs
