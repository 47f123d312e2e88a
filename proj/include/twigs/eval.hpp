#pragma once

// Evaluation of generated graphs: MAE against targets, binned KL between property
// distributions, Weisfeiler-Leman uniqueness/novelty, report files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "twigs/graph.hpp"

namespace twigs {

// Values of one property over the samples that define it.
std::vector<double> property_values(const std::vector<LabeledGraph>& samples, const std::string& prop);

// Mean |value - target| in raw units over samples with the property defined. Throws
// UndefinedMetric when no sample defines it.
double mae(const std::vector<LabeledGraph>& samples, double target, const std::string& prop);

// Histograms of p and q over their shared range, each smoothed by 1e-6 per bin and
// renormalized.
struct Histogram {
  std::vector<double> centers;
  std::vector<double> p;
  std::vector<double> q;
};

Histogram shared_histogram(const std::vector<double>& p_samples, const std::vector<double>& q_samples, int bins);

// KL(P || Q) of the shared histograms; 0 when every value in both lists is equal.
double hist_kl(const std::vector<double>& p_samples, const std::vector<double>& q_samples, int bins);

// Weisfeiler-Leman colour refinement from degrees; isomorphic graphs get equal keys.
std::uint64_t wl_hash(const Mat& adj, int rounds = 3);

// (distinct keys / samples, keys absent from the training set / samples)
std::pair<double, double> uniqueness_novelty(const std::vector<LabeledGraph>& samples,
                                             const std::vector<LabeledGraph>& train_set);

struct PropertyReport {
  std::optional<double> target;
  std::optional<double> mae;  // set when a target is given
  double kl = 0.0;            // KL(reference || generated); reference is the target point or the training set
  int excluded = 0;           // samples where the property is undefined
  Histogram histogram;
};

struct EvalReport {
  std::map<std::string, PropertyReport> properties;
  double uniqueness = 0.0;
  double novelty = 0.0;
  int n_samples = 0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Evaluates every property in props. With a target, MAE is reported and the KL
// reference is a point mass at the target; otherwise the reference is the training set.
EvalReport evaluate(const std::vector<LabeledGraph>& samples, const std::vector<LabeledGraph>& train_set,
                    const std::vector<std::string>& props, const std::map<std::string, double>& targets,
                    int bins = 20);

// Writes path (JSON) and, next to it, <stem>_<property>_hist.csv with bin_center,p,q.
void emit_report(const EvalReport& report, const std::filesystem::path& path);

std::string format_summary(const EvalReport& report);

}  // namespace twigs
