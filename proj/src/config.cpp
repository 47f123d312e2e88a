#include "twigs/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace twigs {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& j, const std::string& section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

json section_or_empty(const json& j, const char* name) { return j.contains(name) ? j.at(name) : json::object(); }

}  // namespace

json RunConfig::to_json() const {
  json model_j = model.to_json();
  model_j.erase("properties");
  model_j.erase("context");
  model_j.erase("feature_dim");
  json train_j = train.to_json();
  train_j.erase("seed");
  json targets_j = json::object();
  for (const auto& [k, v] : targets) targets_j[k] = v;
  return {{"seed", seed},
          {"paths", {{"dataset", paths.dataset}, {"stats", paths.stats}, {"checkpoint", paths.checkpoint},
                     {"out_dir", paths.out_dir}}},
          {"data", {{"n_graphs", n_graphs}, {"n_min", data.n_min}, {"n_max", data.n_max},
                    {"p_intra_min", data.p_intra_min}, {"p_intra_max", data.p_intra_max},
                    {"p_inter_min", data.p_inter_min}, {"p_inter_max", data.p_inter_max},
                    {"max_retries", data.max_retries}}},
          {"sde", {{"beta_min", sde.beta_min}, {"beta_max", sde.beta_max}, {"t_eps", sde.t_eps},
                   {"steps", sample.steps}, {"langevin_alpha", sample.langevin_alpha}, {"snr", sample.snr},
                   {"sampler", sampler_name(sample.sampler)}}},
          {"model", model_j},
          {"train", train_j},
          {"sample", {{"mode", sample_mode_name(sample.mode)}, {"n_samples", n_samples}, {"guidance", sample.guidance},
                      {"clamp_context", sample.clamp_context}, {"threshold", sample.threshold}, {"jobs", jobs},
                      {"targets", targets_j}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j, "", {"seed", "paths", "data", "sde", "model", "train", "sample"});
  RunConfig c;
  read(j, "", "seed", c.seed);

  const json p = section_or_empty(j, "paths");
  check_keys(p, "paths", {"dataset", "stats", "checkpoint", "out_dir"});
  read(p, "paths", "dataset", c.paths.dataset);
  read(p, "paths", "stats", c.paths.stats);
  read(p, "paths", "checkpoint", c.paths.checkpoint);
  read(p, "paths", "out_dir", c.paths.out_dir);

  const json d = section_or_empty(j, "data");
  check_keys(d, "data", {"n_graphs", "n_min", "n_max", "p_intra_min", "p_intra_max", "p_inter_min", "p_inter_max",
                         "max_retries"});
  read(d, "data", "n_graphs", c.n_graphs);
  read(d, "data", "n_min", c.data.n_min);
  read(d, "data", "n_max", c.data.n_max);
  read(d, "data", "p_intra_min", c.data.p_intra_min);
  read(d, "data", "p_intra_max", c.data.p_intra_max);
  read(d, "data", "p_inter_min", c.data.p_inter_min);
  read(d, "data", "p_inter_max", c.data.p_inter_max);
  read(d, "data", "max_retries", c.data.max_retries);

  const json s = section_or_empty(j, "sde");
  check_keys(s, "sde", {"beta_min", "beta_max", "t_eps", "steps", "langevin_alpha", "snr", "sampler"});
  read(s, "sde", "beta_min", c.sde.beta_min);
  read(s, "sde", "beta_max", c.sde.beta_max);
  read(s, "sde", "t_eps", c.sde.t_eps);
  read(s, "sde", "steps", c.sample.steps);
  read(s, "sde", "langevin_alpha", c.sample.langevin_alpha);
  read(s, "sde", "snr", c.sample.snr);
  std::string sampler(sampler_name(c.sample.sampler));
  read(s, "sde", "sampler", sampler);

  const json m = section_or_empty(j, "model");
  check_keys(m, "model", {"hidden", "gcn_layers", "gmh_layers", "heads", "powers", "time_dim", "entry_hidden",
                          "support_threshold"});
  read(m, "model", "hidden", c.model.hidden);
  read(m, "model", "gcn_layers", c.model.gcn_layers);
  read(m, "model", "gmh_layers", c.model.gmh_layers);
  read(m, "model", "heads", c.model.heads);
  read(m, "model", "powers", c.model.powers);
  read(m, "model", "time_dim", c.model.time_dim);
  read(m, "model", "entry_hidden", c.model.entry_hidden);
  read(m, "model", "support_threshold", c.model.support_threshold);

  const json t = section_or_empty(j, "train");
  check_keys(t, "train", {"iterations", "batch_size", "lr", "w_x", "w_a", "w_prop", "context_dropout", "mode",
                          "properties", "context", "checkpoint_every"});
  read(t, "train", "iterations", c.train.iterations);
  read(t, "train", "batch_size", c.train.batch_size);
  read(t, "train", "lr", c.train.lr);
  read(t, "train", "w_x", c.train.w_x);
  read(t, "train", "w_a", c.train.w_a);
  read(t, "train", "w_prop", c.train.w_prop);
  read(t, "train", "context_dropout", c.train.context_dropout);
  std::string train_mode(train_mode_name(c.train.mode));
  read(t, "train", "mode", train_mode);
  read(t, "train", "properties", c.train.properties);
  read(t, "train", "context", c.train.context);
  read(t, "train", "checkpoint_every", c.train.checkpoint_every);

  const json sa = section_or_empty(j, "sample");
  check_keys(sa, "sample", {"mode", "n_samples", "guidance", "clamp_context", "threshold", "jobs", "targets"});
  std::string sample_mode(sample_mode_name(c.sample.mode));
  read(sa, "sample", "mode", sample_mode);
  read(sa, "sample", "n_samples", c.n_samples);
  read(sa, "sample", "guidance", c.sample.guidance);
  read(sa, "sample", "clamp_context", c.sample.clamp_context);
  read(sa, "sample", "threshold", c.sample.threshold);
  read(sa, "sample", "jobs", c.jobs);
  read(sa, "sample", "targets", c.targets);

  try {
    c.sample.sampler = parse_sampler(sampler);
    c.train.mode = parse_train_mode(train_mode);
    c.sample.mode = parse_sample_mode(sample_mode);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  c.train.seed = c.seed;
  c.validate();
  return c;
}

void RunConfig::validate() const {
  try {
    if (n_graphs < 0) throw ContractError("data.n_graphs must be non-negative");
    if (data.n_min < 2 || data.n_max < data.n_min) throw ContractError("data node range must satisfy 2 <= n_min <= n_max");
    if (!(0 <= data.p_inter_min && data.p_inter_min <= data.p_inter_max && data.p_intra_min <= data.p_intra_max &&
          data.p_intra_max <= 1 && data.p_inter_max < data.p_intra_min)) {
      throw ContractError("data edge probabilities must satisfy 0 <= p_inter < p_intra <= 1");
    }
    sde.validate();
    if (!(sde.beta_min > 0)) throw ContractError("sde.beta_min must be positive");
    train.validate();
    sample.validate();
    if (n_samples < 0) throw ContractError("sample.n_samples must be non-negative");
    if (jobs < 1) throw ContractError("sample.jobs must be at least 1");
    for (const auto& [k, v] : targets) parse_property(k);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

std::string stats_path_for(const RunConfig& cfg) {
  if (!cfg.paths.stats.empty()) return cfg.paths.stats;
  if (cfg.paths.dataset.empty()) throw ConfigError("paths.dataset is not set");
  return cfg.paths.dataset + ".stats.json";
}

std::string config_hash(const json& resolved) {
  // FNV-1a over the canonical dump (object keys are sorted by nlohmann::json)
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : resolved.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace twigs
