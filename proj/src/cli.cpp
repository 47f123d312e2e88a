#include "twigs/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "twigs/checkpoint.hpp"
#include "twigs/config.hpp"
#include "twigs/dataset_io.hpp"
#include "twigs/eval.hpp"
#include "twigs/selfcheck.hpp"

namespace twigs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by every subcommand. Unset optionals leave the config value alone.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dataset, stats, checkpoint, out_dir, out, samples;
  std::optional<int> n_graphs, iterations, batch_size, n_samples, jobs, steps, bins;
  std::optional<double> lr, snr, guidance, tolerance_scale;
  std::optional<std::string> train_mode, sample_mode, sampler;
  std::vector<std::string> properties, context, targets;
  bool resume = false;
  bool clamp_context = false;
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::map<std::string, double> parse_targets(const std::vector<std::string>& specs) {
  std::map<std::string, double> out;
  for (const std::string& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("target '" + spec + "' is not of the form name=value");
    const std::string name = spec.substr(0, eq);
    try {
      parse_property(name);
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(spec.substr(eq + 1), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != spec.size() - eq - 1) throw ConfigError("target '" + spec + "' has a non-numeric value");
    out[name] = value;
  }
  return out;
}

// Config file (or the resolved config inside a sample manifest), then flags.
RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) {
    const json j = read_json(f.config);
    c = RunConfig::from_json(j.contains("resolved_config") ? j.at("resolved_config") : j);
  }
  if (f.seed) c.seed = *f.seed;
  if (f.dataset) c.paths.dataset = *f.dataset;
  if (f.stats) c.paths.stats = *f.stats;
  if (f.checkpoint) c.paths.checkpoint = *f.checkpoint;
  if (f.out_dir) c.paths.out_dir = *f.out_dir;
  if (f.n_graphs) c.n_graphs = *f.n_graphs;
  if (f.iterations) c.train.iterations = *f.iterations;
  if (f.batch_size) c.train.batch_size = *f.batch_size;
  if (f.lr) c.train.lr = *f.lr;
  if (!f.properties.empty()) c.train.properties = f.properties;
  if (!f.context.empty()) c.train.context = f.context;
  if (f.n_samples) c.n_samples = *f.n_samples;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.steps) c.sample.steps = *f.steps;
  if (f.snr) c.sample.snr = *f.snr;
  if (f.guidance) c.sample.guidance = *f.guidance;
  if (f.clamp_context) c.sample.clamp_context = true;
  try {
    if (f.train_mode) c.train.mode = parse_train_mode(*f.train_mode);
    if (f.sample_mode) c.sample.mode = parse_sample_mode(*f.sample_mode);
    if (f.sampler) c.sample.sampler = parse_sampler(*f.sampler);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  for (const auto& [k, v] : parse_targets(f.targets)) c.targets[k] = v;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

const std::string& require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError("paths." + std::string(key) + " is not set");
  return value;
}

fs::path out_dir_or(const RunConfig& c, const fs::path& fallback) {
  return c.paths.out_dir.empty() ? fallback : fs::path(c.paths.out_dir);
}

int cmd_gen_data(const Flags& f, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve(f);
  const fs::path dataset = require_path(c.paths.dataset, "dataset");
  Rng rng(c.seed);
  const auto graphs = gen_dataset(rng, c.data, c.n_graphs);
  if (dataset.has_parent_path()) fs::create_directories(dataset.parent_path());
  write_jsonl(dataset, graphs);
  if (graphs.empty()) {
    err << "error: dataset " << dataset.string() << " is empty; property statistics are undefined\n";
    return kExitRuntime;
  }
  const fs::path stats = stats_path_for(c);
  write_json(stats, stats_to_json(compute_stats(graphs)));
  out << "wrote " << graphs.size() << " graphs to " << dataset.string() << " and statistics to " << stats.string()
      << '\n';
  return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out, std::ostream&) {
  const RunConfig c = resolve(f);
  const fs::path dataset_path = require_path(c.paths.dataset, "dataset");
  const fs::path ckpt = require_path(c.paths.checkpoint, "checkpoint");
  const auto dataset = read_jsonl(dataset_path);

  TrainState state;
  if (f.resume && fs::exists(ckpt)) {
    state = TrainState::from_checkpoint(read_checkpoint(ckpt));
    if (c.train.iterations < state.iteration) {
      throw ConfigError("checkpoint is at iteration " + std::to_string(state.iteration) + ", beyond train.iterations " +
                        std::to_string(c.train.iterations));
    }
    state.config.iterations = c.train.iterations;
    out << "resuming from " << ckpt.string() << " at iteration " << state.iteration << '\n';
  } else {
    state = init_training(dataset, c.train, c.model);
  }

  const fs::path loss_csv = out_dir_or(c, ckpt.parent_path()) / "loss.csv";
  if (loss_csv.has_parent_path()) fs::create_directories(loss_csv.parent_path());
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  const int total = state.config.iterations;
  const int every = std::max(1, total / 10);
  TrainHooks hooks;
  hooks.checkpoint_path = ckpt;
  hooks.loss_csv = loss_csv;
  hooks.on_iteration = [&](const LossRecord& r) {
    const int done = r.iteration + 1;
    if (done % every == 0 || done == total) {
      out << "iteration " << done << "/" << total << "  loss " << r.total << "  (X " << r.x << ", A " << r.a
          << ", prop " << r.prop << ")\n";
    }
  };
  train(state, dataset, hooks);
  out << "checkpoint " << ckpt.string() << ", loss log " << loss_csv.string() << '\n';
  return kExitOk;
}

int cmd_sample(const Flags& f, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve(f);
  const fs::path ckpt = require_path(c.paths.checkpoint, "checkpoint");
  fs::path samples_path;
  if (f.out) {
    samples_path = *f.out;
  } else {
    samples_path = fs::path(require_path(c.paths.out_dir, "out_dir")) / "samples.jsonl";
  }
  if (c.sample.mode == SampleMode::Unconditional && !c.targets.empty()) {
    err << "warning: --mode uncond ignores the given targets\n";
  }

  const TrainState state = TrainState::from_checkpoint(read_checkpoint(ckpt));
  SampleRun run;
  run.config = c.sample;
  run.n_samples = c.n_samples;
  run.seed = c.seed;
  run.targets = c.targets;
  run.jobs = c.jobs;
  try {
    make_conditioning(state.model, state.stats, run);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }

  const auto start = std::chrono::steady_clock::now();
  const auto graphs = sample_graphs(state.model, state.stats, state.node_counts, run);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (samples_path.has_parent_path()) fs::create_directories(samples_path.parent_path());
  write_jsonl(samples_path, graphs);
  const json resolved = c.to_json();
  const fs::path manifest = fs::path(samples_path).replace_extension(".manifest.json");
  write_json(manifest, {{"seed", c.seed},
                        {"config_hash", config_hash(resolved)},
                        {"checkpoint", ckpt.string()},
                        {"samples", samples_path.string()},
                        {"n_samples", graphs.size()},
                        {"wall_time_s", wall},
                        {"resolved_config", resolved}});
  out << "wrote " << graphs.size() << " samples to " << samples_path.string() << " (manifest " << manifest.string()
      << ", " << wall << " s)\n";
  return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve(f);
  fs::path samples_path;
  if (f.samples) {
    samples_path = *f.samples;
  } else {
    samples_path = fs::path(require_path(c.paths.out_dir, "out_dir")) / "samples.jsonl";
  }
  const fs::path dataset_path = require_path(c.paths.dataset, "dataset");
  const auto samples = read_jsonl(samples_path);
  if (samples.empty()) throw ConfigError("samples file " + samples_path.string() + " is empty");
  const auto train_set = read_jsonl(dataset_path);

  std::vector<std::string> props = f.properties;
  if (props.empty()) {
    // every property that at least one sample defines
    for (PropertyKind k : kAllProperties) {
      const std::string name(property_name(k));
      if (!property_values(samples, name).empty()) {
        props.push_back(name);
      } else {
        err << "warning: no sample defines " << name << "; skipped\n";
      }
    }
  }
  for (const std::string& p : props) {
    try {
      parse_property(p);
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  }
  std::map<std::string, double> targets;
  for (const auto& [k, v] : c.targets) {
    if (std::find(props.begin(), props.end(), k) != props.end()) targets[k] = v;
  }
  const EvalReport report = evaluate(samples, train_set, props, targets, f.bins.value_or(20));
  const fs::path report_path = f.out ? fs::path(*f.out) : fs::path(samples_path).replace_extension(".report.json");
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  emit_report(report, report_path);
  out << format_summary(report) << "report " << report_path.string() << '\n';
  return kExitOk;
}

int cmd_selfcheck(const Flags& f, std::ostream& out, std::ostream& err) {
  SelfcheckOptions opts;
  opts.tolerance_scale = f.tolerance_scale.value_or(1.0);
  opts.seed = f.seed.value_or(0);
  const auto results = run_selfcheck(opts, &out);
  std::vector<std::string> failed;
  for (const CheckResult& r : results) {
    if (!r.pass) failed.push_back(r.name);
  }
  if (failed.empty()) {
    out << "all " << results.size() << " checks passed\n";
    return kExitOk;
  }
  err << failed.size() << " check(s) failed:\n";
  for (const std::string& name : failed) err << "  " << name << '\n';
  return kExitRuntime;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional graph generation with loop-guided score diffusion"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", f.config, "JSON run config (or a sample manifest to replay)");
    sub->add_option("--seed", f.seed, "Run seed");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic community-graph dataset");
  common(gen);
  gen->add_option("-o,--out", f.dataset, "Dataset JSONL path");
  gen->add_option("--stats", f.stats, "Statistics sidecar path");
  gen->add_option("-n,--n-graphs", f.n_graphs, "Number of graphs");

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  common(tr);
  tr->add_option("--dataset", f.dataset, "Dataset JSONL path");
  tr->add_option("--checkpoint", f.checkpoint, "Checkpoint path");
  tr->add_option("--out-dir", f.out_dir, "Directory for the loss log");
  tr->add_option("--iterations", f.iterations, "Total iterations");
  tr->add_option("--batch-size", f.batch_size, "Graphs per batch");
  tr->add_option("--lr", f.lr, "Adam learning rate");
  tr->add_option("--mode", f.train_mode, "twigs | cfg");
  tr->add_option("--properties", f.properties, "Properties with their own stem");
  tr->add_option("--context", f.context, "Conditioning properties");
  tr->add_flag("--resume", f.resume, "Continue from the checkpoint if it exists");

  auto* sa = app.add_subcommand("sample", "Generate graphs from a checkpoint");
  common(sa);
  sa->add_option("--checkpoint", f.checkpoint, "Checkpoint path");
  sa->add_option("--out-dir", f.out_dir, "Output directory");
  sa->add_option("-o,--out", f.out, "Samples JSONL path (default <out-dir>/samples.jsonl)");
  sa->add_option("-t,--target", f.targets, "Conditioning target name=value (repeatable)");
  sa->add_option("--mode", f.sample_mode, "twigs | cfg | uncond");
  sa->add_option("-n,--n-samples", f.n_samples, "Number of graphs");
  sa->add_option("-j,--jobs", f.jobs, "Parallel chains");
  sa->add_option("--steps", f.steps, "Reverse-time steps");
  sa->add_option("--sampler", f.sampler, "langevin | reverse_em");
  sa->add_option("--snr", f.snr, "Langevin signal-to-noise ratio (0 uses the constant step)");
  sa->add_option("--guidance", f.guidance, "Classifier-free guidance weight");
  sa->add_flag("--clamp-context", f.clamp_context, "Hold conditioned properties at their targets");

  auto* ev = app.add_subcommand("eval", "Score generated graphs");
  common(ev);
  ev->add_option("--samples", f.samples, "Samples JSONL path");
  ev->add_option("--dataset", f.dataset, "Training dataset JSONL path");
  ev->add_option("--out-dir", f.out_dir, "Directory holding samples.jsonl");
  ev->add_option("-o,--out", f.out, "Report path (default <samples>.report.json)");
  ev->add_option("-t,--target", f.targets, "Target name=value (repeatable)");
  ev->add_option("--properties", f.properties, "Properties to evaluate (default all)");
  ev->add_option("--bins", f.bins, "Histogram bins");

  auto* sc = app.add_subcommand("selfcheck", "Run the embedded numerical checks");
  sc->add_option("--seed", f.seed, "Check seed");
  sc->add_option("--tolerance-scale", f.tolerance_scale, "Multiply every tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f, out, err);
    if (tr->parsed()) return cmd_train(f, out, err);
    if (sa->parsed()) return cmd_sample(f, out, err);
    if (ev->parsed()) return cmd_eval(f, out, err);
    return cmd_selfcheck(f, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace twigs
