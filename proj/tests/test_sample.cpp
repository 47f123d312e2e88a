#include <doctest.h>

#include "twigs/dataset_io.hpp"
#include "twigs/sample.hpp"
#include "twigs/train.hpp"

using namespace twigs;

namespace {

ModelConfig small_config(std::vector<std::string> props, std::vector<std::string> ctx) {
  ModelConfig c;
  c.hidden = 8;
  c.entry_hidden = 8;
  c.heads = 2;
  c.properties = std::move(props);
  c.context = std::move(ctx);
  return c;
}

TwigsModel random_model(const ModelConfig& c, std::uint64_t seed) {
  TwigsModel m(c, seed);
  Rng rng(seed + 1);
  for (Tensor& p : m.parameters()) p.mutable_value() = 0.3 * rng.normal_matrix(p.rows(), p.cols());
  return m;
}

SampleConfig quick(SampleMode mode, int steps = 20) {
  SampleConfig c;
  c.mode = mode;
  c.steps = steps;
  return c;
}

bool valid_state(const DiffusionState& s) {
  return s.x.allFinite() && s.adj.allFinite() && s.adj.isApprox(s.adj.transpose(), 0.0) &&
         s.adj.diagonal().isZero(0.0);
}

void require_same_graphs(const std::vector<LabeledGraph>& a, const std::vector<LabeledGraph>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].graph.adj == b[i].graph.adj);
    CHECK(a[i].graph.x == b[i].graph.x);
    CHECK(a[i].properties == b[i].properties);
  }
}

}  // namespace

TEST_CASE("mode and sampler names") {
  for (SampleMode m : {SampleMode::Twigs, SampleMode::ClassifierFree, SampleMode::Unconditional}) {
    CHECK(parse_sample_mode(sample_mode_name(m)) == m);
  }
  for (Sampler s : {Sampler::Langevin, Sampler::ReverseEm}) CHECK(parse_sampler(sampler_name(s)) == s);
  CHECK_THROWS_AS(parse_sample_mode("bogus"), ContractError);
  CHECK_THROWS_AS(parse_sampler("euler"), ContractError);
}

TEST_CASE("sample config validation and json") {
  SampleConfig c;
  c.mode = SampleMode::ClassifierFree;
  c.guidance = 2.5;
  c.clamp_context = true;
  CHECK(SampleConfig::from_json(c.to_json()).to_json() == c.to_json());
  SampleConfig bad;
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = SampleConfig{};
  bad.threshold = 1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = SampleConfig{};
  bad.snr = -1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("init_state draws unit noise deterministically") {
  const ModelConfig mc = small_config({"density", "clustering"}, {"density"});
  Rng a(3), b(3);
  const DiffusionState s1 = init_state(mc, 40, Conditioning{{0.5}}, a);
  const DiffusionState s2 = init_state(mc, 40, Conditioning{{0.5}}, b);
  CHECK(s1.x == s2.x);
  CHECK(s1.adj == s2.adj);
  CHECK(s1.props == s2.props);
  CHECK(s1.x.rows() == 40);
  CHECK(s1.x.cols() == mc.feature_dim);
  CHECK(s1.props.size() == 2);
  CHECK(s1.t == 1.0);
  CHECK(valid_state(s1));

  double sum = 0, sq = 0;
  int count = 0;
  for (Index i = 0; i < 40; ++i) {
    for (Index j = i + 1; j < 40; ++j) {
      sum += s1.adj(i, j);
      sq += s1.adj(i, j) * s1.adj(i, j);
      ++count;
    }
  }
  CHECK(std::abs(sum / count) < 0.1);
  CHECK(sq / count == doctest::Approx(1.0).epsilon(0.1));
  CHECK(s1.x.array().square().mean() == doctest::Approx(1.0).epsilon(0.1));
  CHECK_THROWS_AS(init_state(mc, 1, {}, a), ContractError);
}

TEST_CASE("langevin step size rules") {
  SampleConfig c;
  const Mat s = Mat::Constant(2, 2, 2.0);  // norm 4
  const Mat z = Mat::Constant(2, 2, 1.0);  // norm 2
  c.snr = 0.25;
  CHECK(langevin_alpha(c, s, z, 0.8, true) == doctest::Approx(2 * std::pow(0.25 * 2.0 / 4.0, 2)));
  CHECK(langevin_alpha(c, s, z, 0.8, false) == doctest::Approx(2 * std::pow(0.25 * 0.8, 2)));
  CHECK(langevin_alpha(c, Mat::Zero(2, 2), z, 0.8, true) == doctest::Approx(2 * std::pow(0.25 * 0.8, 2)));
  c.snr = 0.0;
  c.langevin_alpha = 3e-4;
  CHECK(langevin_alpha(c, s, z, 0.8, true) == 3e-4);
  CHECK(langevin_alpha(c, s, z, 0.8, false) == 3e-4);
}

TEST_CASE("every step keeps the state valid") {
  const TwigsModel model = random_model(small_config({"density", "transitivity"}, {"density"}), 4);
  for (Sampler sampler : {Sampler::Langevin, Sampler::ReverseEm}) {
    SampleConfig c = quick(SampleMode::Twigs);
    c.sampler = sampler;
    Rng rng(1);
    DiffusionState s = init_state(model.config(), 7, Conditioning{{0.3}}, rng);
    const TimeGrid grid = TimeGrid::reverse(10, model.schedule().t_eps);
    for (double t : grid.times) {
      twigs_step(model, s, t, grid.dt, c, rng);
      REQUIRE(valid_state(s));
      cfg_step(model, s, t, grid.dt, c, rng);
      REQUIRE(valid_state(s));
      unconditional_step(model, s, t, grid.dt, c, rng);
      REQUIRE(valid_state(s));
      CHECK(s.t == t);
    }
  }
}

TEST_CASE("properties see the structure updated in the same step") {
  const TwigsModel model = random_model(small_config({"density"}, {}), 5);
  Rng rng(2);
  DiffusionState s = init_state(model.config(), 6, {}, rng);
  const Mat before = s.adj;
  StepTrace trace;
  twigs_step(model, s, 0.5, 1e-3, SampleConfig{}, rng, &trace);
  CHECK(trace.structure_adj == before);
  CHECK(trace.property_adj == s.adj);
  CHECK(trace.property_adj != before);
}

TEST_CASE("clamped context holds the target") {
  const TwigsModel model = random_model(small_config({"density", "transitivity"}, {"density"}), 6);
  SampleConfig c;
  c.clamp_context = true;
  Rng rng(3);
  DiffusionState s = init_state(model.config(), 6, Conditioning{{0.7}}, rng);
  const double free_before = s.props[1];
  twigs_step(model, s, 0.5, 1e-3, c, rng);
  CHECK(s.props[0] == 0.7);
  CHECK(s.props[1] != free_before);
}

TEST_CASE("untrained model with a constant step diffuses properties as a random walk") {
  // fresh stems give a zero property score, so y_K = y_0 + sqrt(alpha) * (z_1 + ... + z_K)
  const TwigsModel model(small_config({"density"}, {}), 7);
  SampleConfig c;
  c.snr = 0.0;
  c.langevin_alpha = 1e-3;
  const int chains = 400, steps = 100;
  std::vector<double> ys;
  for (int k = 0; k < chains; ++k) {
    Rng rng(chain_seed(11, k));
    DiffusionState s = init_state(model.config(), 4, {}, rng);
    const TimeGrid grid = TimeGrid::reverse(steps, model.schedule().t_eps);
    for (double t : grid.times) twigs_step(model, s, t, grid.dt, c, rng);
    ys.push_back(s.props[0]);
  }
  double m = 0, v = 0;
  for (double y : ys) m += y;
  m /= chains;
  for (double y : ys) v += (y - m) * (y - m);
  v /= chains - 1;
  CHECK(std::abs(m) < 0.2);
  CHECK(v == doctest::Approx(1.0 + steps * c.langevin_alpha).epsilon(0.15));
}

TEST_CASE("stemless contextless model: twigs and unconditional steps coincide") {
  const TwigsModel model = random_model(small_config({}, {}), 8);
  Rng r1(4), r2(4);
  DiffusionState a = init_state(model.config(), 6, {}, r1);
  DiffusionState b = init_state(model.config(), 6, {}, r2);
  const TimeGrid grid = TimeGrid::reverse(5, model.schedule().t_eps);
  for (double t : grid.times) {
    twigs_step(model, a, t, grid.dt, SampleConfig{}, r1);
    unconditional_step(model, b, t, grid.dt, SampleConfig{}, r2);
  }
  CHECK(a.x == b.x);
  CHECK(a.adj == b.adj);
}

TEST_CASE("classifier-free weight reductions") {
  const TwigsModel model = random_model(small_config({}, {"density"}), 9);
  const Conditioning ctx{{0.4}};
  const TimeGrid grid = TimeGrid::reverse(5, model.schedule().t_eps);

  SUBCASE("w = 0 is the conditional trunk") {
    SampleConfig c;
    c.guidance = 0.0;
    Rng r1(5), r2(5);
    DiffusionState a = init_state(model.config(), 6, ctx, r1);
    DiffusionState b = init_state(model.config(), 6, ctx, r2);
    for (double t : grid.times) {
      cfg_step(model, a, t, grid.dt, c, r1);
      twigs_step(model, b, t, grid.dt, c, r2);  // no stems: trunk with context
    }
    CHECK(a.adj == b.adj);
    CHECK(a.x == b.x);
  }
  SUBCASE("w = -1 is the unconditional trunk") {
    SampleConfig c;
    c.guidance = -1.0;
    Rng r1(6), r2(6);
    DiffusionState a = init_state(model.config(), 6, ctx, r1);
    DiffusionState b = init_state(model.config(), 6, ctx, r2);
    for (double t : grid.times) {
      cfg_step(model, a, t, grid.dt, c, r1);
      unconditional_step(model, b, t, grid.dt, c, r2);
    }
    CHECK(a.adj == b.adj);
    CHECK(a.x == b.x);
  }
}

TEST_CASE("zeroed stem node heads reproduce the trunk-only run exactly") {
  const TwigsModel model = random_model(small_config({"density", "transitivity"}, {"density"}), 10);
  TwigsModel ablated = model.clone();
  for (auto& p : ablated.named_parameters()) {
    if (p.path.rfind("stem/", 0) == 0 && p.path.find("/node_head/1/") != std::string::npos) {
      p.tensor.mutable_value().setZero();
    }
  }
  SampleConfig full = quick(SampleMode::Twigs, 30);
  SampleConfig trunk_only = full;
  trunk_only.trunk_only_structure = true;
  Rng r1(7), r2(7), r3(7);
  const Conditioning ctx{{0.2}};
  const Graph a = run_chain(ablated, 8, ctx, full, r1);
  const Graph b = run_chain(model, 8, ctx, trunk_only, r2);
  CHECK(a.adj == b.adj);
  const Graph c = run_chain(model, 8, ctx, full, r3);
  CHECK(r3.engine()() == r1.engine()());  // same noise stream consumed
  (void)c;
}

TEST_CASE("conditioning contract") {
  const TwigsModel model(small_config({"density", "transitivity"}, {"density", "transitivity"}), 11);
  DatasetStats stats{{"density", {0.3, 0.1}}, {"transitivity", {0.5, 0.2}}};
  SampleRun run;
  run.targets = {{"density", 0.4}, {"transitivity", 0.3}};
  const Conditioning ctx = make_conditioning(model, stats, run);
  REQUIRE(ctx.values.size() == 2);
  CHECK(ctx.values[0] == doctest::Approx(1.0));
  CHECK(ctx.values[1] == doctest::Approx(-1.0));
  CHECK_FALSE(ctx.dropped);

  run.targets = {{"density", 0.4}};
  CHECK_THROWS_AS(make_conditioning(model, stats, run), ContractError);
  run.targets = {{"density", 0.4}, {"transitivity", 0.3}, {"clustering", 0.1}};
  CHECK_THROWS_AS(make_conditioning(model, stats, run), ContractError);
  run.targets = {{"density", 0.4}, {"transitivity", 0.3}, {"girth", 3}};
  CHECK_THROWS_AS(make_conditioning(model, stats, run), ContractError);

  run.config.mode = SampleMode::Unconditional;
  run.targets = {{"clustering", 0.1}};
  CHECK(make_conditioning(model, stats, run).dropped);
}

TEST_CASE("sample_graphs is deterministic and independent of the job count") {
  const TwigsModel model = random_model(small_config({"density"}, {"density"}), 12);
  const DatasetStats stats{{"density", {0.3, 0.1}}};
  const std::map<int, int> counts{{5, 2}, {7, 1}};
  SampleRun run;
  run.config = quick(SampleMode::Twigs, 15);
  run.n_samples = 6;
  run.seed = 21;
  run.targets = {{"density", 0.35}};
  const auto a = sample_graphs(model, stats, counts, run);
  const auto b = sample_graphs(model, stats, counts, run);
  require_same_graphs(a, b);
  run.jobs = 3;
  require_same_graphs(a, sample_graphs(model, stats, counts, run));

  for (const auto& g : a) {
    CHECK((g.graph.n() == 5 || g.graph.n() == 7));
    CHECK(is_binary_graph(g.graph.adj));
    CHECK(g.properties.count("density") == 1);
  }
  run.seed = 22;
  run.jobs = 1;
  const auto c = sample_graphs(model, stats, counts, run);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].graph.adj != c[i].graph.adj;
  CHECK(differs);

  CHECK_THROWS_AS(sample_graphs(model, stats, {}, run), ContractError);
  CHECK(chain_seed(1, 0) != chain_seed(1, 1));
  CHECK(chain_seed(1, 0) != chain_seed(2, 0));
}

TEST_CASE("classifier-free sampling needs a context") {
  const TwigsModel model(small_config({}, {}), 13);
  SampleRun run;
  run.config.mode = SampleMode::ClassifierFree;
  CHECK_THROWS_AS(sample_graphs(model, {}, {{4, 1}}, run), ContractError);
}
