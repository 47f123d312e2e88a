#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "twigs/eval.hpp"

using namespace twigs;

namespace {

LabeledGraph labeled(const Mat& adj) {
  const Graph g = make_graph(adj);
  return LabeledGraph{g, measure_properties(g.adj)};
}

Mat from_edges(Index n, const std::vector<std::pair<Index, Index>>& edges) {
  Mat a = Mat::Zero(n, n);
  for (auto [i, j] : edges) a(i, j) = a(j, i) = 1.0;
  return a;
}

Mat complete(Index n) {
  Mat a = Mat::Ones(n, n);
  a.diagonal().setZero();
  return a;
}

std::vector<double> read_column_sums(const std::filesystem::path& csv, int& rows) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "bin_center,p,q");
  std::vector<double> sums(2, 0.0);
  rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    sums[0] += std::stod(cell);
    std::getline(ss, cell, ',');
    sums[1] += std::stod(cell);
    ++rows;
  }
  return sums;
}

}  // namespace

TEST_CASE("mae in raw units") {
  const std::vector<LabeledGraph> s{labeled(complete(4)), labeled(Mat::Zero(4, 4))};
  CHECK(mae(s, 0.5, "density") == doctest::Approx(0.5));
  CHECK(mae(s, 0.0, "density") == doctest::Approx(0.5));
  CHECK(mae(s, 1.0, "density") == doctest::Approx(0.5));
  CHECK(mae({labeled(complete(4))}, 0.25, "density") == doctest::Approx(0.75));
  // only the complete graph has triads
  CHECK(property_values(s, "transitivity").size() == 1);
  CHECK(mae(s, 0.5, "transitivity") == doctest::Approx(0.5));
  CHECK_THROWS_AS(mae({labeled(Mat::Zero(4, 4))}, 0.5, "transitivity"), UndefinedMetric);
}

TEST_CASE("histogram KL") {
  SUBCASE("identical samples give zero") {
    const std::vector<double> v{0.1, 0.2, 0.2, 0.5, 0.9};
    CHECK(hist_kl(v, v, 10) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(hist_kl({0.3, 0.3}, {0.3}, 10) == 0.0);
  }
  SUBCASE("unit gaussians one apart: KL 0.5") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n0(0.0, 1.0), n1(1.0, 1.0);
    std::vector<double> p, q;
    for (int i = 0; i < 20000; ++i) {
      p.push_back(n0(rng));
      q.push_back(n1(rng));
    }
    CHECK(hist_kl(p, q, 40) == doctest::Approx(0.5).epsilon(0.25));
  }
  SUBCASE("point reference against a spread sample is positive") {
    CHECK(hist_kl({0.3}, {0.1, 0.3, 0.5, 0.7}, 20) > 0.1);
  }
  SUBCASE("shared histogram normalization") {
    const Histogram h = shared_histogram({0.0, 1.0, 0.5}, {0.25, 0.75}, 8);
    REQUIRE(h.centers.size() == 8);
    double sp = 0, sq = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      sp += h.p[b];
      sq += h.q[b];
      CHECK(h.p[b] > 0);
    }
    CHECK(sp == doctest::Approx(1.0));
    CHECK(sq == doctest::Approx(1.0));
    CHECK(h.centers.front() == doctest::Approx(1.0 / 16));
    CHECK_THROWS_AS(shared_histogram({}, {1.0}, 8), ContractError);
    CHECK_THROWS_AS(shared_histogram({1.0}, {1.0}, 4), ContractError);
  }
}

TEST_CASE("wl hash") {
  Rng rng(3);
  const Mat path = from_edges(4, {{0, 1}, {1, 2}, {2, 3}});
  const Mat star = from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
  CHECK(wl_hash(path) != wl_hash(star));
  CHECK(wl_hash(path) != wl_hash(from_edges(5, {{0, 1}, {1, 2}, {2, 3}})));
  for (int trial = 0; trial < 10; ++trial) {
    Mat a = Mat::Zero(9, 9);
    for (Index i = 0; i < 9; ++i) {
      for (Index j = i + 1; j < 9; ++j) a(i, j) = a(j, i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
    }
    CHECK(wl_hash(a) == wl_hash(permute_both(a, random_permutation(rng, 9))));
  }
}

TEST_CASE("uniqueness and novelty") {
  const LabeledGraph tri = labeled(complete(3));
  const LabeledGraph path = labeled(from_edges(3, {{0, 1}, {1, 2}}));
  const std::vector<LabeledGraph> same(5, tri);
  auto [u, n] = uniqueness_novelty(same, {tri});
  CHECK(u == doctest::Approx(1.0 / 5));
  CHECK(n == 0.0);
  std::tie(u, n) = uniqueness_novelty({tri, path}, {tri});
  CHECK(u == 1.0);
  CHECK(n == doctest::Approx(0.5));
  std::tie(u, n) = uniqueness_novelty({tri, path}, {});
  CHECK(n == 1.0);
}

TEST_CASE("evaluate on the training set") {
  Rng rng(8);
  CommunityConfig cfg;
  cfg.n_min = 8;
  cfg.n_max = 12;
  const auto data = gen_dataset(rng, cfg, 60);
  const auto dens = property_values(data, "density");
  double mean = 0;
  for (double d : dens) mean += d;
  mean /= static_cast<double>(dens.size());
  double mad = 0;
  for (double d : dens) mad += std::abs(d - mean);
  mad /= static_cast<double>(dens.size());

  const EvalReport r = evaluate(data, data, {"density", "clustering"}, {{"density", mean}});
  CHECK(r.n_samples == 60);
  CHECK(*r.properties.at("density").mae == doctest::Approx(mad).epsilon(1e-12));
  CHECK(*r.properties.at("density").target == mean);
  CHECK_FALSE(r.properties.at("clustering").mae.has_value());
  CHECK(r.properties.at("clustering").kl == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.properties.at("density").kl > 0.0);
  CHECK(r.novelty == 0.0);
  CHECK(r.uniqueness > 0.0);
  CHECK(r.uniqueness <= 1.0);

  CHECK_THROWS_AS(evaluate({}, data, {"density"}, {}), ContractError);
  CHECK_THROWS_AS(evaluate(data, data, {"density"}, {{"clustering", 0.1}}), ContractError);
  CHECK_THROWS_AS(evaluate(data, data, {"girth"}, {}), ContractError);
}

TEST_CASE("excluded samples are counted") {
  const std::vector<LabeledGraph> s{labeled(complete(4)), labeled(Mat::Zero(4, 4)), labeled(complete(5))};
  const EvalReport r = evaluate(s, s, {"transitivity"}, {});
  CHECK(r.properties.at("transitivity").excluded == 1);
  CHECK_THROWS_AS(evaluate({labeled(Mat::Zero(4, 4))}, s, {"transitivity"}, {}), UndefinedMetric);
}

TEST_CASE("report files") {
  Rng rng(9);
  const auto data = gen_dataset(rng, CommunityConfig{}, 20);
  const EvalReport r = evaluate(data, data, {"density", "assortativity"}, {{"density", 0.3}}, 12);
  const auto dir = std::filesystem::temp_directory_path() / "twigs_test_eval";
  std::filesystem::create_directories(dir);
  emit_report(r, dir / "report.json");

  std::ifstream in(dir / "report.json");
  const nlohmann::json j = nlohmann::json::parse(in);
  CHECK(EvalReport::from_json(j).to_json() == r.to_json());
  CHECK(j.at("density").at("target").get<double>() == 0.3);
  CHECK(j.at("assortativity").at("mae").is_null());

  for (const char* prop : {"density", "assortativity"}) {
    int rows = 0;
    const auto sums = read_column_sums(dir / (std::string("report_") + prop + "_hist.csv"), rows);
    CHECK(rows == 12);
    CHECK(sums[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sums[1] == doctest::Approx(1.0).epsilon(1e-9));
  }
  const std::string summary = format_summary(r);
  CHECK(summary.find("density") != std::string::npos);
  CHECK(summary.find("samples 20") != std::string::npos);
  std::filesystem::remove_all(dir);
}
