#include "twigs/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_set>

#include "twigs/checkpoint.hpp"
#include "twigs/errors.hpp"

namespace twigs {

using nlohmann::json;

std::vector<double> property_values(const std::vector<LabeledGraph>& samples, const std::string& prop) {
  std::vector<double> out;
  for (const LabeledGraph& g : samples) {
    const auto it = g.properties.find(prop);
    if (it != g.properties.end()) out.push_back(it->second);
  }
  return out;
}

double mae(const std::vector<LabeledGraph>& samples, double target, const std::string& prop) {
  const std::vector<double> v = property_values(samples, prop);
  if (v.empty()) throw UndefinedMetric("mae: no sample defines '" + prop + "'");
  double s = 0.0;
  for (double x : v) s += std::abs(x - target);
  return s / static_cast<double>(v.size());
}

Histogram shared_histogram(const std::vector<double>& p_samples, const std::vector<double>& q_samples, int bins) {
  if (p_samples.empty() || q_samples.empty()) throw ContractError("histogram: empty sample list");
  if (bins < 5) throw ContractError("histogram: need at least 5 bins");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* list : {&p_samples, &q_samples}) {
    for (double v : *list) {
      if (!std::isfinite(v)) throw ContractError("histogram: non-finite value");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  Histogram h;
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  if (hi == lo) lo -= 0.5 * bins * width;
  for (int b = 0; b < bins; ++b) h.centers.push_back(lo + (b + 0.5) * width);
  auto fill = [&](const std::vector<double>& xs) {
    std::vector<double> c(static_cast<std::size_t>(bins), 0.0);
    for (double v : xs) {
      const int b = std::clamp(static_cast<int>(std::floor((v - lo) / width)), 0, bins - 1);
      c[static_cast<std::size_t>(b)] += 1.0;
    }
    double total = 0.0;
    for (double& x : c) {
      x = x / static_cast<double>(xs.size()) + 1e-6;
      total += x;
    }
    for (double& x : c) x /= total;
    return c;
  };
  h.p = fill(p_samples);
  h.q = fill(q_samples);
  return h;
}

double hist_kl(const std::vector<double>& p_samples, const std::vector<double>& q_samples, int bins) {
  const Histogram h = shared_histogram(p_samples, q_samples, bins);
  const auto [pmin, pmax] = std::minmax_element(p_samples.begin(), p_samples.end());
  const auto [qmin, qmax] = std::minmax_element(q_samples.begin(), q_samples.end());
  if (*pmin == *pmax && *qmin == *qmax && *pmin == *qmin) return 0.0;
  double kl = 0.0;
  for (std::size_t b = 0; b < h.p.size(); ++b) kl += h.p[b] * std::log(h.p[b] / h.q[b]);
  return std::max(kl, 0.0);
}

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  return h ^ (h >> 27);
}

}  // namespace

std::uint64_t wl_hash(const Mat& adj, int rounds) {
  const Index n = adj.rows();
  std::vector<std::vector<Index>> nbrs(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i != j && adj(i, j) > 0.5) nbrs[static_cast<std::size_t>(i)].push_back(j);
    }
  }
  std::vector<std::uint64_t> colour(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) colour[static_cast<std::size_t>(i)] = nbrs[static_cast<std::size_t>(i)].size();

  std::uint64_t key = mix(0, static_cast<std::uint64_t>(n));
  auto fold_round = [&] {
    std::vector<std::uint64_t> sorted = colour;
    std::sort(sorted.begin(), sorted.end());
    for (std::uint64_t c : sorted) key = mix(key, c);
  };
  fold_round();
  for (int r = 0; r < rounds; ++r) {
    std::vector<std::uint64_t> next(colour.size());
    for (std::size_t i = 0; i < colour.size(); ++i) {
      std::vector<std::uint64_t> around;
      for (Index j : nbrs[i]) around.push_back(colour[static_cast<std::size_t>(j)]);
      std::sort(around.begin(), around.end());
      std::uint64_t h = mix(colour[i], around.size());
      for (std::uint64_t c : around) h = mix(h, c);
      next[i] = h;
    }
    colour = std::move(next);
    fold_round();
  }
  return key;
}

std::pair<double, double> uniqueness_novelty(const std::vector<LabeledGraph>& samples,
                                             const std::vector<LabeledGraph>& train_set) {
  if (samples.empty()) return {0.0, 0.0};
  std::unordered_set<std::uint64_t> train_keys;
  for (const LabeledGraph& g : train_set) train_keys.insert(wl_hash(g.graph.adj));
  std::unordered_set<std::uint64_t> seen;
  int novel = 0;
  for (const LabeledGraph& g : samples) {
    const std::uint64_t k = wl_hash(g.graph.adj);
    seen.insert(k);
    if (!train_keys.count(k)) ++novel;
  }
  const double n = static_cast<double>(samples.size());
  return {static_cast<double>(seen.size()) / n, novel / n};
}

EvalReport evaluate(const std::vector<LabeledGraph>& samples, const std::vector<LabeledGraph>& train_set,
                    const std::vector<std::string>& props, const std::map<std::string, double>& targets, int bins) {
  if (samples.empty()) throw ContractError("evaluate: no samples");
  for (const auto& [name, v] : targets) {
    parse_property(name);
    if (std::find(props.begin(), props.end(), name) == props.end()) {
      throw ContractError("evaluate: target for '" + name + "' but the property is not evaluated");
    }
  }
  EvalReport r;
  r.n_samples = static_cast<int>(samples.size());
  std::tie(r.uniqueness, r.novelty) = uniqueness_novelty(samples, train_set);
  for (const std::string& p : props) {
    parse_property(p);
    PropertyReport pr;
    const std::vector<double> gen = property_values(samples, p);
    pr.excluded = r.n_samples - static_cast<int>(gen.size());
    if (gen.empty()) throw UndefinedMetric("evaluate: no sample defines '" + p + "'");
    std::vector<double> reference;
    if (const auto it = targets.find(p); it != targets.end()) {
      pr.target = it->second;
      pr.mae = mae(samples, it->second, p);
      reference.assign(1, it->second);
    } else {
      reference = property_values(train_set, p);
      if (reference.empty()) throw UndefinedMetric("evaluate: training set never defines '" + p + "'");
    }
    pr.histogram = shared_histogram(reference, gen, bins);
    pr.kl = hist_kl(reference, gen, bins);
    r.properties.emplace(p, std::move(pr));
  }
  return r;
}

json EvalReport::to_json() const {
  json j = json::object();
  for (const auto& [name, p] : properties) {
    json e = {{"kl", p.kl}, {"excluded", p.excluded}};
    e["mae"] = p.mae ? json(*p.mae) : json(nullptr);
    if (p.target) e["target"] = *p.target;
    j[name] = e;
  }
  j["uniqueness"] = uniqueness;
  j["novelty"] = novelty;
  j["n_samples"] = n_samples;
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.uniqueness = j.at("uniqueness").get<double>();
  r.novelty = j.at("novelty").get<double>();
  r.n_samples = j.at("n_samples").get<int>();
  for (const auto& [key, v] : j.items()) {
    if (!v.is_object()) continue;
    PropertyReport p;
    p.kl = v.at("kl").get<double>();
    p.excluded = v.at("excluded").get<int>();
    if (v.contains("mae") && !v.at("mae").is_null()) p.mae = v.at("mae").get<double>();
    if (v.contains("target")) p.target = v.at("target").get<double>();
    r.properties.emplace(key, p);
  }
  return r;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path) {
  {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << report.to_json().dump(2) << '\n';
    if (!out) throw std::runtime_error("error writing " + path.string());
  }
  for (const auto& [name, p] : report.properties) {
    const std::filesystem::path csv = path.parent_path() / (path.stem().string() + "_" + name + "_hist.csv");
    std::ofstream out(csv);
    if (!out) throw std::runtime_error("cannot write " + csv.string());
    out << "bin_center,p,q\n";
    const Histogram& h = p.histogram;
    for (std::size_t b = 0; b < h.centers.size(); ++b) {
      out << format_double(h.centers[b]) << ',' << format_double(h.p[b]) << ',' << format_double(h.q[b]) << '\n';
    }
    if (!out) throw std::runtime_error("error writing " + csv.string());
  }
}

std::string format_summary(const EvalReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "property" << std::setw(10) << "target" << std::setw(12) << "mae"
     << std::setw(12) << "kl" << "excluded\n";
  os << std::setprecision(4);
  for (const auto& [name, p] : report.properties) {
    os << std::setw(14) << name << std::setw(10) << (p.target ? std::to_string(*p.target).substr(0, 6) : "-")
       << std::setw(12);
    if (p.mae) {
      os << *p.mae;
    } else {
      os << "-";
    }
    os << std::setw(12) << p.kl << p.excluded << '\n';
  }
  os << "samples " << report.n_samples << ", unique " << report.uniqueness << ", novel " << report.novelty << '\n';
  return os.str();
}

}  // namespace twigs
