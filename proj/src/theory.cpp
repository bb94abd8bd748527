#include "urma/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace urma::theory {

void BoundConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("BoundConfig: ") + what);
  };
  require(r_max >= 0.0, "R_max must be non-negative");
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
  require(clip > 0.0 && clip < 1.0, "clip must lie in (0, 1)");
  require(ratio_cap > clip, "ratio cap E must exceed clip");
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  require(n >= 1 && tasks >= 1, "n and M must be at least 1");
}

std::pair<double, double> advantage_bounds(double r_max, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("advantage_bounds: gamma must lie in (0, 1)");
  if (r_max < 0.0) throw std::invalid_argument("advantage_bounds: R_max must be non-negative");
  const double a = r_max / (1.0 - gamma);
  return {-a, a};
}

std::vector<RatioSample> ratio_filter(std::span<const RatioSample> batch, double ratio_cap) {
  std::vector<RatioSample> out;
  out.reserve(batch.size());
  for (const auto& s : batch)
    if (!(s.advantage < 0.0 && s.ratio > 1.0 + ratio_cap)) out.push_back(s);
  return out;
}

double surrogate_loss(const RatioSample& s, double clip) {
  const double clipped = std::clamp(s.ratio, 1.0 - clip, 1.0 + clip);
  return -std::min(s.ratio * s.advantage, clipped * s.advantage);
}

std::pair<double, double> loss_bounds(const BoundConfig& config) {
  config.validate();
  const auto [a_min, a_max] = advantage_bounds(config.r_max, config.gamma);
  return {-a_max * (1.0 + config.clip), -a_min * (1.0 + config.ratio_cap)};
}

double normalize_loss(double loss, const BoundConfig& config) {
  const auto [lo, hi] = loss_bounds(config);
  if (!(loss >= lo && loss <= hi)) {
    std::ostringstream msg;
    msg << "normalize_loss: " << loss << " outside [" << lo << ", " << hi << "]; was the ratio filter applied?";
    throw std::domain_error(msg.str());
  }
  if (hi == lo) return 0.0;
  return (loss - lo) / (hi - lo);
}

double hoeffding_term(std::size_t n, std::size_t tasks, double delta) {
  if (n == 0 || tasks == 0) throw std::invalid_argument("hoeffding_term: n and M must be at least 1");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("hoeffding_term: delta must lie in (0, 1)");
  return std::sqrt(8.0 * std::log(3.0 / delta) / (static_cast<double>(n) * static_cast<double>(tasks)));
}

ComplexityEstimate gaussian_complexity_mc(std::span<const std::vector<double>> candidates, std::size_t trials,
                                          std::mt19937_64& rng) {
  if (candidates.empty()) throw std::invalid_argument("gaussian_complexity_mc: empty function class");
  if (trials < 100) throw std::invalid_argument("gaussian_complexity_mc: at least 100 trials required");
  const std::size_t n = candidates.front().size();
  for (const auto& c : candidates)
    if (c.size() != n) throw std::invalid_argument("gaussian_complexity_mc: candidates differ in input count");
  std::normal_distribution<double> normal;
  std::vector<double> g(n);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (double& x : g) x = normal(rng);
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * c[i];
      best = std::max(best, dot);
    }
    sum += best;
    sum_sq += best * best;
  }
  ComplexityEstimate e;
  e.trials = trials;
  e.estimate = sum / trials;
  const double var = std::max(0.0, sum_sq / trials - e.estimate * e.estimate) * trials / (trials - 1.0);
  e.stderr_ = std::sqrt(var / trials);
  return e;
}

namespace {

// 64 candidates z(x) = tanh(w x + b) on inputs spread over [-1, 1]; values bounded by 1.
std::vector<std::vector<double>> tanh_class(std::size_t inputs, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<std::pair<double, double>> wb(64);
  for (auto& [w, b] : wb) {
    w = 2.0 * normal(rng);
    b = normal(rng);
  }
  std::vector<std::vector<double>> out;
  for (auto [w, b] : wb) {
    std::vector<double> v(inputs);
    for (std::size_t i = 0; i < inputs; ++i) {
      const double x = inputs == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / (inputs - 1);
      v[i] = std::tanh(w * x + b);
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

BoundReport make_bound_report(const BoundConfig& config, std::uint64_t seed, std::size_t trials) {
  config.validate();
  BoundReport r;
  r.config = config;
  std::tie(r.a_min, r.a_max) = advantage_bounds(config.r_max, config.gamma);
  std::tie(r.l_min, r.l_max) = loss_bounds(config);
  r.hoeffding = hoeffding_term(config.n, config.tasks, config.delta);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> adv(r.a_min, r.a_max), ratio(0.0, 1.0 + 2.0 * config.ratio_cap);
  std::vector<RatioSample> probe(10000);
  for (auto& s : probe) s = {adv(rng), ratio(rng)};
  const auto kept = ratio_filter(probe, config.ratio_cap);
  r.probe_samples = probe.size();
  r.probe_kept = kept.size();
  r.probe_min = 1.0;
  r.probe_max = 0.0;
  for (const auto& s : kept) {
    const double l = normalize_loss(surrogate_loss(s, config.clip), config);
    r.probe_min = std::min(r.probe_min, l);
    r.probe_max = std::max(r.probe_max, l);
  }

  const std::size_t nm = config.n * config.tasks;
  for (std::size_t div : {4, 2, 1}) {
    const std::size_t inputs = std::max<std::size_t>(1, nm / div);
    std::mt19937_64 class_rng(seed + 1);
    const auto candidates = tanh_class(inputs, class_rng);
    ComplexityClass c;
    c.name = "tanh64";
    c.inputs = inputs;
    c.estimate = gaussian_complexity_mc(candidates, trials, rng);
    r.complexities.push_back(c);
  }
  return r;
}

std::string BoundReport::to_text() const {
  std::ostringstream o;
  o.precision(10);
  o << "R_max " << config.r_max << "  gamma " << config.gamma << "  eps " << config.clip << "  E " << config.ratio_cap
    << "  delta " << config.delta << "  n " << config.n << "  M " << config.tasks << "\n";
  o << "advantage bounds  [" << a_min << ", " << a_max << "]\n";
  o << "loss bounds       [" << l_min << ", " << l_max << "]\n";
  o << "hoeffding term    " << hoeffding << "\n";
  o << "probe             " << probe_kept << "/" << probe_samples << " kept, normalized loss in [" << probe_min
    << ", " << probe_max << "]\n";
  o << "gaussian complexity (Monte-Carlo lower estimate over a finite candidate set)\n";
  for (const auto& c : complexities)
    o << "  " << c.name << "  nM=" << c.inputs << "  G=" << c.estimate.estimate << " +- " << c.estimate.stderr_
      << "  G/nM=" << c.estimate.estimate / c.inputs << "\n";
  return o.str();
}

std::string BoundReport::to_json() const {
  nlohmann::json j;
  j["config"] = {{"R_max", config.r_max}, {"gamma", config.gamma}, {"clip", config.clip},
                 {"ratio_cap", config.ratio_cap}, {"delta", config.delta}, {"n", config.n}, {"M", config.tasks}};
  j["A_min"] = a_min;
  j["A_max"] = a_max;
  j["l_min"] = l_min;
  j["l_max"] = l_max;
  j["hoeffding"] = hoeffding;
  j["probe"] = {{"samples", probe_samples}, {"kept", probe_kept}, {"min", probe_min}, {"max", probe_max}};
  for (const auto& c : complexities)
    j["gaussian_complexity"].push_back({{"class", c.name},
                                        {"nM", c.inputs},
                                        {"estimate", c.estimate.estimate},
                                        {"stderr", c.estimate.stderr_},
                                        {"trials", c.estimate.trials}});
  return j.dump(2);
}

}  // namespace urma::theory
