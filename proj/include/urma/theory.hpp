#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace urma::theory {

struct BoundConfig {
  double r_max = 3.0;  // c1 + c2 of the default coefficient set
  double gamma = 0.99;
  double clip = 0.1;
  /// Ratio cap for negative-advantage samples.
  double ratio_cap = 1.0;
  double delta = 0.05;
  std::size_t n = 1000;  // samples per task
  std::size_t tasks = 16;

  void validate() const;
};

/// (A_min, A_max) = (-R_max / (1 - gamma), R_max / (1 - gamma)) for rewards in [0, R_max].
std::pair<double, double> advantage_bounds(double r_max, double gamma);

struct RatioSample {
  double advantage = 0.0;
  double ratio = 1.0;
};

/// Drops exactly the samples with A < 0 and r > 1 + E.
std::vector<RatioSample> ratio_filter(std::span<const RatioSample> batch, double ratio_cap);

/// Per-sample surrogate -min(r A, clip(r, 1 - eps, 1 + eps) A).
double surrogate_loss(const RatioSample& s, double clip);

/// (l_min, l_max) = (-A_max (1 + eps), -A_min (1 + E)).
std::pair<double, double> loss_bounds(const BoundConfig& config);

/// (L - l_min) / (l_max - l_min); throws std::domain_error when L lies outside [l_min, l_max].
double normalize_loss(double loss, const BoundConfig& config);

/// sqrt(8 ln(3 / delta) / (n M)).
double hoeffding_term(std::size_t n, std::size_t tasks, double delta);

struct ComplexityEstimate {
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::size_t trials = 0;
};

/// Monte-Carlo Gaussian complexity E[sup_z sum_i g_i z(x_i)] of a finite candidate set. Each candidate is its value
/// vector on the fixed inputs; the sup runs over the candidates only, so for a sampled class this underestimates.
ComplexityEstimate gaussian_complexity_mc(std::span<const std::vector<double>> candidates, std::size_t trials,
                                          std::mt19937_64& rng);

struct ComplexityClass {
  std::string name;
  std::size_t inputs = 0;  // n * M
  ComplexityEstimate estimate;
};

struct BoundReport {
  BoundConfig config;
  double a_min = 0.0, a_max = 0.0;
  double l_min = 0.0, l_max = 0.0;
  double hoeffding = 0.0;
  /// Normalized losses of a probe batch after filtering.
  std::size_t probe_samples = 0, probe_kept = 0;
  double probe_min = 0.0, probe_max = 0.0;
  std::vector<ComplexityClass> complexities;

  std::string to_text() const;
  std::string to_json() const;
};

/// Fills every computable piece. The complexity rows use classes of random tanh features on scalar inputs at
/// input counts n*M / 4, n*M / 2 and n*M, so the 1/sqrt(nM) trend is visible.
BoundReport make_bound_report(const BoundConfig& config, std::uint64_t seed, std::size_t trials = 400);

}  // namespace urma::theory
