#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace urma {

constexpr std::size_t kRewardTerms = 14;

/// Weights c1..c14 of the reward terms and the curriculum length T in env steps.
struct RewardCoefficients {
  std::array<double, kRewardTerms> c{};
  double curriculum_steps = 0.0;

  double tracking_weight() const { return c[0] + c[1]; }
  bool operator==(const RewardCoefficients&) const = default;
};

RewardCoefficients default_coefficients();

/// The shared set used for every robot in the single-reward-set ablation.
RewardCoefficients single_set_coefficients();

/// Per-robot coefficients keyed by robot name. Throws std::invalid_argument for unknown names.
RewardCoefficients load_coefficients(const std::string& robot_name, bool single_set = false);

std::vector<std::string> coefficient_registry_names();

}  // namespace urma
