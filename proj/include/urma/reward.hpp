#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "urma/morphology.hpp"
#include "urma/reward_coefficients.hpp"

namespace urma {

/// r_c(t) = min(t / T, 1) * r_final.
double curriculum_coefficient(double t, double T, double r_final);

/// Everything the reward reads from one transition, already in physical units.
struct RewardInputs {
  Vec3 velocity{};          // trunk linear velocity (x, y, z)
  Vec3 angular_velocity{};  // roll rate, pitch rate, yaw rate
  double roll = 0.0;
  double pitch = 0.0;
  double height = 0.0;
  Vec3 command{};  // v_x, v_y, yaw rate
  std::span<const double> q;
  std::span<const double> qd_before;
  std::span<const double> qd_after;
  std::span<const double> torque;
  std::span<const double> action;
  std::span<const double> previous_action;
  std::span<const std::uint8_t> contact;           // after the step
  std::span<const double> air_time_before;         // time airborne before the step
  int collisions = 0;
  double dt = 0.02;
};

struct RewardBreakdown {
  std::array<double, kRewardTerms> raw{};
  std::array<double, kRewardTerms> weighted{};
  double total = 0.0;

  /// c1 * T1 + c2 * T2, never curriculum-scaled.
  double tracking() const { return weighted[0] + weighted[1]; }
};

/// Table-of-terms reward. Penalties T3..T14 are scaled by the curriculum at step t; T1 and T2 are not.
RewardBreakdown compute_reward(const RewardInputs& in, const RobotSpec& robot, const RewardCoefficients& coefficients,
                               double t);

/// Number of joints outside the 5% margin on either end of their control range.
int joints_outside_margin(const RobotSpec& robot, std::span<const double> q);

/// Left/right foot pairs in listed order; unpaired and center feet are left out.
std::vector<std::pair<std::size_t, std::size_t>> symmetry_pairs(const RobotSpec& robot);

}  // namespace urma
