#include "urma/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace urma {

double curriculum_coefficient(double t, double T, double r_final) {
  if (T <= 0.0) return r_final;
  return std::min(std::max(t, 0.0) / T, 1.0) * r_final;
}

int joints_outside_margin(const RobotSpec& robot, std::span<const double> q) {
  int n = 0;
  for (std::size_t j = 0; j < robot.joints.size(); ++j) {
    const auto& js = robot.joints[j];
    const double margin = 0.05 * (js.range_max - js.range_min);
    if (q[j] < js.range_min + margin || q[j] > js.range_max - margin) ++n;
  }
  return n;
}

std::vector<std::pair<std::size_t, std::size_t>> symmetry_pairs(const RobotSpec& robot) {
  std::vector<std::size_t> left, right;
  for (std::size_t f = 0; f < robot.feet.size(); ++f) {
    if (robot.feet[f].side == FootSide::left) left.push_back(f);
    if (robot.feet[f].side == FootSide::right) right.push_back(f);
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < std::min(left.size(), right.size()); ++i) pairs.emplace_back(left[i], right[i]);
  return pairs;
}

namespace {

double sq(double x) { return x * x; }

template <typename F>
double sum_over(std::size_t n, F f) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += f(i);
  return s;
}

}  // namespace

RewardBreakdown compute_reward(const RewardInputs& in, const RobotSpec& robot, const RewardCoefficients& coefficients,
                               double t) {
  const std::size_t nj = robot.joint_count();
  const std::size_t nf = robot.foot_count();
  if (in.q.size() != nj || in.qd_before.size() != nj || in.qd_after.size() != nj || in.torque.size() != nj ||
      in.action.size() != nj || in.previous_action.size() != nj)
    throw std::invalid_argument("compute_reward: joint arrays must have " + std::to_string(nj) + " entries");
  if (in.contact.size() != nf || in.air_time_before.size() != nf)
    throw std::invalid_argument("compute_reward: foot arrays must have " + std::to_string(nf) + " entries");
  if (in.dt <= 0.0) throw std::invalid_argument("compute_reward: dt must be positive");

  RewardBreakdown b;
  auto& r = b.raw;
  r[0] = std::exp(-(sq(in.velocity[0] - in.command[0]) + sq(in.velocity[1] - in.command[1])) / 0.25);
  r[1] = std::exp(-sq(in.angular_velocity[2] - in.command[2]) / 0.25);
  r[2] = -sq(in.velocity[2]);
  r[3] = -(sq(in.angular_velocity[0]) + sq(in.angular_velocity[1]));
  r[4] = -(sq(in.roll) + sq(in.pitch));
  r[5] = -sum_over(nj, [&](std::size_t j) { return sq(in.q[j] - robot.joints[j].nominal); });
  r[6] = -static_cast<double>(joints_outside_margin(robot, in.q));
  r[7] = -sum_over(nj, [&](std::size_t j) { return sq((in.qd_after[j] - in.qd_before[j]) / in.dt); });
  r[8] = -sum_over(nj, [&](std::size_t j) { return sq(in.torque[j]); });
  r[9] = -sum_over(nj, [&](std::size_t j) { return sq((in.action[j] - in.previous_action[j]) / in.dt); });
  r[10] = -sq(in.height - robot.body.nominal_height);
  r[11] = -static_cast<double>(in.collisions);
  r[12] = -sum_over(nf, [&](std::size_t f) { return in.contact[f] ? in.air_time_before[f] - 0.5 : 0.0; });
  r[13] = 0.0;
  for (auto [l, rr] : symmetry_pairs(robot))
    if (!in.contact[l] && !in.contact[rr]) r[13] -= 1.0;

  double total = 0.0;
  for (std::size_t k = 0; k < kRewardTerms; ++k) {
    const double c = k < 2 ? coefficients.c[k]
                           : curriculum_coefficient(t, coefficients.curriculum_steps, coefficients.c[k]);
    b.weighted[k] = c * r[k];
    total += b.weighted[k];
  }
  b.total = std::max(0.0, total);
  return b;
}

}  // namespace urma
