#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace urma {

constexpr std::size_t kJointObservationSize = 3;    // q, q_dot, previous action
constexpr std::size_t kFootObservationSize = 2;     // contact, air time
constexpr std::size_t kGeneralObservationSize = 16; // omega, command, gravity, kp, kd, action scale, m, L, W, H
constexpr std::size_t kPrivilegedObservationSize = 4; // v, h

/// Global observation divisors.
struct ObservationScales {
  static constexpr double joint_position = 3.14159265358979323846;
  static constexpr double joint_velocity = 30.0;
  static constexpr double action = 3.0;
  static constexpr double air_time = 2.0;
  static constexpr double angular_velocity = 5.0;
  static constexpr double command = 1.0;
  static constexpr double velocity = 1.0;
  static constexpr double height = 1.0;
};

struct ObservationBundle {
  std::vector<double> joints;  // joint-major, kJointObservationSize per joint
  std::vector<double> feet;    // foot-major, kFootObservationSize per foot
  std::array<double, kGeneralObservationSize> general{};
  std::array<double, kPrivilegedObservationSize> privileged{};

  std::size_t joint_count() const { return joints.size() / kJointObservationSize; }
  std::size_t foot_count() const { return feet.size() / kFootObservationSize; }
};

}  // namespace urma
