#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "urma/morphology.hpp"
#include "urma/observation.hpp"
#include "urma/reward.hpp"

namespace urma {

struct NoiseScales {
  double joints = 0.01;
  double feet = 0.01;
  double angular_velocity = 0.05;
  double gravity = 0.02;

  static NoiseScales none() { return {0.0, 0.0, 0.0, 0.0}; }
};

/// Per-group probability of zeroing each observation entry. Commands and robot constants are never dropped.
struct DropoutProbabilities {
  double joints = 0.05;
  double feet = 0.05;
  double angular_velocity = 0.05;
  double gravity = 0.05;

  static DropoutProbabilities none() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct EnvConfig {
  double dt = 0.02;
  int substeps = 10;
  int episode_length = 500;

  /// v_x, v_y drawn from U[-1, 1] * command_velocity * size(robot); yaw rate from U[-1, 1] * command_yaw.
  double command_velocity = 1.0;
  double command_yaw = 1.0;

  bool randomize = true;
  RandomizationRanges ranges;
  double init_joint_offset = 0.1;
  double init_joint_velocity = 0.5;
  double init_velocity = 0.3;
  double init_angular_velocity = 0.2;
  double init_tilt = 0.05;

  NoiseScales noise;
  DropoutProbabilities dropout;
  DescriptionOptions description;

  /// Per-step redraw probability for commands and for domain randomization; negative means 2 / episode_length.
  double resample_probability = -1.0;
  double push_probability = 0.002;
  double push_magnitude = 0.5;

  double max_tilt = 1.0;
  double min_height_fraction = 0.3;
  double action_clip = 10.0;

  /// Multiplies the curriculum length of every coefficient set.
  double curriculum_scale = 1.0;
  /// Replaces the per-robot coefficient sets when present.
  std::optional<RewardCoefficients> reward_override;

  double effective_resample_probability() const {
    return resample_probability >= 0.0 ? resample_probability : 2.0 / episode_length;
  }
  void validate() const;
};

/// Linearized foot kinematics of one leg: foot displacement = sum_j lever_j * (q_j - q_nominal_j).
struct LegModel {
  struct Leg {
    std::vector<std::pair<std::size_t, Vec3>> joints;
    Vec3 foot{};
    double depth = 0.0;
  };
  std::vector<Leg> legs;
  std::vector<double> nominal;
  double lateral_span = 0.0;
  double longitudinal_span = 0.0;

  explicit LegModel(const RobotSpec& robot);
};

struct EnvState {
  RobotPtr base;   // spec as loaded
  RobotPtr robot;  // active draw of the randomized spec
  std::shared_ptr<const LegModel> legs;

  std::vector<double> q, qd, torque, previous_action;
  Vec3 velocity{};          // x, y, z in the trunk frame
  Vec3 angular_velocity{};  // roll rate, pitch rate, yaw rate
  double roll = 0.0;
  double pitch = 0.0;
  double height = 0.0;
  std::vector<std::uint8_t> contact;
  std::vector<double> air_time;
  Vec3 command{};
  int step = 0;
  int command_draws = 0;
  int randomization_draws = 0;
  std::mt19937_64 rng;
};

struct StepResult {
  ObservationBundle observation;
  RewardBreakdown reward;
  bool done = false;
  bool fell = false;
  bool truncated = false;
};

/// Command range scale: v_x, v_y bounds shrink for small robots.
double command_size_scale(const RobotSpec& robot);

std::pair<EnvState, ObservationBundle> reset(RobotPtr robot, const EnvConfig& config, std::mt19937_64& rng);

std::vector<double> pd_torque(const EnvState& state, std::span<const double> action, const RobotSpec& robot);

/// One PD-free integration substep of all joints under the given torques.
void integrate_joints(std::vector<double>& q, std::vector<double>& qd, std::span<const double> torque,
                      const RobotSpec& robot, const std::vector<double>& spring_nominal, double h);

/// Advances one control step. `curriculum_step` is the penalty-curriculum clock t.
StepResult step(EnvState& state, std::span<const double> action, const EnvConfig& config, double curriculum_step);

ObservationBundle assemble_observations(const EnvState& state, const EnvConfig& config, std::mt19937_64& rng);

void maybe_resample(EnvState& state, const EnvConfig& config, std::mt19937_64& rng);
void sample_command(EnvState& state, const EnvConfig& config, std::mt19937_64& rng);
void perturb(EnvState& state, const EnvConfig& config, std::mt19937_64& rng);

/// Unit gravity direction in the trunk frame.
Vec3 gravity_in_trunk(double roll, double pitch);

/// Per-step CSV dump of one episode.
class TrajectoryWriter {
 public:
  TrajectoryWriter(const std::string& path, const RobotSpec& robot);
  void write(const EnvState& state, std::span<const double> action, const RewardBreakdown& reward, bool done);

 private:
  std::ofstream out_;
};

}  // namespace urma
