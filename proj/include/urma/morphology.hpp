#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "urma/reward_coefficients.hpp"

namespace urma {

using Vec3 = std::array<double, 3>;

enum class MorphologyClass { quadruped, biped, humanoid, hexapod, other };
enum class FootSide { left, right, center };

std::string to_string(MorphologyClass c);
std::string to_string(FootSide s);
MorphologyClass parse_morphology_class(const std::string& s);
FootSide parse_foot_side(const std::string& s);

struct JointSpec {
  std::string name;
  Vec3 position{};
  Vec3 axis{1.0, 0.0, 0.0};
  int child_count = 0;
  double nominal = 0.0;
  double torque_limit = 1.0;
  double velocity_limit = 1.0;
  double damping = 0.0;
  double rotor_inertia = 0.0;
  double stiffness = 0.0;
  double friction = 0.0;
  double range_min = -1.0;
  double range_max = 1.0;
  /// Index of the foot this joint moves, -1 for joints outside the legs.
  int foot = -1;
  /// Canonical slot in the multi-head layout of the robot's class; -1 uses the joint index.
  int slot = -1;

  bool operator==(const JointSpec&) const = default;
};

struct FootSpec {
  std::string name;
  Vec3 position{};
  FootSide side = FootSide::center;

  bool operator==(const FootSpec&) const = default;
};

struct PdGains {
  double kp = 20.0;
  double kd = 0.5;
  double action_scale = 0.25;

  bool operator==(const PdGains&) const = default;
};

struct BodySpec {
  double mass = 1.0;
  double length = 1.0;
  double width = 1.0;
  double height = 1.0;
  double nominal_height = 0.8;

  bool operator==(const BodySpec&) const = default;
};

struct RobotSpec {
  std::string name;
  MorphologyClass morphology = MorphologyClass::other;
  std::vector<JointSpec> joints;
  std::vector<FootSpec> feet;
  PdGains pd;
  BodySpec body;
  RewardCoefficients reward;

  std::size_t joint_count() const { return joints.size(); }
  std::size_t foot_count() const { return feet.size(); }
  int joint_slot(std::size_t j) const { return joints[j].slot >= 0 ? joints[j].slot : static_cast<int>(j); }
  bool operator==(const RobotSpec&) const = default;
};

using RobotPtr = std::shared_ptr<const RobotSpec>;

class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double default_nominal_height(MorphologyClass c, double height);

/// Throws SpecError naming the first violated field.
void validate(const RobotSpec& spec);

RobotSpec load_robot_spec(const std::filesystem::path& path);
RobotSpec parse_robot_spec(const std::string& text, const std::string& source = "<string>");
std::string dump_robot_spec(const RobotSpec& spec);
void save_robot_spec(const RobotSpec& spec, const std::filesystem::path& path);

constexpr std::size_t kJointDescriptionSize = 23;
constexpr std::size_t kFootDescriptionSize = 10;
constexpr std::size_t kGeneralDescriptionSize = 7;

using JointDescription = std::array<double, kJointDescriptionSize>;
using FootDescription = std::array<double, kFootDescriptionSize>;

struct DescriptionOptions {
  /// Zeroes the mass and dimension entries (m, L, W, H).
  bool drop_mass_dims = false;
};

/// Global divisors applied to every description and robot-constant observation entry.
struct DescriptionScales {
  static constexpr double position = 1.0;
  static constexpr double axis = 1.0;
  static constexpr double child_count = 4.0;
  static constexpr double angle = 3.14159265358979323846;
  static constexpr double torque_limit = 200.0;
  static constexpr double velocity_limit = 30.0;
  static constexpr double damping = 1.0;
  static constexpr double rotor_inertia = 0.1;
  static constexpr double stiffness = 10.0;
  static constexpr double friction = 1.0;
  static constexpr double kp = 100.0;
  static constexpr double kd = 5.0;
  static constexpr double action_scale = 1.0;
  static constexpr double mass = 100.0;
  static constexpr double dimension = 2.0;
};

std::array<double, kGeneralDescriptionSize> general_description(const RobotSpec& robot,
                                                                const DescriptionOptions& options = {});
JointDescription build_joint_description(const RobotSpec& robot, std::size_t joint,
                                         const DescriptionOptions& options = {});
FootDescription build_foot_description(const RobotSpec& robot, std::size_t foot,
                                       const DescriptionOptions& options = {});

struct GeneratorOptions {
  int min_joints = 4;
  int max_joints = 24;
};

/// Procedural robot with attributes inside the ranges spanned by the reference table. Deterministic per seed.
RobotSpec generate_surrogate_robot(std::uint64_t seed, MorphologyClass morphology, GeneratorOptions options = {});

/// Reference robots: attribute rows and a plausible invented joint layout for each.
struct ReferenceRobot {
  std::string name;
  std::string file_stem;
  MorphologyClass morphology;
  int joints;
  double kp, kd, action_scale, mass, length, width, height;
};

const std::vector<ReferenceRobot>& reference_robots();
RobotSpec build_reference_robot(const ReferenceRobot& row);

/// Relative perturbation half-widths; multiplicative draws are U[1 - r, 1 + r].
struct RandomizationRanges {
  double mass = 0.2;
  double torque_limit = 0.2;
  double velocity_limit = 0.2;
  double damping = 0.2;
  double rotor_inertia = 0.2;
  double stiffness = 0.2;
  double friction = 0.2;
  double gains = 0.2;
  double control_range = 0.2;
  /// Additive, radians.
  double nominal_offset = 0.05;

  static RandomizationRanges none();
};

RobotSpec randomize_robot(const RobotSpec& spec, const RandomizationRanges& ranges, std::mt19937_64& rng);

/// Assigns each leg joint to its nearest foot when the spec file leaves the mapping out.
void infer_joint_feet(RobotSpec& spec);

}  // namespace urma
