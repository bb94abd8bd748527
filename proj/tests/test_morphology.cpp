#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "urma/morphology.hpp"

using namespace urma;

namespace {

const std::filesystem::path kRobotsDir = URMA_ROBOTS_DIR;

std::string minimal_spec(const std::string& joints) {
  return R"(name: tiny
class: quadruped
pd: {kp: 20, kd: 0.5, action_scale: 0.25}
body: {mass: 1.0, length: 0.3, width: 0.2, height: 0.2}
joints:
)" + joints + R"(feet:
  - {name: f0, position: [0.1, 0.1, -0.16], side: left}
reward_coefficients: {t1: 2, t2: 1, t3: 2, t4: 0.05, t5: 0.2, t6: 0, t7: 10, t8: 2.5e-7, t9: 2e-4, t10: 0.01, t11: 30, t12: 1, t13: 0.1, t14: 0.5, curriculum_steps: 12e6}
)";
}

std::string joint_entry(const std::string& name, const std::string& torque = "10") {
  return "  - {name: " + name +
         ", position: [0.1, 0.1, 0], axis: [0, 1, 0], child_count: 0, nominal: 0, torque_limit: " + torque +
         ", velocity_limit: 20, damping: 0.1, rotor_inertia: 0.01, stiffness: 0, friction: 0.05, control_range: [-1, "
         "1]}\n";
}

}  // namespace

TEST(Morphology, LoadsUnitreeA1FromSpecFile) {
  const RobotSpec a1 = load_robot_spec(kRobotsDir / "unitree_a1.yaml");
  EXPECT_EQ(a1.name, "Unitree A1");
  EXPECT_EQ(a1.morphology, MorphologyClass::quadruped);
  EXPECT_EQ(a1.joint_count(), 12u);
  EXPECT_EQ(a1.pd.kp, 20.0);
  EXPECT_EQ(a1.pd.kd, 0.5);
  EXPECT_EQ(a1.pd.action_scale, 0.25);
  EXPECT_EQ(a1.body.mass, 12.5);
  EXPECT_EQ(a1.body.length, 0.67);
  EXPECT_EQ(a1.body.width, 0.43);
  EXPECT_EQ(a1.body.height, 0.48);
}

TEST(Morphology, LoadsCustomHexapodFromSpecFile) {
  const RobotSpec hex = load_robot_spec(kRobotsDir / "hexapod.yaml");
  EXPECT_EQ(hex.joint_count(), 18u);
  EXPECT_EQ(hex.pd.kp, 30.0);
  EXPECT_EQ(hex.pd.action_scale, 0.6);
  EXPECT_EQ(hex.body.mass, 1.9);
  int center = 0;
  for (const auto& f : hex.feet) center += f.side == FootSide::center;
  EXPECT_EQ(center, 2);
}

TEST(Morphology, ShippedSpecFilesMatchReferenceTable) {
  for (const ReferenceRobot& row : reference_robots()) {
    const RobotSpec spec = load_robot_spec(kRobotsDir / (row.file_stem + ".yaml"));
    EXPECT_EQ(spec.name, row.name);
    EXPECT_EQ(static_cast<int>(spec.joint_count()), row.joints) << row.name;
    EXPECT_EQ(spec.pd.kp, row.kp);
    EXPECT_EQ(spec.pd.kd, row.kd);
    EXPECT_EQ(spec.pd.action_scale, row.action_scale);
    EXPECT_EQ(spec.body.mass, row.mass);
    EXPECT_EQ(spec.body.length, row.length);
    EXPECT_EQ(spec.body.width, row.width);
    EXPECT_EQ(spec.body.height, row.height);
    EXPECT_EQ(spec.reward, load_coefficients(row.name)) << row.name;
    EXPECT_EQ(spec, build_reference_robot(row)) << "regenerate robots/ with `urma gen-robot --reference all`";
  }
}

TEST(Morphology, DuplicateJointNameIsNamedInError) {
  const std::string text = minimal_spec(joint_entry("hip") + joint_entry("knee") + joint_entry("hip"));
  try {
    parse_robot_spec(text, "dup.yaml");
    FAIL() << "expected SpecError";
  } catch (const SpecError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("duplicate joint name 'hip'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("dup.yaml"), std::string::npos) << msg;
  }
}

TEST(Morphology, ParseErrorCarriesLineContext) {
  try {
    parse_robot_spec("name: x\nclass: [unclosed\n", "broken.yaml");
    FAIL() << "expected SpecError";
  } catch (const SpecError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.yaml:"), std::string::npos) << e.what();
  }
}

TEST(Morphology, InvariantViolationNamesField) {
  const std::string text = minimal_spec(joint_entry("hip", "-3"));
  try {
    parse_robot_spec(text, "bad.yaml");
    FAIL() << "expected SpecError";
  } catch (const SpecError& e) {
    EXPECT_NE(std::string(e.what()).find("torque_limit"), std::string::npos) << e.what();
  }
}

TEST(Morphology, NonNumericFieldReportsLine) {
  std::string text = minimal_spec(joint_entry("hip"));
  text.replace(text.find("mass: 1.0"), 9, "mass: heavy");
  try {
    parse_robot_spec(text, "nan.yaml");
    FAIL() << "expected SpecError";
  } catch (const SpecError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("nan.yaml:4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("body.mass"), std::string::npos) << msg;
  }
}

TEST(Morphology, MissingNominalHeightDefaultsByClass) {
  const RobotSpec s = parse_robot_spec(minimal_spec(joint_entry("hip")));
  EXPECT_DOUBLE_EQ(s.body.nominal_height, 0.8 * 0.2);
  EXPECT_DOUBLE_EQ(default_nominal_height(MorphologyClass::humanoid, 1.0), 0.95);
}

TEST(Morphology, DumpRoundTripsExactly) {
  for (const ReferenceRobot& row : reference_robots()) {
    const RobotSpec a = build_reference_robot(row);
    EXPECT_EQ(parse_robot_spec(dump_robot_spec(a)), a) << row.name;
  }
  const RobotSpec g = generate_surrogate_robot(7, MorphologyClass::humanoid);
  EXPECT_EQ(parse_robot_spec(dump_robot_spec(g)), g);
}

TEST(Morphology, DescriptionLayoutAndNormalization) {
  const RobotSpec a1 = build_reference_robot(reference_robots()[6]);
  ASSERT_EQ(a1.name, "Unitree A1");
  const JointDescription d = build_joint_description(a1, 0);
  EXPECT_EQ(d.size(), 23u);
  EXPECT_DOUBLE_EQ(d[16], 0.2);
  EXPECT_DOUBLE_EQ(d[17], 0.5 / 5.0);
  EXPECT_DOUBLE_EQ(d[18], 0.25);
  EXPECT_DOUBLE_EQ(d[19], 12.5 / 100.0);
  const FootDescription f = build_foot_description(a1, 0);
  EXPECT_EQ(f.size(), 10u);
  EXPECT_DOUBLE_EQ(f[3], 0.2);
  for (std::size_t j = 0; j < a1.joint_count(); ++j)
    for (double v : build_joint_description(a1, j)) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Morphology, DroppingMassDimsZeroesThoseEntries) {
  const RobotSpec a1 = build_reference_robot(reference_robots()[6]);
  const JointDescription d = build_joint_description(a1, 3, {.drop_mass_dims = true});
  for (std::size_t k = 19; k < 23; ++k) EXPECT_EQ(d[k], 0.0);
  EXPECT_DOUBLE_EQ(d[16], 0.2);
}

TEST(Morphology, GeneratorIsDeterministicPerSeed) {
  for (auto c : {MorphologyClass::quadruped, MorphologyClass::biped, MorphologyClass::humanoid,
                 MorphologyClass::hexapod, MorphologyClass::other}) {
    EXPECT_EQ(generate_surrogate_robot(42, c), generate_surrogate_robot(42, c));
    EXPECT_NE(generate_surrogate_robot(42, c), generate_surrogate_robot(43, c));
  }
}

TEST(Morphology, GeneratedQuadrupedsHaveFourFeetAndSymmetricLegs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const RobotSpec s = generate_surrogate_robot(seed, MorphologyClass::quadruped);
    EXPECT_EQ(s.foot_count(), 4u);
    EXPECT_EQ(s.joint_count() % 4, 0u);
  }
}

TEST(Morphology, HundredGeneratedSpecsPassValidatorAndRanges) {
  const MorphologyClass classes[] = {MorphologyClass::quadruped, MorphologyClass::biped, MorphologyClass::humanoid,
                                     MorphologyClass::hexapod, MorphologyClass::other};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RobotSpec s = generate_surrogate_robot(seed, classes[seed % 5]);
    EXPECT_NO_THROW(validate(s));
    EXPECT_GE(s.joint_count(), 4u);
    EXPECT_LE(s.joint_count(), 24u);
    EXPECT_GE(s.body.mass, 0.2);
    EXPECT_LE(s.body.mass, 93.3);
    EXPECT_GE(s.pd.kp, 20.0);
    EXPECT_LE(s.pd.kp, 80.0);
    EXPECT_GE(s.pd.action_scale, 0.25);
    EXPECT_LE(s.pd.action_scale, 0.75);
  }
}

TEST(Morphology, GeneratorHonorsJointRange) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const RobotSpec s = generate_surrogate_robot(seed, MorphologyClass::humanoid, {.min_joints = 16, .max_joints = 20});
    EXPECT_GE(s.joint_count(), 16u);
    EXPECT_LE(s.joint_count(), 20u);
  }
  EXPECT_THROW(generate_surrogate_robot(0, MorphologyClass::quadruped, {.min_joints = 2, .max_joints = 24}),
               std::invalid_argument);
}

TEST(Morphology, ReferenceRobotsHaveTableJointCounts) {
  for (const ReferenceRobot& row : reference_robots())
    EXPECT_EQ(static_cast<int>(build_reference_robot(row).joint_count()), row.joints) << row.name;
}

TEST(Morphology, RandomizationDisabledIsIdentity) {
  std::mt19937_64 rng(1);
  const RobotSpec s = generate_surrogate_robot(3, MorphologyClass::quadruped);
  EXPECT_EQ(randomize_robot(s, RandomizationRanges::none(), rng), s);
}

TEST(Morphology, RandomizedMassStaysInRange) {
  std::mt19937_64 rng(2);
  const RobotSpec s = generate_surrogate_robot(4, MorphologyClass::quadruped);
  for (int i = 0; i < 1000; ++i) {
    const RobotSpec r = randomize_robot(s, RandomizationRanges{}, rng);
    EXPECT_GE(r.body.mass, 0.8 * s.body.mass);
    EXPECT_LE(r.body.mass, 1.2 * s.body.mass);
    for (std::size_t j = 0; j < r.joint_count(); ++j) {
      EXPECT_LT(r.joints[j].range_min, r.joints[j].range_max);
      EXPECT_LE(std::abs(r.joints[j].nominal - s.joints[j].nominal), 0.05 + 1e-15);
    }
    EXPECT_NO_THROW(validate(r));
  }
}

TEST(Morphology, CoefficientRegistry) {
  EXPECT_EQ(coefficient_registry_names().size(), 16u);
  const RewardCoefficients op3 = load_coefficients("Robotis OP3");
  EXPECT_EQ(op3.c[3], 0.1);
  EXPECT_EQ(op3.c[7], 1.2e-6);
  EXPECT_EQ(op3.curriculum_steps, 40e6);
  const RewardCoefficients single = load_coefficients("Unitree A1", true);
  EXPECT_EQ(single.c[0], 5.0);
  EXPECT_EQ(single.c[8], 2e-5);
  EXPECT_EQ(single.curriculum_steps, 80e6);
  EXPECT_THROW(load_coefficients("Boston Dynamics Spot"), std::invalid_argument);
}
