#include "urma/morphology.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace urma {

std::string to_string(MorphologyClass c) {
  switch (c) {
    case MorphologyClass::quadruped: return "quadruped";
    case MorphologyClass::biped: return "biped";
    case MorphologyClass::humanoid: return "humanoid";
    case MorphologyClass::hexapod: return "hexapod";
    case MorphologyClass::other: return "other";
  }
  return "other";
}

std::string to_string(FootSide s) {
  switch (s) {
    case FootSide::left: return "left";
    case FootSide::right: return "right";
    case FootSide::center: return "center";
  }
  return "center";
}

MorphologyClass parse_morphology_class(const std::string& s) {
  for (auto c : {MorphologyClass::quadruped, MorphologyClass::biped, MorphologyClass::humanoid,
                 MorphologyClass::hexapod, MorphologyClass::other})
    if (to_string(c) == s) return c;
  throw SpecError("unknown morphology class '" + s + "'");
}

FootSide parse_foot_side(const std::string& s) {
  for (auto f : {FootSide::left, FootSide::right, FootSide::center})
    if (to_string(f) == s) return f;
  throw SpecError("unknown foot side '" + s + "' (expected left, right or center)");
}

double default_nominal_height(MorphologyClass c, double height) {
  return (c == MorphologyClass::biped || c == MorphologyClass::humanoid) ? 0.95 * height : 0.8 * height;
}

// ---------------------------------------------------------------------------------------------

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw SpecError(field + ": " + what);
}

bool finite3(const Vec3& v) { return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]); }

}  // namespace

void validate(const RobotSpec& spec) {
  require(!spec.name.empty(), "name", "must not be empty");
  require(!spec.joints.empty(), "joints", "at least one joint is required");
  require(!spec.feet.empty(), "feet", "at least one foot is required");
  require(spec.body.mass > 0.0, "body.mass", "must be positive");
  require(spec.body.length > 0.0, "body.length", "must be positive");
  require(spec.body.width > 0.0, "body.width", "must be positive");
  require(spec.body.height > 0.0, "body.height", "must be positive");
  require(spec.body.nominal_height > 0.0, "body.nominal_height", "must be positive");
  require(spec.pd.action_scale > 0.0, "pd.action_scale", "must be positive");
  require(spec.pd.kp >= 0.0 && std::isfinite(spec.pd.kp), "pd.kp", "must be finite and non-negative");
  require(spec.pd.kd >= 0.0 && std::isfinite(spec.pd.kd), "pd.kd", "must be finite and non-negative");
  require(spec.reward.curriculum_steps > 0.0, "reward_coefficients.curriculum_steps", "must be positive");
  for (std::size_t k = 0; k < kRewardTerms; ++k)
    require(std::isfinite(spec.reward.c[k]) && spec.reward.c[k] >= 0.0,
            "reward_coefficients.t" + std::to_string(k + 1), "must be finite and non-negative");

  std::set<std::string> names;
  for (std::size_t i = 0; i < spec.joints.size(); ++i) {
    const JointSpec& j = spec.joints[i];
    const std::string f = "joints[" + std::to_string(i) + "] (" + j.name + ")";
    require(!j.name.empty(), f + ".name", "must not be empty");
    require(names.insert(j.name).second, f + ".name", "duplicate joint name '" + j.name + "'");
    require(finite3(j.position), f + ".position", "must be finite");
    const double n = std::sqrt(j.axis[0] * j.axis[0] + j.axis[1] * j.axis[1] + j.axis[2] * j.axis[2]);
    require(std::abs(n - 1.0) <= 1e-9, f + ".axis", "must have unit norm");
    require(j.child_count >= 0, f + ".child_count", "must be non-negative");
    require(j.range_min < j.range_max, f + ".control_range", "min must be below max");
    require(j.nominal >= j.range_min && j.nominal <= j.range_max, f + ".nominal", "must lie inside control_range");
    require(j.torque_limit > 0.0, f + ".torque_limit", "must be positive");
    require(j.velocity_limit > 0.0, f + ".velocity_limit", "must be positive");
    require(j.damping >= 0.0, f + ".damping", "must be non-negative");
    require(j.rotor_inertia >= 0.0, f + ".rotor_inertia", "must be non-negative");
    require(j.stiffness >= 0.0, f + ".stiffness", "must be non-negative");
    require(j.friction >= 0.0, f + ".friction", "must be non-negative");
    require(j.foot >= -1 && j.foot < static_cast<int>(spec.feet.size()), f + ".foot", "refers to no foot");
    require(j.slot >= -1, f + ".slot", "must be -1 or a slot index");
  }
  std::set<std::string> foot_names;
  for (std::size_t i = 0; i < spec.feet.size(); ++i) {
    const FootSpec& ft = spec.feet[i];
    const std::string f = "feet[" + std::to_string(i) + "] (" + ft.name + ")";
    require(!ft.name.empty(), f + ".name", "must not be empty");
    require(foot_names.insert(ft.name).second, f + ".name", "duplicate foot name '" + ft.name + "'");
    require(finite3(ft.position), f + ".position", "must be finite");
  }
}

// ---------------------------------------------------------------------------------------------

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& field, const std::string& what) const {
    std::ostringstream msg;
    msg << source_;
    if (node.IsDefined() && !node.Mark().is_null()) msg << ':' << node.Mark().line + 1;
    msg << ": " << field << ": " << what;
    throw SpecError(msg.str());
  }

  YAML::Node child(const YAML::Node& parent, const std::string& key, const std::string& field) const {
    if (!parent.IsMap()) fail(parent, field, "expected a mapping");
    YAML::Node n = parent[key];
    if (!n.IsDefined()) fail(parent, field.empty() ? key : field + "." + key, "missing");
    return n;
  }

  double number(const YAML::Node& parent, const std::string& key, const std::string& field) const {
    YAML::Node n = child(parent, key, field);
    const std::string name = field.empty() ? key : field + "." + key;
    if (!n.IsScalar()) fail(n, name, "expected a number");
    try {
      return n.as<double>();
    } catch (const YAML::Exception&) {
      fail(n, name, "expected a number, got '" + n.Scalar() + "'");
    }
  }

  std::string text(const YAML::Node& parent, const std::string& key, const std::string& field) const {
    YAML::Node n = child(parent, key, field);
    if (!n.IsScalar()) fail(n, field.empty() ? key : field + "." + key, "expected a string");
    return n.Scalar();
  }

  Vec3 vec3(const YAML::Node& parent, const std::string& key, const std::string& field) const {
    YAML::Node n = child(parent, key, field);
    const std::string name = field + "." + key;
    if (!n.IsSequence() || n.size() != 3) fail(n, name, "expected a list of 3 numbers");
    Vec3 v{};
    for (std::size_t i = 0; i < 3; ++i) {
      try {
        v[i] = n[i].as<double>();
      } catch (const YAML::Exception&) {
        fail(n[i], name, "expected a number");
      }
    }
    return v;
  }

 private:
  std::string source_;
};

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

RobotSpec parse_robot_spec(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw SpecError(source + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                    ": parse error: " + e.msg);
  }
  Reader r(source);
  if (!root.IsMap()) r.fail(root, "<root>", "expected a mapping");

  RobotSpec spec;
  spec.name = r.text(root, "name", "");
  try {
    spec.morphology = parse_morphology_class(r.text(root, "class", ""));
  } catch (const SpecError& e) {
    r.fail(root["class"], "class", e.what());
  }

  const YAML::Node pd = r.child(root, "pd", "");
  spec.pd.kp = r.number(pd, "kp", "pd");
  spec.pd.kd = r.number(pd, "kd", "pd");
  spec.pd.action_scale = r.number(pd, "action_scale", "pd");

  const YAML::Node body = r.child(root, "body", "");
  spec.body.mass = r.number(body, "mass", "body");
  spec.body.length = r.number(body, "length", "body");
  spec.body.width = r.number(body, "width", "body");
  spec.body.height = r.number(body, "height", "body");
  spec.body.nominal_height = body["nominal_height"]
                                 ? r.number(body, "nominal_height", "body")
                                 : default_nominal_height(spec.morphology, spec.body.height);

  const YAML::Node feet = r.child(root, "feet", "");
  if (!feet.IsSequence()) r.fail(feet, "feet", "expected a list");
  for (std::size_t i = 0; i < feet.size(); ++i) {
    const std::string f = "feet[" + std::to_string(i) + "]";
    FootSpec ft;
    ft.name = r.text(feet[i], "name", f);
    ft.position = r.vec3(feet[i], "position", f);
    try {
      ft.side = parse_foot_side(r.text(feet[i], "side", f));
    } catch (const SpecError& e) {
      r.fail(feet[i]["side"], f + ".side", e.what());
    }
    spec.feet.push_back(ft);
  }

  const YAML::Node joints = r.child(root, "joints", "");
  if (!joints.IsSequence()) r.fail(joints, "joints", "expected a list");
  bool any_foot_given = false;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const YAML::Node& n = joints[i];
    const std::string f = "joints[" + std::to_string(i) + "]";
    JointSpec j;
    j.name = r.text(n, "name", f);
    if (!seen.insert(j.name).second) r.fail(n, f + ".name", "duplicate joint name '" + j.name + "'");
    j.position = r.vec3(n, "position", f);
    j.axis = r.vec3(n, "axis", f);
    j.child_count = static_cast<int>(r.number(n, "child_count", f));
    j.nominal = r.number(n, "nominal", f);
    j.torque_limit = r.number(n, "torque_limit", f);
    j.velocity_limit = r.number(n, "velocity_limit", f);
    j.damping = r.number(n, "damping", f);
    j.rotor_inertia = r.number(n, "rotor_inertia", f);
    j.stiffness = r.number(n, "stiffness", f);
    j.friction = r.number(n, "friction", f);
    const YAML::Node range = r.child(n, "control_range", f);
    if (!range.IsSequence() || range.size() != 2) r.fail(range, f + ".control_range", "expected [min, max]");
    j.range_min = range[0].as<double>();
    j.range_max = range[1].as<double>();
    if (n["foot"]) {
      any_foot_given = true;
      const std::string foot = n["foot"].Scalar();
      if (foot == "none") {
        j.foot = -1;
      } else {
        auto it = std::find_if(spec.feet.begin(), spec.feet.end(), [&](const FootSpec& ft) { return ft.name == foot; });
        if (it == spec.feet.end()) r.fail(n["foot"], f + ".foot", "unknown foot '" + foot + "'");
        j.foot = static_cast<int>(it - spec.feet.begin());
      }
    }
    if (n["slot"]) j.slot = static_cast<int>(r.number(n, "slot", f));
    spec.joints.push_back(j);
  }
  if (!any_foot_given) infer_joint_feet(spec);

  const YAML::Node rc = r.child(root, "reward_coefficients", "");
  for (std::size_t k = 0; k < kRewardTerms; ++k)
    spec.reward.c[k] = r.number(rc, "t" + std::to_string(k + 1), "reward_coefficients");
  spec.reward.curriculum_steps = r.number(rc, "curriculum_steps", "reward_coefficients");

  try {
    validate(spec);
  } catch (const SpecError& e) {
    throw SpecError(source + ": " + e.what());
  }
  return spec;
}

RobotSpec load_robot_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError(path.string() + ": cannot open robot spec file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_robot_spec(buf.str(), path.string());
}

std::string dump_robot_spec(const RobotSpec& spec) {
  YAML::Emitter out;
  auto seq3 = [&](const Vec3& v) {
    out << YAML::Flow << YAML::BeginSeq << fmt(v[0]) << fmt(v[1]) << fmt(v[2]) << YAML::EndSeq;
  };
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << spec.name;
  out << YAML::Key << "class" << YAML::Value << to_string(spec.morphology);
  out << YAML::Key << "pd" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "kp" << YAML::Value << fmt(spec.pd.kp);
  out << YAML::Key << "kd" << YAML::Value << fmt(spec.pd.kd);
  out << YAML::Key << "action_scale" << YAML::Value << fmt(spec.pd.action_scale) << YAML::EndMap;
  out << YAML::Key << "body" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "mass" << YAML::Value << fmt(spec.body.mass);
  out << YAML::Key << "length" << YAML::Value << fmt(spec.body.length);
  out << YAML::Key << "width" << YAML::Value << fmt(spec.body.width);
  out << YAML::Key << "height" << YAML::Value << fmt(spec.body.height);
  out << YAML::Key << "nominal_height" << YAML::Value << fmt(spec.body.nominal_height) << YAML::EndMap;

  out << YAML::Key << "joints" << YAML::Value << YAML::BeginSeq;
  for (const JointSpec& j : spec.joints) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << j.name;
    out << YAML::Key << "position" << YAML::Value;
    seq3(j.position);
    out << YAML::Key << "axis" << YAML::Value;
    seq3(j.axis);
    out << YAML::Key << "child_count" << YAML::Value << j.child_count;
    out << YAML::Key << "nominal" << YAML::Value << fmt(j.nominal);
    out << YAML::Key << "torque_limit" << YAML::Value << fmt(j.torque_limit);
    out << YAML::Key << "velocity_limit" << YAML::Value << fmt(j.velocity_limit);
    out << YAML::Key << "damping" << YAML::Value << fmt(j.damping);
    out << YAML::Key << "rotor_inertia" << YAML::Value << fmt(j.rotor_inertia);
    out << YAML::Key << "stiffness" << YAML::Value << fmt(j.stiffness);
    out << YAML::Key << "friction" << YAML::Value << fmt(j.friction);
    out << YAML::Key << "control_range" << YAML::Value << YAML::Flow << YAML::BeginSeq << fmt(j.range_min)
        << fmt(j.range_max) << YAML::EndSeq;
    out << YAML::Key << "foot" << YAML::Value << (j.foot >= 0 ? spec.feet[j.foot].name : std::string("none"));
    if (j.slot >= 0) out << YAML::Key << "slot" << YAML::Value << j.slot;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "feet" << YAML::Value << YAML::BeginSeq;
  for (const FootSpec& f : spec.feet) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << f.name;
    out << YAML::Key << "position" << YAML::Value;
    seq3(f.position);
    out << YAML::Key << "side" << YAML::Value << to_string(f.side);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "reward_coefficients" << YAML::Value << YAML::BeginMap;
  for (std::size_t k = 0; k < kRewardTerms; ++k)
    out << YAML::Key << ("t" + std::to_string(k + 1)) << YAML::Value << fmt(spec.reward.c[k]);
  out << YAML::Key << "curriculum_steps" << YAML::Value << fmt(spec.reward.curriculum_steps);
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

void save_robot_spec(const RobotSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw SpecError(path.string() + ": cannot write robot spec file");
  out << dump_robot_spec(spec);
}

void infer_joint_feet(RobotSpec& spec) {
  for (JointSpec& j : spec.joints) {
    if (j.position[2] > 0.0) {
      j.foot = -1;
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < spec.feet.size(); ++f) {
      const double dx = j.position[0] - spec.feet[f].position[0];
      const double dy = j.position[1] - spec.feet[f].position[1];
      const double d = dx * dx + dy * dy;
      if (d < best) {
        best = d;
        j.foot = static_cast<int>(f);
      }
    }
  }
}

// ---------------------------------------------------------------------------------------------

std::array<double, kGeneralDescriptionSize> general_description(const RobotSpec& robot,
                                                                const DescriptionOptions& options) {
  using S = DescriptionScales;
  const double keep = options.drop_mass_dims ? 0.0 : 1.0;
  return {robot.pd.kp / S::kp,
          robot.pd.kd / S::kd,
          robot.pd.action_scale / S::action_scale,
          keep * robot.body.mass / S::mass,
          keep * robot.body.length / S::dimension,
          keep * robot.body.width / S::dimension,
          keep * robot.body.height / S::dimension};
}

JointDescription build_joint_description(const RobotSpec& robot, std::size_t joint,
                                         const DescriptionOptions& options) {
  using S = DescriptionScales;
  const JointSpec& j = robot.joints.at(joint);
  JointDescription d{};
  std::size_t k = 0;
  for (double p : j.position) d[k++] = p / S::position;
  for (double a : j.axis) d[k++] = a / S::axis;
  d[k++] = j.child_count / S::child_count;
  d[k++] = j.nominal / S::angle;
  d[k++] = j.torque_limit / S::torque_limit;
  d[k++] = j.velocity_limit / S::velocity_limit;
  d[k++] = j.damping / S::damping;
  d[k++] = j.rotor_inertia / S::rotor_inertia;
  d[k++] = j.stiffness / S::stiffness;
  d[k++] = j.friction / S::friction;
  d[k++] = j.range_min / S::angle;
  d[k++] = j.range_max / S::angle;
  for (double g : general_description(robot, options)) d[k++] = g;
  return d;
}

FootDescription build_foot_description(const RobotSpec& robot, std::size_t foot, const DescriptionOptions& options) {
  using S = DescriptionScales;
  const FootSpec& f = robot.feet.at(foot);
  FootDescription d{};
  std::size_t k = 0;
  for (double p : f.position) d[k++] = p / S::position;
  for (double g : general_description(robot, options)) d[k++] = g;
  return d;
}

// ---------------------------------------------------------------------------------------------

namespace {

enum class JointKind { hip_yaw, hip_roll, hip_pitch, knee, ankle_pitch, ankle_roll };

struct JointDraw {
  double torque_per_kp;
  double velocity_limit;
  double damping;
  double rotor_inertia;
  double stiffness;
  double friction;
  double half_range;
};

// Builds one leg hanging from `hip` down to a foot at z = -depth. The knee bends forward so that
// hip pitch moves the foot along x and the knee lifts it.
void add_leg(RobotSpec& spec, const std::string& prefix, const Vec3& hip, double depth, int joints, FootSide side,
             const std::function<JointDraw()>& draw) {
  static const std::vector<std::vector<JointKind>> layouts = {
      {},
      {JointKind::hip_pitch},
      {JointKind::hip_pitch, JointKind::knee},
      {JointKind::hip_roll, JointKind::hip_pitch, JointKind::knee},
      {JointKind::hip_roll, JointKind::hip_pitch, JointKind::knee, JointKind::ankle_pitch},
      {JointKind::hip_yaw, JointKind::hip_roll, JointKind::hip_pitch, JointKind::knee, JointKind::ankle_pitch},
      {JointKind::hip_yaw, JointKind::hip_roll, JointKind::hip_pitch, JointKind::knee, JointKind::ankle_pitch,
       JointKind::ankle_roll},
  };
  const auto& layout = layouts.at(static_cast<std::size_t>(joints));
  const int foot_index = static_cast<int>(spec.feet.size());
  const double lateral = side == FootSide::left ? 1.0 : side == FootSide::right ? -1.0 : (hip[1] >= 0 ? 1.0 : -1.0);
  const double knee_forward = 0.33 * depth;
  const Vec3 foot{hip[0], hip[1] + lateral * 0.02 * depth, hip[2] - depth};
  spec.feet.push_back(FootSpec{prefix + "_foot", foot, side});

  for (std::size_t i = 0; i < layout.size(); ++i) {
    const JointDraw d = draw();
    JointSpec j;
    j.foot = foot_index;
    j.child_count = i + 1 < layout.size() ? 1 : 0;
    j.torque_limit = d.torque_per_kp * spec.pd.kp;
    j.velocity_limit = d.velocity_limit;
    j.damping = d.damping;
    j.rotor_inertia = d.rotor_inertia;
    j.stiffness = d.stiffness;
    j.friction = d.friction;
    double nominal = 0.0;
    switch (layout[i]) {
      case JointKind::hip_yaw:
        j.name = prefix + "_hip_yaw";
        j.position = {hip[0], hip[1], hip[2]};
        j.axis = {0, 0, 1};
        break;
      case JointKind::hip_roll:
        j.name = prefix + "_hip_roll";
        j.position = {hip[0], hip[1] - lateral * 0.01 * depth, hip[2]};
        j.axis = {1, 0, 0};
        break;
      case JointKind::hip_pitch:
        j.name = prefix + "_hip_pitch";
        j.position = {hip[0], hip[1] + lateral * 0.01 * depth, hip[2] - 0.02 * depth};
        j.axis = {0, 1, 0};
        nominal = 0.6;
        break;
      case JointKind::knee:
        j.name = prefix + "_knee";
        j.position = {hip[0] + knee_forward, hip[1] + lateral * 0.015 * depth, hip[2] - 0.5 * depth};
        j.axis = {0, 1, 0};
        nominal = -1.2;
        break;
      case JointKind::ankle_pitch:
        j.name = prefix + "_ankle_pitch";
        j.position = {hip[0] + 0.05 * depth, foot[1], foot[2] + 0.08 * depth};
        j.axis = {0, 1, 0};
        nominal = 0.6;
        break;
      case JointKind::ankle_roll:
        j.name = prefix + "_ankle_roll";
        j.position = {hip[0] + 0.05 * depth, foot[1], foot[2] + 0.05 * depth};
        j.axis = {1, 0, 0};
        break;
    }
    j.nominal = nominal;
    j.range_min = nominal - d.half_range;
    j.range_max = nominal + d.half_range;
    spec.joints.push_back(j);
  }
}

void add_body_joint(RobotSpec& spec, const std::string& name, const Vec3& position, const Vec3& axis, int children,
                    const JointDraw& d) {
  JointSpec j;
  j.name = name;
  j.position = position;
  j.axis = axis;
  j.child_count = children;
  j.torque_limit = d.torque_per_kp * spec.pd.kp;
  j.velocity_limit = d.velocity_limit;
  j.damping = d.damping;
  j.rotor_inertia = d.rotor_inertia;
  j.stiffness = d.stiffness;
  j.friction = d.friction;
  j.range_min = -d.half_range;
  j.range_max = d.half_range;
  spec.joints.push_back(j);
}

// Upper-body chain of `count` joints starting at `base`, alternating pitch/roll/yaw axes.
void add_arm(RobotSpec& spec, const std::string& prefix, const Vec3& base, double reach, int count,
             const std::function<JointDraw()>& draw) {
  static const Vec3 axes[] = {{0, 1, 0}, {1, 0, 0}, {0, 0, 1}};
  for (int i = 0; i < count; ++i) {
    const Vec3 p{base[0], base[1], base[2] - reach * i / std::max(1, count)};
    add_body_joint(spec, prefix + "_" + std::to_string(i), p, axes[i % 3], i + 1 < count ? 1 : 0, draw());
  }
}

struct LegLayout {
  int legs = 4;
  std::vector<int> joints_per_leg;
  int body_joints = 0;
};

// Places legs and body joints for a robot whose attributes are already set.
void build_geometry(RobotSpec& spec, const LegLayout& layout, const std::function<JointDraw()>& draw) {
  const double L = spec.body.length, W = spec.body.width, h = spec.body.nominal_height;
  const bool upright = spec.morphology == MorphologyClass::biped || spec.morphology == MorphologyClass::humanoid;
  const double hip_z = upright ? -0.45 * h : 0.0;
  const double depth = upright ? 0.55 * h : h;

  if (layout.legs == 2) {
    add_leg(spec, "L", {0.0, 0.25 * W, hip_z}, depth, layout.joints_per_leg[0], FootSide::left, draw);
    add_leg(spec, "R", {0.0, -0.25 * W, hip_z}, depth, layout.joints_per_leg[1], FootSide::right, draw);
  } else if (layout.legs == 4) {
    const char* names[] = {"FL", "FR", "RL", "RR"};
    for (int i = 0; i < 4; ++i) {
      const double x = (i < 2 ? 0.4 : -0.4) * L;
      const bool left = i % 2 == 0;
      add_leg(spec, names[i], {x, (left ? 0.4 : -0.4) * W, hip_z}, depth, layout.joints_per_leg[i],
              left ? FootSide::left : FootSide::right, draw);
    }
  } else if (layout.legs == 6) {
    const char* names[] = {"L1", "R1", "L2", "R2", "L3", "R3"};
    for (int i = 0; i < 6; ++i) {
      const double x = (0.4 - 0.4 * (i / 2)) * L;
      const bool left = i % 2 == 0;
      const FootSide side = (i / 2 == 1) ? FootSide::center : (left ? FootSide::left : FootSide::right);
      add_leg(spec, names[i], {x, (left ? 0.45 : -0.45) * W, hip_z}, depth, layout.joints_per_leg[i], side, draw);
      if (side == FootSide::center) {
        // Keep the lateral offset of middle legs even though they are excluded from the symmetry pairing.
        spec.feet.back().position[1] = (left ? 0.47 : -0.47) * W;
      }
    }
  } else {
    for (int i = 0; i < layout.legs; ++i) {
      const double angle = 2.0 * 3.14159265358979323846 * (i + 0.5) / layout.legs;
      const double y = 0.45 * W * std::sin(angle);
      const FootSide side = std::abs(y) < 1e-6 ? FootSide::center : (y > 0 ? FootSide::left : FootSide::right);
      add_leg(spec, "leg" + std::to_string(i), {0.45 * L * std::cos(angle), y, hip_z}, depth,
              layout.joints_per_leg[i], side, draw);
    }
  }

  const double top = upright ? 0.4 * spec.body.height : 0.3 * spec.body.height;
  int remaining = layout.body_joints;
  if (!upright) {
    for (int i = 0; i < remaining; ++i)
      add_body_joint(spec, "spine_" + std::to_string(i), {0.0, 0.0, 0.05 * spec.body.height}, {0, 0, 1}, 0, draw());
    return;
  }
  // Odd counts get one waist joint; large even counts a two-joint torso; mid-size even counts a two-joint head.
  int torso = remaining % 2;
  int head = 0;
  if (torso == 0 && remaining >= 12) torso = 2;
  if (torso == 0 && (remaining == 8 || remaining == 10)) head = 2;
  for (int i = 0; i < torso; ++i)
    add_body_joint(spec, "torso_" + std::to_string(i), {0.0, 0.0, 0.05 * i}, i == 0 ? Vec3{0, 0, 1} : Vec3{0, 1, 0},
                   1, draw());
  remaining -= torso + head;
  const int arm = remaining / 2;
  add_arm(spec, "L_arm", {0.0, 0.5 * W, top}, 0.3 * spec.body.height, arm, draw);
  add_arm(spec, "R_arm", {0.0, -0.5 * W, top}, 0.3 * spec.body.height, remaining - arm, draw);
  for (int i = 0; i < head; ++i)
    add_body_joint(spec, "head_" + std::to_string(i), {0.0, 0.0, top + 0.1}, i == 0 ? Vec3{0, 0, 1} : Vec3{0, 1, 0},
                   i == 0 ? 1 : 0, draw());
}

RewardCoefficients class_coefficients(MorphologyClass c) {
  switch (c) {
    case MorphologyClass::quadruped: return load_coefficients("Unitree A1");
    case MorphologyClass::biped: return load_coefficients("Agility Robotics Cassie");
    case MorphologyClass::humanoid: return load_coefficients("Unitree H1");
    case MorphologyClass::hexapod: return load_coefficients("Custom Hexapod");
    case MorphologyClass::other: return default_coefficients();
  }
  return default_coefficients();
}

std::function<JointDraw()> reference_draw() {
  return [] { return JointDraw{1.5, 20.0, 0.1, 0.01, 0.0, 0.05, 0.9}; };
}

}  // namespace

RobotSpec generate_surrogate_robot(std::uint64_t seed, MorphologyClass morphology, GeneratorOptions options) {
  if (options.min_joints < 4 || options.max_joints > 24 || options.min_joints > options.max_joints)
    throw std::invalid_argument("generate_surrogate_robot: joint range must lie within [4, 24]");
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(morphology) + 1);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](const std::vector<int>& options_) {
    return options_.at(std::uniform_int_distribution<std::size_t>(0, options_.size() - 1)(rng));
  };

  RobotSpec spec;
  spec.morphology = morphology;
  spec.name = "gen-" + to_string(morphology) + "-" + std::to_string(seed);

  LegLayout layout;
  auto feasible_totals = [&](int legs, int lo, int hi) {
    std::vector<int> per;
    for (int k = lo; k <= hi; ++k)
      if (legs * k >= options.min_joints && legs * k <= options.max_joints) per.push_back(k);
    return per;
  };
  switch (morphology) {
    case MorphologyClass::quadruped: {
      auto per = feasible_totals(4, 1, 6);
      if (per.empty()) throw std::invalid_argument("no quadruped layout fits the joint range");
      layout.legs = 4;
      layout.joints_per_leg.assign(4, pick(per));
      break;
    }
    case MorphologyClass::hexapod: {
      auto per = feasible_totals(6, 1, 4);
      if (per.empty()) throw std::invalid_argument("no hexapod layout fits the joint range");
      layout.legs = 6;
      layout.joints_per_leg.assign(6, pick(per));
      break;
    }
    case MorphologyClass::biped: {
      auto per = feasible_totals(2, 2, 6);
      if (per.empty()) throw std::invalid_argument("no biped layout fits the joint range");
      layout.legs = 2;
      layout.joints_per_leg.assign(2, pick(per));
      break;
    }
    case MorphologyClass::humanoid: {
      std::vector<int> per;
      for (int k = 2; k <= 6; ++k)
        if (2 * k <= options.max_joints) per.push_back(k);
      const int k = pick(per);
      const int lo = std::max(options.min_joints - 2 * k, 2);
      const int hi = options.max_joints - 2 * k;
      layout.legs = 2;
      layout.joints_per_leg.assign(2, k);
      layout.body_joints = hi >= lo ? static_cast<int>(std::uniform_int_distribution<int>(lo, hi)(rng)) : 0;
      break;
    }
    case MorphologyClass::other: {
      layout.legs = pick({3, 5});
      auto per = feasible_totals(layout.legs, 1, 4);
      if (per.empty()) throw std::invalid_argument("no layout fits the joint range");
      layout.joints_per_leg.assign(layout.legs, pick(per));
      break;
    }
  }

  const bool upright = morphology == MorphologyClass::biped || morphology == MorphologyClass::humanoid;
  spec.body.length = upright ? uni(0.17, 0.6) : uni(0.3, 1.2);
  spec.body.width = upright ? spec.body.length * uni(1.0, 2.4) : spec.body.length * uni(0.45, 0.8);
  spec.body.height = upright ? uni(0.5, 1.8) : spec.body.length * uni(0.35, 1.1);
  spec.body.width = std::clamp(spec.body.width, 0.12, 1.1);
  spec.body.mass = std::clamp(75.0 * spec.body.length * spec.body.width * spec.body.height * uni(0.7, 1.4), 0.2, 93.3);
  spec.body.nominal_height = default_nominal_height(morphology, spec.body.height);
  spec.pd.kp = uni(20.0, 80.0);
  spec.pd.kd = std::clamp(spec.pd.kp / 40.0 * uni(0.8, 1.25), 0.5, 2.0);
  spec.pd.action_scale = uni(0.25, 0.75);
  spec.reward = class_coefficients(morphology);

  auto draw = [&] {
    return JointDraw{uni(1.2, 2.5),
                     uni(10.0, 30.0),
                     uni(0.01, 0.3),
                     uni(0.001, 0.03),
                     uni(0.0, 1.0) < 0.8 ? 0.0 : uni(0.0, 2.0),
                     uni(0.0, 0.2),
                     uni(0.6, 1.2)};
  };
  build_geometry(spec, layout, draw);
  validate(spec);
  return spec;
}

const std::vector<ReferenceRobot>& reference_robots() {
  using M = MorphologyClass;
  static const std::vector<ReferenceRobot> rows = {
      {"ANYbotics ANYmal B", "anymal_b", M::quadruped, 12, 80.0, 2.0, 0.5, 33.3, 1.21, 0.81, 1.37},
      {"ANYbotics ANYmal C", "anymal_c", M::quadruped, 12, 80.0, 2.0, 0.5, 45.0, 1.09, 0.88, 0.91},
      {"Google Barkour v0", "barkour_v0", M::quadruped, 12, 20.0, 0.5, 0.25, 11.5, 0.70, 0.38, 0.45},
      {"Google Barkour vB", "barkour_vb", M::quadruped, 12, 30.0, 0.5, 0.25, 11.5, 0.73, 0.48, 0.49},
      {"MAB Silver Badger", "silver_badger", M::quadruped, 13, 20.0, 0.5, 0.25, 13.12, 0.78, 0.41, 0.52},
      {"Petoi Bittle", "bittle", M::quadruped, 8, 25.0, 0.5, 0.6, 0.2, 0.17, 0.12, 0.12},
      {"Unitree A1", "unitree_a1", M::quadruped, 12, 20.0, 0.5, 0.25, 12.5, 0.67, 0.43, 0.48},
      {"Unitree Go1", "unitree_go1", M::quadruped, 12, 20.0, 0.5, 0.25, 12.7, 0.70, 0.42, 0.48},
      {"Unitree Go2", "unitree_go2", M::quadruped, 12, 20.0, 0.5, 0.3, 15.2, 0.75, 0.44, 0.48},
      {"Agility Robotics Cassie", "cassie", M::biped, 10, 70.0, 2.0, 0.6, 33.3, 0.60, 0.60, 1.26},
      {"PAL Robotics Talos", "talos", M::humanoid, 24, 80.0, 2.0, 0.75, 93.3, 0.46, 1.10, 1.65},
      {"Robotis OP3", "op3", M::humanoid, 20, 21.0, 0.5, 0.6, 3.1, 0.24, 0.28, 0.53},
      {"SoftBank Nao V5", "nao_v5", M::humanoid, 22, 30.0, 0.5, 0.6, 5.3, 0.17, 0.43, 0.59},
      {"Unitree G1", "unitree_g1", M::humanoid, 23, 45.0, 1.0, 0.5, 32.2, 0.29, 0.55, 1.26},
      {"Unitree H1", "unitree_h1", M::humanoid, 19, 60.0, 2.0, 0.75, 51.4, 0.55, 0.83, 1.77},
      {"Custom Hexapod", "hexapod", M::hexapod, 18, 30.0, 0.5, 0.6, 1.9, 0.43, 0.56, 0.24},
  };
  return rows;
}

RobotSpec build_reference_robot(const ReferenceRobot& row) {
  RobotSpec spec;
  spec.name = row.name;
  spec.morphology = row.morphology;
  spec.pd = PdGains{row.kp, row.kd, row.action_scale};
  spec.body = BodySpec{row.mass, row.length, row.width, row.height, default_nominal_height(row.morphology, row.height)};
  spec.reward = load_coefficients(row.name);

  LegLayout layout;
  switch (row.morphology) {
    case MorphologyClass::quadruped: {
      layout.legs = 4;
      const int per = row.joints / 4;
      layout.joints_per_leg.assign(4, per);
      layout.body_joints = row.joints - 4 * per;
      break;
    }
    case MorphologyClass::hexapod:
      layout.legs = 6;
      layout.joints_per_leg.assign(6, row.joints / 6);
      break;
    case MorphologyClass::biped:
      layout.legs = 2;
      layout.joints_per_leg.assign(2, row.joints / 2);
      break;
    case MorphologyClass::humanoid: {
      layout.legs = 2;
      const int per = row.joints >= 20 ? 6 : 5;
      layout.joints_per_leg.assign(2, per);
      layout.body_joints = row.joints - 2 * per;
      break;
    }
    case MorphologyClass::other:
      throw std::invalid_argument("reference robots have a fixed class");
  }
  build_geometry(spec, layout, reference_draw());
  auto round4 = [](double v) { return std::round(v * 1e4) / 1e4; };
  for (JointSpec& j : spec.joints) {
    for (double& p : j.position) p = round4(p);
    j.range_min = round4(j.range_min);
    j.range_max = round4(j.range_max);
  }
  for (FootSpec& f : spec.feet)
    for (double& p : f.position) p = round4(p);
  validate(spec);
  return spec;
}

// ---------------------------------------------------------------------------------------------

RandomizationRanges RandomizationRanges::none() {
  RandomizationRanges r;
  r.mass = r.torque_limit = r.velocity_limit = r.damping = r.rotor_inertia = r.stiffness = r.friction = r.gains =
      r.control_range = r.nominal_offset = 0.0;
  return r;
}

RobotSpec randomize_robot(const RobotSpec& spec, const RandomizationRanges& ranges, std::mt19937_64& rng) {
  auto factor = [&](double r) {
    if (r <= 0.0) return 1.0;
    return std::uniform_real_distribution<double>(1.0 - r, 1.0 + r)(rng);
  };
  auto offset = [&](double r) {
    if (r <= 0.0) return 0.0;
    return std::uniform_real_distribution<double>(-r, r)(rng);
  };
  RobotSpec out = spec;
  out.body.mass *= factor(ranges.mass);
  out.pd.kp *= factor(ranges.gains);
  out.pd.kd *= factor(ranges.gains);
  for (JointSpec& j : out.joints) {
    j.torque_limit *= factor(ranges.torque_limit);
    j.velocity_limit *= factor(ranges.velocity_limit);
    j.damping *= factor(ranges.damping);
    j.rotor_inertia *= factor(ranges.rotor_inertia);
    j.stiffness *= factor(ranges.stiffness);
    j.friction *= factor(ranges.friction);
    // Both range ends scale about the nominal position, so the span stays positive.
    j.range_min = j.nominal - (j.nominal - j.range_min) * factor(ranges.control_range);
    j.range_max = j.nominal + (j.range_max - j.nominal) * factor(ranges.control_range);
    j.nominal = std::clamp(j.nominal + offset(ranges.nominal_offset), j.range_min, j.range_max);
  }
  return out;
}

}  // namespace urma
