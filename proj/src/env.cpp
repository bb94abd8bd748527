#include "urma/env.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <stdexcept>

namespace urma {

namespace {

constexpr double kBaseInertia = 0.01;
constexpr double kGravity = 9.81;

// Trunk surrogate constants.
constexpr double kTraction = 50.0;      // 1/s, pull of stance feet on trunk velocity
constexpr double kDrag = 0.5;           // 1/s
constexpr double kTiltStiffness = 100.0;
constexpr double kTiltDamping = 15.0;
constexpr double kHeightStiffness = 100.0;
constexpr double kHeightDamping = 20.0;
constexpr double kTipGain = 0.3;
constexpr double kLiftThreshold = 0.05;  // fraction of leg depth

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double symmetric(std::mt19937_64& rng, double half) { return half > 0.0 ? uniform(rng, -half, half) : 0.0; }

double gaussian(std::mt19937_64& rng, double sigma) {
  return sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
}

double dropped(std::mt19937_64& rng, double p, double value) {
  if (p <= 0.0) return value;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 0.0 : value;
}

struct LegKinematics {
  std::vector<double> lift;
  std::vector<Vec3> foot_velocity;
};

LegKinematics leg_kinematics(const LegModel& model, std::span<const double> q, std::span<const double> qd) {
  LegKinematics k;
  k.lift.resize(model.legs.size());
  k.foot_velocity.resize(model.legs.size());
  for (std::size_t f = 0; f < model.legs.size(); ++f) {
    Vec3 u{};
    double z = 0.0;
    for (const auto& [j, lever] : model.legs[f].joints) {
      z += lever[2] * (q[j] - model.nominal[j]);
      for (int d = 0; d < 3; ++d) u[d] += lever[d] * qd[j];
    }
    k.lift[f] = z;
    k.foot_velocity[f] = u;
  }
  return k;
}

void update_contacts(EnvState& s, const std::vector<double>& lift) {
  for (std::size_t f = 0; f < s.legs->legs.size(); ++f)
    s.contact[f] = lift[f] < kLiftThreshold * s.legs->legs[f].depth ? 1 : 0;
}

}  // namespace

void EnvConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("EnvConfig: ") + what);
  };
  auto probability = [](double p) { return p >= 0.0 && p <= 1.0; };
  require(dt > 0.0, "dt must be positive");
  require(substeps >= 1, "substeps must be at least 1");
  require(episode_length >= 1, "episode_length must be at least 1");
  require(command_velocity >= 0.0 && command_yaw >= 0.0, "command ranges must be non-negative");
  require(resample_probability <= 1.0, "resample_probability must be at most 1");
  require(probability(push_probability), "push_probability must lie in [0, 1]");
  require(push_magnitude >= 0.0, "push_magnitude must be non-negative");
  require(probability(dropout.joints) && probability(dropout.feet) && probability(dropout.angular_velocity) &&
              probability(dropout.gravity),
          "dropout probabilities must lie in [0, 1]");
  require(noise.joints >= 0.0 && noise.feet >= 0.0 && noise.angular_velocity >= 0.0 && noise.gravity >= 0.0,
          "noise scales must be non-negative");
  require(max_tilt > 0.0, "max_tilt must be positive");
  require(action_clip > 0.0, "action_clip must be positive");
  require(curriculum_scale > 0.0, "curriculum_scale must be positive");
}

LegModel::LegModel(const RobotSpec& robot) {
  legs.resize(robot.foot_count());
  for (std::size_t f = 0; f < robot.foot_count(); ++f) {
    legs[f].foot = robot.feet[f].position;
    lateral_span = std::max(lateral_span, std::abs(legs[f].foot[1]));
    longitudinal_span = std::max(longitudinal_span, std::abs(legs[f].foot[0]));
  }
  for (std::size_t j = 0; j < robot.joint_count(); ++j) {
    const auto& js = robot.joints[j];
    nominal.push_back(js.nominal);
    if (js.foot < 0 || static_cast<std::size_t>(js.foot) >= legs.size()) continue;
    auto& leg = legs[js.foot];
    const Vec3 r{leg.foot[0] - js.position[0], leg.foot[1] - js.position[1], leg.foot[2] - js.position[2]};
    leg.joints.emplace_back(j, cross(js.axis, r));
    leg.depth = std::max(leg.depth, js.position[2] - leg.foot[2]);
  }
  for (auto& leg : legs)
    if (leg.depth <= 0.0) leg.depth = robot.body.nominal_height;
  const double floor = 0.25 * robot.body.nominal_height;
  lateral_span = std::max(lateral_span, floor);
  longitudinal_span = std::max(longitudinal_span, floor);
}

double command_size_scale(const RobotSpec& robot) {
  return std::clamp(robot.body.nominal_height / 0.5, 0.2, 1.0);
}

Vec3 gravity_in_trunk(double roll, double pitch) {
  return {std::sin(pitch), -std::sin(roll) * std::cos(pitch), -std::cos(roll) * std::cos(pitch)};
}

void sample_command(EnvState& s, const EnvConfig& config, std::mt19937_64& rng) {
  const double v = config.command_velocity * command_size_scale(*s.base);
  s.command[0] = symmetric(rng, v);
  s.command[1] = symmetric(rng, v);
  s.command[2] = symmetric(rng, config.command_yaw);
}

std::pair<EnvState, ObservationBundle> reset(RobotPtr robot, const EnvConfig& config, std::mt19937_64& rng) {
  if (!robot) throw std::invalid_argument("reset: null robot");
  config.validate();
  EnvState s;
  s.rng.seed(rng());
  s.base = robot;
  s.robot = config.randomize ? std::make_shared<const RobotSpec>(randomize_robot(*robot, config.ranges, s.rng))
                             : robot;
  s.legs = std::make_shared<const LegModel>(*robot);
  const auto& active = *s.robot;
  const std::size_t nj = active.joint_count(), nf = active.foot_count();
  s.q.resize(nj);
  s.qd.resize(nj);
  for (std::size_t j = 0; j < nj; ++j) {
    const auto& js = active.joints[j];
    const double offset = config.randomize ? symmetric(s.rng, config.init_joint_offset) : 0.0;
    const double rate = config.randomize ? symmetric(s.rng, config.init_joint_velocity) : 0.0;
    s.q[j] = std::clamp(js.nominal + offset, js.range_min, js.range_max);
    s.qd[j] = std::clamp(rate, -js.velocity_limit, js.velocity_limit);
  }
  s.torque.assign(nj, 0.0);
  s.previous_action.assign(nj, 0.0);
  if (config.randomize) {
    const double v = config.init_velocity * command_size_scale(*robot);
    s.velocity = {symmetric(s.rng, v), symmetric(s.rng, v), 0.0};
    for (auto& w : s.angular_velocity) w = symmetric(s.rng, config.init_angular_velocity);
    s.roll = symmetric(s.rng, config.init_tilt);
    s.pitch = symmetric(s.rng, config.init_tilt);
  }
  s.height = robot->body.nominal_height;
  s.contact.assign(nf, 1);
  s.air_time.assign(nf, 0.0);
  update_contacts(s, leg_kinematics(*s.legs, s.q, s.qd).lift);
  sample_command(s, config, s.rng);
  ObservationBundle obs = assemble_observations(s, config, s.rng);
  return {std::move(s), std::move(obs)};
}

std::vector<double> pd_torque(const EnvState& state, std::span<const double> action, const RobotSpec& robot) {
  if (action.size() != robot.joint_count())
    throw std::invalid_argument("pd_torque: expected " + std::to_string(robot.joint_count()) + " actions, got " +
                                std::to_string(action.size()));
  std::vector<double> tau(robot.joint_count());
  for (std::size_t j = 0; j < tau.size(); ++j) {
    const auto& js = robot.joints[j];
    const double target = js.nominal + robot.pd.action_scale * action[j];
    const double t = robot.pd.kp * (target - state.q[j]) - robot.pd.kd * state.qd[j];
    tau[j] = std::clamp(t, -js.torque_limit, js.torque_limit);
  }
  return tau;
}

void integrate_joints(std::vector<double>& q, std::vector<double>& qd, std::span<const double> torque,
                      const RobotSpec& robot, const std::vector<double>& spring_nominal, double h) {
  for (std::size_t j = 0; j < q.size(); ++j) {
    const auto& js = robot.joints[j];
    const double inertia = js.rotor_inertia + kBaseInertia;
    const double drive = torque[j] - js.stiffness * (q[j] - spring_nominal[j]);
    // Damping is integrated implicitly; Coulomb friction can stop the joint but never reverse it.
    double v = (qd[j] + h * drive / inertia) / (1.0 + h * js.damping / inertia);
    const double stick = h * js.friction / inertia;
    v = std::abs(v) <= stick ? 0.0 : v - std::copysign(stick, v);
    v = std::clamp(v, -js.velocity_limit, js.velocity_limit);
    double x = q[j] + h * v;
    if (x <= js.range_min || x >= js.range_max) {
      x = std::clamp(x, js.range_min, js.range_max);
      v = 0.0;
    }
    q[j] = x;
    qd[j] = v;
  }
}

StepResult step(EnvState& s, std::span<const double> raw_action, const EnvConfig& config, double curriculum_step) {
  const RobotSpec& robot = *s.robot;
  const std::size_t nj = robot.joint_count(), nf = robot.foot_count();
  if (raw_action.size() != nj)
    throw std::invalid_argument("step: expected " + std::to_string(nj) + " actions, got " +
                                std::to_string(raw_action.size()));
  std::vector<double> action(raw_action.begin(), raw_action.end());
  for (auto& a : action) a = std::clamp(a, -config.action_clip, config.action_clip);

  const std::vector<double> q_before = s.q, qd_before = s.qd;
  const double h = config.dt / config.substeps;
  std::vector<double> spring_nominal(nj), tau_sum(nj, 0.0);
  for (std::size_t j = 0; j < nj; ++j) spring_nominal[j] = robot.joints[j].nominal;
  for (int k = 0; k < config.substeps; ++k) {
    const auto tau = pd_torque(s, action, robot);
    for (std::size_t j = 0; j < nj; ++j) tau_sum[j] += tau[j];
    integrate_joints(s.q, s.qd, tau, robot, spring_nominal, h);
  }
  for (std::size_t j = 0; j < nj; ++j) s.torque[j] = tau_sum[j] / config.substeps;

  // Trunk surrogate.
  std::vector<double> mean_rate(nj);
  for (std::size_t j = 0; j < nj; ++j) mean_rate[j] = (s.q[j] - q_before[j]) / config.dt;
  const auto kin = leg_kinematics(*s.legs, s.q, mean_rate);
  update_contacts(s, kin.lift);
  const double h_nom = s.base->body.nominal_height;

  double n_contact = 0.0;
  Vec3 drive{};
  double yaw_num = 0.0, yaw_den = 0.0;
  double cx = 0.0, cy = 0.0, ext = 0.0;
  for (std::size_t f = 0; f < nf; ++f) {
    if (!s.contact[f]) continue;
    const auto& p = s.legs->legs[f].foot;
    const auto& u = kin.foot_velocity[f];
    n_contact += 1.0;
    drive[0] -= u[0];
    drive[1] -= u[1];
    yaw_num -= p[0] * u[1] - p[1] * u[0];
    yaw_den += p[0] * p[0] + p[1] * p[1];
    cx += p[0];
    cy += p[1];
    ext -= kin.lift[f];
  }

  const double dt = config.dt;
  Vec3 lin_acc{}, ang_acc{};
  // Planar velocity and yaw rate relax exactly toward the stance-foot drive.
  const double support = nf > 0 ? n_contact / static_cast<double>(nf) : 0.0;
  const double keep = std::exp(-(kTraction * support + kDrag) * dt);
  const double pull = kTraction * support + kDrag > 0.0 ? kTraction * support / (kTraction * support + kDrag) : 0.0;
  const double yaw_drive = yaw_den > 0.0 ? yaw_num / yaw_den : 0.0;
  for (int d = 0; d < 2; ++d) {
    const double target = n_contact > 0.0 ? pull * drive[d] / n_contact : 0.0;
    s.velocity[d] = target + (s.velocity[d] - target) * keep;
  }
  s.angular_velocity[2] = pull * yaw_drive + (s.angular_velocity[2] - pull * yaw_drive) * keep;
  if (n_contact > 0.0) {

    cx /= n_contact;
    cy /= n_contact;
    ext /= n_contact;
    // Ridge least-squares plane through the extensions of the stance feet.
    double sxx = 0, sxy = 0, syy = 0, sxe = 0, sye = 0;
    for (std::size_t f = 0; f < nf; ++f) {
      if (!s.contact[f]) continue;
      const double dx = s.legs->legs[f].foot[0] - cx, dy = s.legs->legs[f].foot[1] - cy;
      const double de = -kin.lift[f] - ext;
      sxx += dx * dx;
      sxy += dx * dy;
      syy += dy * dy;
      sxe += dx * de;
      sye += dy * de;
    }
    const double ridge = 1e-3 * h_nom * h_nom;
    sxx += ridge;
    syy += ridge;
    const double det = sxx * syy - sxy * sxy;
    const double bx = (syy * sxe - sxy * sye) / det;
    const double by = (sxx * sye - sxy * sxe) / det;
    const double roll_target = std::atan(by), pitch_target = -std::atan(bx);

    const double tip = kTipGain * kGravity / h_nom;
    ang_acc[0] = kTiltStiffness * support * (roll_target - s.roll) - kTiltDamping * s.angular_velocity[0] +
                 tip * cy / s.legs->lateral_span;
    ang_acc[1] = kTiltStiffness * support * (pitch_target - s.pitch) - kTiltDamping * s.angular_velocity[1] -
                 tip * cx / s.legs->longitudinal_span;
    lin_acc[2] = kHeightStiffness * (h_nom + ext - s.height) - kHeightDamping * s.velocity[2];
  } else {
    lin_acc[2] = -kGravity;
  }
  s.velocity[2] += dt * lin_acc[2];
  for (int d = 0; d < 2; ++d) s.angular_velocity[d] += dt * ang_acc[d];
  s.roll += dt * s.angular_velocity[0];
  s.pitch += dt * s.angular_velocity[1];
  s.height += dt * s.velocity[2];

  std::vector<double> air_before = s.air_time;
  for (std::size_t f = 0; f < nf; ++f) s.air_time[f] = s.contact[f] ? 0.0 : s.air_time[f] + dt;

  const bool fell = std::abs(s.roll) > config.max_tilt || std::abs(s.pitch) > config.max_tilt ||
                    s.height < config.min_height_fraction * h_nom;

  RewardInputs in;
  in.velocity = s.velocity;
  in.angular_velocity = s.angular_velocity;
  in.roll = s.roll;
  in.pitch = s.pitch;
  in.height = s.height;
  in.command = s.command;
  in.q = s.q;
  in.qd_before = qd_before;
  in.qd_after = s.qd;
  in.torque = s.torque;
  in.action = action;
  in.previous_action = s.previous_action;
  in.contact = s.contact;
  in.air_time_before = air_before;
  in.collisions = fell ? 1 : 0;
  in.dt = dt;
  RewardCoefficients coefficients = config.reward_override ? *config.reward_override : s.base->reward;
  coefficients.curriculum_steps *= config.curriculum_scale;

  StepResult result;
  result.reward = compute_reward(in, *s.base, coefficients, curriculum_step);
  s.previous_action = std::move(action);
  ++s.step;
  result.fell = fell;
  result.truncated = !fell && s.step >= config.episode_length;
  result.done = fell || result.truncated;
  if (!result.done) {
    maybe_resample(s, config, s.rng);
    perturb(s, config, s.rng);
  }
  result.observation = assemble_observations(s, config, s.rng);
  return result;
}

ObservationBundle assemble_observations(const EnvState& s, const EnvConfig& config, std::mt19937_64& rng) {
  using S = ObservationScales;
  const RobotSpec& robot = *s.robot;
  const std::size_t nj = robot.joint_count(), nf = robot.foot_count();
  ObservationBundle o;
  o.joints.resize(nj * kJointObservationSize);
  for (std::size_t j = 0; j < nj; ++j) {
    const double raw[3] = {s.q[j] / S::joint_position, s.qd[j] / S::joint_velocity, s.previous_action[j] / S::action};
    for (int k = 0; k < 3; ++k)
      o.joints[j * 3 + k] = dropped(rng, config.dropout.joints, raw[k] + gaussian(rng, config.noise.joints));
  }
  o.feet.resize(nf * kFootObservationSize);
  for (std::size_t f = 0; f < nf; ++f) {
    o.feet[f * 2] = dropped(rng, config.dropout.feet, s.contact[f] ? 1.0 : 0.0);
    o.feet[f * 2 + 1] =
        dropped(rng, config.dropout.feet, s.air_time[f] / S::air_time + gaussian(rng, config.noise.feet));
  }
  std::size_t k = 0;
  for (int d = 0; d < 3; ++d)
    o.general[k++] = dropped(rng, config.dropout.angular_velocity,
                             s.angular_velocity[d] / S::angular_velocity + gaussian(rng, config.noise.angular_velocity));
  for (int d = 0; d < 3; ++d) o.general[k++] = s.command[d] / S::command;
  const Vec3 g = gravity_in_trunk(s.roll, s.pitch);
  for (int d = 0; d < 3; ++d)
    o.general[k++] = dropped(rng, config.dropout.gravity, g[d] + gaussian(rng, config.noise.gravity));
  for (double v : general_description(robot, config.description)) o.general[k++] = v;
  for (int d = 0; d < 3; ++d) o.privileged[d] = s.velocity[d] / S::velocity;
  o.privileged[3] = s.height / S::height;
  return o;
}

void maybe_resample(EnvState& s, const EnvConfig& config, std::mt19937_64& rng) {
  const double p = config.effective_resample_probability();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool new_command = u(rng) < p;
  const bool new_draw = u(rng) < p;
  if (new_command) {
    sample_command(s, config, rng);
    ++s.command_draws;
  }
  if (new_draw && config.randomize) {
    s.robot = std::make_shared<const RobotSpec>(randomize_robot(*s.base, config.ranges, rng));
    ++s.randomization_draws;
  }
}

void perturb(EnvState& s, const EnvConfig& config, std::mt19937_64& rng) {
  if (config.push_probability <= 0.0 || config.push_magnitude <= 0.0) return;
  if (uniform(rng, 0.0, 1.0) >= config.push_probability) return;
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double magnitude = uniform(rng, 0.0, config.push_magnitude);
  s.velocity[0] += magnitude * std::cos(angle);
  s.velocity[1] += magnitude * std::sin(angle);
}

TrajectoryWriter::TrajectoryWriter(const std::string& path, const RobotSpec& robot) : out_(path) {
  if (!out_) throw std::runtime_error("cannot open trajectory file '" + path + "'");
  out_ << std::setprecision(17);
  out_ << "step,vx,vy,vz,wx,wy,wz,roll,pitch,height,cmd_vx,cmd_vy,cmd_yaw";
  for (const auto& j : robot.joints) out_ << ",q_" << j.name << ",qd_" << j.name << ",tau_" << j.name;
  for (const auto& j : robot.joints) out_ << ",a_" << j.name;
  for (const auto& f : robot.feet) out_ << ",contact_" << f.name << ",air_" << f.name;
  for (std::size_t k = 1; k <= kRewardTerms; ++k) out_ << ",T" << k;
  out_ << ",reward,done\n";
}

void TrajectoryWriter::write(const EnvState& s, std::span<const double> action, const RewardBreakdown& reward,
                             bool done) {
  out_ << s.step;
  for (double v : s.velocity) out_ << ',' << v;
  for (double v : s.angular_velocity) out_ << ',' << v;
  out_ << ',' << s.roll << ',' << s.pitch << ',' << s.height;
  for (double v : s.command) out_ << ',' << v;
  for (std::size_t j = 0; j < s.q.size(); ++j) out_ << ',' << s.q[j] << ',' << s.qd[j] << ',' << s.torque[j];
  for (double a : action) out_ << ',' << a;
  for (std::size_t f = 0; f < s.contact.size(); ++f) out_ << ',' << int(s.contact[f]) << ',' << s.air_time[f];
  for (double r : reward.raw) out_ << ',' << r;
  out_ << ',' << reward.total << ',' << (done ? 1 : 0) << '\n';
}

}  // namespace urma
