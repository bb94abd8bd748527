#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "urma/env.hpp"
#include "urma/policy.hpp"

namespace urma {

struct TrainConfig {
  std::size_t steps_per_env = 256;
  std::size_t envs_per_robot = 3;
  std::size_t epochs = 10;
  /// Samples of every robot in each mini-batch; must divide steps_per_env * envs_per_robot.
  std::size_t minibatch_per_robot = 192;
  double clip = 0.1;
  double gamma = 0.99;
  double lambda = 0.9;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 5.0;
  double learning_rate = 4e-4;
  /// Multiplies the whole schedule; fine-tuning uses 1/3.
  double lr_scale = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool normalize_advantages = true;
  /// Critic regresses returns standardized by running statistics.
  bool normalize_values = true;
  /// Total env steps over all robots; the LR reaches 0 here. 0 trains nothing.
  std::uint64_t total_steps = 2'000'000;
  /// Per-robot step budget the tabulated curriculum lengths refer to; penalty curricula are shrunk by
  /// (total_steps / robots) / curriculum_reference_steps. 0 keeps the tabulated lengths.
  double curriculum_reference_steps = 0.0;
  std::uint64_t seed = 0;

  static TrainConfig desk();
  static TrainConfig paper();
  static TrainConfig preset(const std::string& name);
  std::size_t steps_per_iteration(std::size_t robots) const { return robots * envs_per_robot * steps_per_env; }
  /// Copy for fine-tuning: a fresh schedule over `budget` steps at a third of the learning rate.
  TrainConfig fine_tune(std::uint64_t budget) const;
  void validate() const;
};

/// Running mean and variance (parallel Welford merge).
struct RunningStats {
  double mean = 0.0;
  double var = 1.0;
  double count = 0.0;

  void update(std::span<const double> values);
  double stddev() const;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Recursive GAE over one trajectory. dones[t] ends the episode after step t; the value after the last step is
/// `bootstrap` unless that step is done.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda);

/// General form: next_values[t] is the value of the state reached by step t, used unless terminal[t];
/// dones[t] stops the accumulation (terminal or truncated).
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> next_values, std::span<const std::uint8_t> terminal,
                      std::span<const std::uint8_t> dones, double gamma, double lambda);

/// Transitions laid out robot-major: index = (robot * envs + env) * steps + t.
struct RolloutBuffer {
  std::size_t robots = 0, envs = 0, steps = 0;
  std::vector<ObservationBundle> observations;
  std::vector<RobotPtr> specs;  // randomized spec active at each step
  std::vector<std::vector<double>> actions;
  std::vector<double> log_probs, rewards, values, next_values;
  std::vector<std::uint8_t> terminal, dones;
  std::vector<double> tracking;  // c1*T1 + c2*T2 per step
  std::vector<double> advantages, returns;

  std::size_t size() const { return observations.size(); }
  std::size_t index(std::size_t robot, std::size_t env, std::size_t t) const {
    return (robot * envs + env) * steps + t;
  }
  std::size_t per_robot() const { return envs * steps; }
  /// Fills advantages and returns from rewards/values.
  void compute_advantages(double gamma, double lambda);
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;  // before clipping, mean over mini-batches
  double max_clipped_grad_norm = 0.0;
  double learning_rate = 0.0;
};

/// Thrown when a loss or gradient stops being finite; the message carries a diagnostic dump.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParameterStore& params, const std::vector<tg::Tensor>& grads, double lr);
  /// Drops moment state of blocks whose shape changed (grown heads).
  void sync(const ParameterStore& params);
  std::uint64_t steps() const { return t_; }

  std::vector<tg::Tensor>& first_moments() { return m_; }
  std::vector<tg::Tensor>& second_moments() { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<tg::Tensor> m_, v_;
};

/// Global L2 norm of a gradient list.
double global_norm(const std::vector<tg::Tensor>& grads);
/// Scales grads so their global norm is at most max_norm; returns the norm before scaling.
double clip_global_norm(std::vector<tg::Tensor>& grads, double max_norm);

/// Linear anneal from lr * scale to 0 at progress 1.
double learning_rate_at(const TrainConfig& config, double progress);

/// Clipped surrogate of one sample, -min(r A, clip(r, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double clip);

/// One epoch of mini-batches: each robot's buffer segment is shuffled and cut into chunks of `per_robot_count`;
/// mini-batch i is the union of chunk i of every robot.
std::vector<std::vector<std::size_t>> make_minibatches(std::size_t robots, std::size_t per_robot,
                                                       std::size_t per_robot_count, std::mt19937_64& rng);

/// Mini-batch tensors: flattened actions (N_j x 1), and (B x 1) old log-probs, advantages, value targets.
struct PpoTargets {
  tg::Tensor actions, old_log_probs, advantages, value_targets;
};

struct PpoLoss {
  tg::Var total, policy, value, entropy, log_prob, ratio;
};

/// policy + value_coef * 0.5 * MSE(value, target) - entropy_coef * entropy, all mini-batch means.
PpoLoss ppo_loss(tg::Tape& tape, const Policy& policy, const BoundParams& params, const PolicyBatch& batch,
                 const PpoTargets& targets, const TrainConfig& config);

struct RobotIterationStats {
  std::string robot;
  double mean_return = 0.0;
  double mean_episode_length = 0.0;
  double tracking_share = 0.0;
  std::size_t episodes = 0;
};

struct IterationStats {
  std::uint64_t global_step = 0;
  std::vector<RobotIterationStats> robots;
  UpdateStats update;
  double tau_joints = 0.0;
  double tau_feet = 0.0;
  double seconds = 0.0;
};

/// Multi-robot PPO: every robot is one task with envs_per_robot environments.
class Trainer {
 public:
  Trainer(std::shared_ptr<Policy> policy, std::vector<RobotPtr> robots, EnvConfig env, TrainConfig config);

  RolloutBuffer collect_rollouts();
  UpdateStats update(RolloutBuffer& buffer, double progress);
  /// One rollout and one update.
  IterationStats iterate();
  /// Runs until total_steps; the callback sees every iteration.
  void train(const std::function<void(const IterationStats&)>& on_iteration = {});

  Policy& policy() { return *policy_; }
  const Policy& policy() const { return *policy_; }
  std::shared_ptr<Policy> shared_policy() const { return policy_; }
  const std::vector<RobotPtr>& robots() const { return robots_; }
  const TrainConfig& config() const { return config_; }
  const EnvConfig& env_config() const { return env_; }
  std::uint64_t global_step() const { return global_step_; }
  void set_global_step(std::uint64_t step) { global_step_ = step; }
  double progress() const;
  RunningStats& value_stats() { return value_stats_; }
  AdamOptimizer& optimizer() { return adam_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  struct Stream {
    EnvState state;
    ObservationBundle observation;
    std::mt19937_64 action_rng;
    double episode_return = 0.0;
    double episode_tracking = 0.0;
    int episode_length = 0;
  };

  std::shared_ptr<Policy> policy_;
  std::vector<RobotPtr> robots_;
  EnvConfig env_;
  TrainConfig config_;
  AdamOptimizer adam_;
  RunningStats value_stats_;
  std::mt19937_64 rng_;
  std::vector<Stream> streams_;
  std::uint64_t global_step_ = 0;
  std::vector<RobotIterationStats> last_stats_;
  std::vector<std::vector<double>> finished_returns_, finished_lengths_, finished_tracking_;
};

struct EvalOptions {
  std::size_t episodes = 3;
  std::uint64_t seed = 1;
  /// Mean action instead of a sample.
  bool deterministic = true;
  /// Zeroes every foot observation before the policy sees it.
  bool zero_feet = false;
  /// Curriculum clock passed to the env; the default is past every ramp.
  double curriculum_step = 1e18;
};

struct RobotEvaluation {
  std::string robot;
  double mean_return = 0.0;
  double mean_episode_length = 0.0;
  /// Mean over steps of (c1 T1 + c2 T2) / (c1 + c2).
  double tracking_share = 0.0;
  double fall_rate = 0.0;
};

struct Evaluation {
  std::vector<RobotEvaluation> robots;
  double mean_return = 0.0;
  double tracking_share = 0.0;
};

/// Episodes run in lockstep across robots; each robot gets its own seeded streams, so results do not depend on
/// which other robots are evaluated alongside.
Evaluation evaluate(const Policy& policy, std::span<const RobotPtr> robots, const EnvConfig& env,
                    const EvalOptions& options);

/// Same protocol with a policy that samples uniformly in [-1, 1] per joint.
Evaluation evaluate_random(std::span<const RobotPtr> robots, const EnvConfig& env, const EvalOptions& options);

/// Appends learning-curve rows; writes the header when the stream is empty.
class CurveWriter {
 public:
  explicit CurveWriter(const std::string& path);
  void write(const IterationStats& stats);

 private:
  std::ofstream out_;
};

}  // namespace urma
