#include "urma/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace urma {

using tg::Shape;
using tg::Tape;
using tg::Tensor;
using tg::Var;

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.steps_per_env = 10880;
  c.minibatch_per_robot = 2040;
  c.total_steps = 100'000'000;
  return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown training preset '" + name + "' (expected desk or paper)");
}

TrainConfig TrainConfig::fine_tune(std::uint64_t budget) const {
  TrainConfig c = *this;
  c.total_steps = budget;
  c.lr_scale = lr_scale / 3.0;
  return c;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("TrainConfig: " + what);
  };
  require(steps_per_env > 0 && envs_per_robot > 0 && epochs > 0, "steps_per_env, envs_per_robot and epochs must be positive");
  require(minibatch_per_robot > 0 && (steps_per_env * envs_per_robot) % minibatch_per_robot == 0,
          "minibatch_per_robot must divide steps_per_env * envs_per_robot");
  require(clip > 0.0 && clip < 1.0, "clip must lie in (0, 1)");
  require(gamma > 0.0 && gamma <= 1.0 && lambda >= 0.0 && lambda <= 1.0, "gamma in (0, 1], lambda in [0, 1]");
  require(entropy_coef >= 0.0 && value_coef >= 0.0, "loss coefficients must be non-negative");
  require(max_grad_norm > 0.0, "max_grad_norm must be positive");
  require(learning_rate > 0.0 && lr_scale > 0.0, "learning rate must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0,
          "Adam betas in [0, 1) and eps > 0");
  require(curriculum_reference_steps >= 0.0, "curriculum_reference_steps must be non-negative");
}

void RunningStats::update(std::span<const double> values) {
  if (values.empty()) return;
  double m = 0.0;
  for (double v : values) m += v;
  m /= values.size();
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  s /= values.size();
  const double n = static_cast<double>(values.size());
  if (count == 0.0) {
    mean = m;
    var = s;
    count = n;
    return;
  }
  const double total = count + n;
  const double delta = m - mean;
  const double m2 = var * count + s * n + delta * delta * count * n / total;
  mean += delta * n / total;
  var = m2 / total;
  count = total;
}

double RunningStats::stddev() const { return std::sqrt(std::max(var, 1e-8)); }

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw std::invalid_argument("compute_gae: length mismatch");
  std::vector<double> next(n);
  for (std::size_t t = 0; t < n; ++t) next[t] = t + 1 < n ? values[t + 1] : bootstrap;
  return compute_gae(rewards, values, next, dones, dones, gamma, lambda);
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> next_values, std::span<const std::uint8_t> terminal,
                      std::span<const std::uint8_t> dones, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || terminal.size() != n || dones.size() != n)
    throw std::invalid_argument("compute_gae: length mismatch");
  GaeResult r;
  r.advantages.resize(n);
  r.returns.resize(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double delta = rewards[i] + (terminal[i] ? 0.0 : gamma * next_values[i]) - values[i];
    running = delta + (dones[i] ? 0.0 : gamma * lambda * running);
    r.advantages[i] = running;
    r.returns[i] = running + values[i];
  }
  return r;
}

void RolloutBuffer::compute_advantages(double gamma, double lambda) {
  advantages.assign(size(), 0.0);
  returns.assign(size(), 0.0);
  for (std::size_t m = 0; m < robots; ++m)
    for (std::size_t e = 0; e < envs; ++e) {
      const std::size_t lo = index(m, e, 0);
      auto seg = [&](auto& v) { return std::span(v.data() + lo, steps); };
      const GaeResult g = compute_gae(seg(rewards), seg(values), seg(next_values), seg(terminal), seg(dones), gamma, lambda);
      std::copy(g.advantages.begin(), g.advantages.end(), advantages.begin() + lo);
      std::copy(g.returns.begin(), g.returns.end(), returns.begin() + lo);
    }
}

// ---------------------------------------------------------------------------------------------------------------
// Optimization

void AdamOptimizer::sync(const ParameterStore& params) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params.value(i).shape();
    if (m_[i].shape() != shape || m_[i].size() != params.value(i).size()) m_[i] = Tensor(shape, 0.0);
    if (v_[i].shape() != shape || v_[i].size() != params.value(i).size()) v_[i] = Tensor(shape, 0.0);
  }
}

void AdamOptimizer::step(ParameterStore& params, const std::vector<Tensor>& grads, double lr) {
  sync(params);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params.value(i);
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
    }
  }
}

double global_norm(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (std::size_t k = 0; k < g.size(); ++k) s += g[k] * g[k];
  return std::sqrt(s);
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (std::size_t k = 0; k < g.size(); ++k) g[k] *= s;
  }
  return norm;
}

double learning_rate_at(const TrainConfig& config, double progress) {
  return config.learning_rate * config.lr_scale * std::max(0.0, 1.0 - std::clamp(progress, 0.0, 1.0));
}

double clipped_surrogate(double ratio, double advantage, double clip) {
  return -std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

std::vector<std::vector<std::size_t>> make_minibatches(std::size_t robots, std::size_t per_robot,
                                                       std::size_t per_robot_count, std::mt19937_64& rng) {
  if (per_robot_count == 0 || per_robot % per_robot_count != 0)
    throw std::invalid_argument("make_minibatches: per-robot count must divide the segment length");
  std::vector<std::vector<std::size_t>> order(robots);
  for (std::size_t m = 0; m < robots; ++m) {
    order[m].resize(per_robot);
    std::iota(order[m].begin(), order[m].end(), m * per_robot);
    std::shuffle(order[m].begin(), order[m].end(), rng);
  }
  std::vector<std::vector<std::size_t>> out(per_robot / per_robot_count);
  for (std::size_t c = 0; c < out.size(); ++c)
    for (std::size_t m = 0; m < robots; ++m)
      out[c].insert(out[c].end(), order[m].begin() + c * per_robot_count,
                    order[m].begin() + (c + 1) * per_robot_count);
  return out;
}

PpoLoss ppo_loss(Tape& tape, const Policy& policy, const BoundParams& p, const PolicyBatch& batch,
                 const PpoTargets& targets, const TrainConfig& config) {
  PpoLoss l;
  const ActorOutput out = policy.actor(tape, p, batch);
  l.log_prob = batch_log_prob(out, tape.constant(targets.actions), batch);
  l.ratio = tg::exp(tg::sub(l.log_prob, tape.constant(targets.old_log_probs)));
  const Var A = tape.constant(targets.advantages);
  const Var clipped = tg::clamp(l.ratio, 1.0 - config.clip, 1.0 + config.clip);
  l.policy = tg::neg(tg::mean_all(tg::minimum(tg::mul(l.ratio, A), tg::mul(clipped, A))));
  const Var err = tg::sub(policy.critic(tape, p, batch), tape.constant(targets.value_targets));
  l.value = tg::scale(tg::mean_all(tg::square(err)), 0.5);
  l.entropy = tg::mean_all(batch_entropy(out, batch));
  l.total = tg::sub(tg::add(l.policy, tg::scale(l.value, config.value_coef)), tg::scale(l.entropy, config.entropy_coef));
  return l;
}

// ---------------------------------------------------------------------------------------------------------------
// Trainer

namespace {

ActionDistribution slice(const Tensor& mean, const Tensor& std, std::size_t lo, std::size_t hi) {
  ActionDistribution d;
  d.mean.assign(mean.data() + lo, mean.data() + hi);
  d.std.assign(std.data() + lo, std.data() + hi);
  return d;
}

std::string diagnostic(const Policy& policy, std::uint64_t step, const std::string& what) {
  std::ostringstream out;
  out << what << " at global step " << step << "\n";
  const auto& params = policy.parameters();
  for (const auto& b : params.blocks()) {
    double mx = 0.0;
    bool finite = true;
    for (std::size_t k = 0; k < b.value.size(); ++k) {
      finite &= std::isfinite(b.value[k]);
      mx = std::max(mx, std::abs(b.value[k]));
    }
    out << "  " << b.name << " " << tg::to_string(b.value.shape()) << " max|w|=" << mx << (finite ? "" : " NON-FINITE")
        << "\n";
  }
  return out.str();
}

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

Trainer::Trainer(std::shared_ptr<Policy> policy, std::vector<RobotPtr> robots, EnvConfig env, TrainConfig config)
    : policy_(std::move(policy)),
      robots_(std::move(robots)),
      env_(std::move(env)),
      config_(config),
      adam_(config.adam_beta1, config.adam_beta2, config.adam_eps),
      rng_(config.seed) {
  config_.validate();
  env_.validate();
  if (robots_.empty()) throw std::invalid_argument("Trainer: at least one robot is required");
  for (const auto& r : robots_) policy_->check_robot(*r);
  if (config_.curriculum_reference_steps > 0.0 && config_.total_steps > 0)
    env_.curriculum_scale *=
        static_cast<double>(config_.total_steps) / robots_.size() / config_.curriculum_reference_steps;
  adam_.sync(policy_->parameters());
  for (std::size_t m = 0; m < robots_.size(); ++m)
    for (std::size_t e = 0; e < config_.envs_per_robot; ++e) {
      std::mt19937_64 seeder(rng_());
      auto [state, obs] = reset(robots_[m], env_, seeder);
      streams_.push_back(Stream{std::move(state), std::move(obs), std::mt19937_64(seeder()), 0.0, 0.0, 0});
    }
  last_stats_.resize(robots_.size());
  finished_returns_.resize(robots_.size());
  finished_lengths_.resize(robots_.size());
  finished_tracking_.resize(robots_.size());
  for (std::size_t m = 0; m < robots_.size(); ++m) last_stats_[m].robot = robots_[m]->name;
}

double Trainer::progress() const {
  if (config_.total_steps == 0) return 1.0;
  return std::min(1.0, static_cast<double>(global_step_) / static_cast<double>(config_.total_steps));
}

RolloutBuffer Trainer::collect_rollouts() {
  const std::size_t M = robots_.size(), E = config_.envs_per_robot, T = config_.steps_per_env;
  const std::size_t S = streams_.size();
  RolloutBuffer buf;
  buf.robots = M;
  buf.envs = E;
  buf.steps = T;
  const std::size_t n = M * E * T;
  buf.observations.resize(n);
  buf.specs.resize(n);
  buf.actions.resize(n);
  buf.log_probs.resize(n);
  buf.rewards.resize(n);
  buf.values.resize(n);
  buf.next_values.resize(n);
  buf.terminal.resize(n);
  buf.dones.resize(n);
  buf.tracking.resize(n);

  const auto options = policy_->config().description_options();
  const double vmean = config_.normalize_values ? value_stats_.mean : 0.0;
  const double vstd = config_.normalize_values ? value_stats_.stddev() : 1.0;
  auto evaluate_values = [&](const std::vector<const ObservationBundle*>& obs, const std::vector<RobotPtr>& specs) {
    std::vector<double> v = critic_values(*policy_, make_batch(obs, specs, options));
    for (double& x : v) x = vmean + vstd * x;
    return v;
  };

  // Truncated episodes need the value of their final observation.
  std::vector<std::size_t> truncated_index;
  std::vector<ObservationBundle> truncated_obs;
  std::vector<RobotPtr> truncated_spec;

  std::vector<const ObservationBundle*> obs(S);
  std::vector<RobotPtr> specs(S);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      obs[s] = &streams_[s].observation;
      specs[s] = streams_[s].state.robot;
    }
    const PolicyBatch batch = make_batch(obs, specs, options);
    policy_->check_batch(batch);
    Tape tape(Tape::Mode::inference);
    const BoundParams p = bind(tape, policy_->parameters());
    const ActorOutput out = policy_->actor(tape, p, batch);
    const Tensor& value = policy_->critic(tape, p, batch).value();
    const double clock = static_cast<double>(global_step_ + t * S) / M;

    for (std::size_t s = 0; s < S; ++s) {
      Stream& st = streams_[s];
      const std::size_t m = s / E, e = s % E;
      const std::size_t i = buf.index(m, e, t);
      const auto dist = slice(out.mean.value(), out.std.value(), batch.joint_offset[s], batch.joint_offset[s + 1]);
      auto [action, lp] = sample_and_logprob(dist, st.action_rng);
      buf.observations[i] = st.observation;
      buf.specs[i] = st.state.robot;
      buf.log_probs[i] = lp;
      buf.values[i] = vmean + vstd * value[s];
      if (t > 0) {
        const std::size_t prev = buf.index(m, e, t - 1);
        if (!buf.dones[prev]) buf.next_values[prev] = buf.values[i];
      }

      StepResult r = step(st.state, action, env_, clock);
      buf.actions[i] = std::move(action);
      buf.rewards[i] = r.reward.total;
      buf.tracking[i] = r.reward.tracking();
      buf.terminal[i] = r.fell;
      buf.dones[i] = r.done;
      st.episode_return += r.reward.total;
      st.episode_tracking += r.reward.tracking();
      ++st.episode_length;
      if (r.done) {
        if (r.truncated) {
          truncated_index.push_back(i);
          truncated_obs.push_back(std::move(r.observation));
          truncated_spec.push_back(st.state.robot);
        }
        finished_returns_[m].push_back(st.episode_return);
        finished_lengths_[m].push_back(st.episode_length);
        const double w = (env_.reward_override ? *env_.reward_override : robots_[m]->reward).tracking_weight();
        finished_tracking_[m].push_back(st.episode_tracking / std::max(1, st.episode_length) / w);
        st.episode_return = st.episode_tracking = 0.0;
        st.episode_length = 0;
        std::mt19937_64 seeder(st.state.rng());
        auto [state, first] = reset(st.state.base, env_, seeder);
        st.state = std::move(state);
        st.observation = std::move(first);
      } else {
        st.observation = std::move(r.observation);
      }
    }
  }

  for (std::size_t s = 0; s < S; ++s) {
    obs[s] = &streams_[s].observation;
    specs[s] = streams_[s].state.robot;
  }
  const auto last = evaluate_values(obs, specs);
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t i = buf.index(s / E, s % E, T - 1);
    if (!buf.dones[i]) buf.next_values[i] = last[s];
  }
  if (!truncated_index.empty()) {
    std::vector<const ObservationBundle*> tobs;
    for (const auto& o : truncated_obs) tobs.push_back(&o);
    const auto v = evaluate_values(tobs, truncated_spec);
    for (std::size_t k = 0; k < truncated_index.size(); ++k) buf.next_values[truncated_index[k]] = v[k];
  }
  global_step_ += n;
  buf.compute_advantages(config_.gamma, config_.lambda);
  return buf;
}

UpdateStats Trainer::update(RolloutBuffer& buf, double progress) {
  if (buf.advantages.size() != buf.size()) throw std::logic_error("update: advantages not computed");
  UpdateStats stats;
  stats.learning_rate = learning_rate_at(config_, progress);
  if (config_.normalize_values) value_stats_.update(buf.returns);
  const double vmean = config_.normalize_values ? value_stats_.mean : 0.0;
  const double vstd = config_.normalize_values ? value_stats_.stddev() : 1.0;
  const auto options = policy_->config().description_options();
  adam_.sync(policy_->parameters());

  std::size_t updates = 0;
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    for (const auto& idx : make_minibatches(buf.robots, buf.per_robot(), config_.minibatch_per_robot, rng_)) {
      const std::size_t B = idx.size();
      std::vector<const ObservationBundle*> obs(B);
      std::vector<RobotPtr> specs(B);
      std::size_t joints = 0;
      for (std::size_t k = 0; k < B; ++k) {
        obs[k] = &buf.observations[idx[k]];
        specs[k] = buf.specs[idx[k]];
        joints += buf.actions[idx[k]].size();
      }
      const PolicyBatch batch = make_batch(obs, specs, options);
      PpoTargets tgt{Tensor(Shape{joints, 1}), Tensor(Shape{B, 1}), Tensor(Shape{B, 1}), Tensor(Shape{B, 1})};
      double amean = 0.0, astd = 0.0;
      for (std::size_t k = 0; k < B; ++k) amean += buf.advantages[idx[k]];
      amean /= B;
      for (std::size_t k = 0; k < B; ++k) astd += (buf.advantages[idx[k]] - amean) * (buf.advantages[idx[k]] - amean);
      astd = std::sqrt(astd / B) + 1e-8;
      for (std::size_t k = 0, row = 0; k < B; ++k) {
        for (double a : buf.actions[idx[k]]) tgt.actions[row++] = a;
        tgt.old_log_probs[k] = buf.log_probs[idx[k]];
        const double a = buf.advantages[idx[k]];
        tgt.advantages[k] = config_.normalize_advantages ? (a - amean) / astd : a;
        tgt.value_targets[k] = (buf.returns[idx[k]] - vmean) / vstd;
      }

      Tape tape;
      const BoundParams p = bind(tape, policy_->parameters());
      const PpoLoss loss = ppo_loss(tape, *policy_, p, batch, tgt, config_);
      if (!std::isfinite(loss.total.value().item()))
        throw TrainingDiverged(
            diagnostic(*policy_, global_step_, "non-finite loss " + std::to_string(loss.total.value().item())));
      tape.backward(loss.total);
      std::vector<Tensor> grads = gradients(p, policy_->parameters());
      const double norm = clip_global_norm(grads, config_.max_grad_norm);
      if (!std::isfinite(norm))
        throw TrainingDiverged(diagnostic(*policy_, global_step_, "non-finite gradient norm"));
      stats.max_clipped_grad_norm = std::max(stats.max_clipped_grad_norm, global_norm(grads));
      adam_.step(policy_->parameters(), grads, stats.learning_rate);
      policy_->project();

      const Tensor& r = loss.ratio.value();
      double kl = 0.0, clipped = 0.0;
      for (std::size_t k = 0; k < B; ++k) {
        kl += tgt.old_log_probs[k] - loss.log_prob.value()[k];
        clipped += std::abs(r[k] - 1.0) > config_.clip ? 1.0 : 0.0;
      }
      stats.policy_loss += loss.policy.value().item();
      stats.value_loss += loss.value.value().item();
      stats.entropy += loss.entropy.value().item();
      stats.approx_kl += kl / B;
      stats.clip_fraction += clipped / B;
      stats.grad_norm += norm;
      ++updates;
    }
  }
  if (!policy_->parameters().all_finite())
    throw TrainingDiverged(diagnostic(*policy_, global_step_, "non-finite parameters after update"));
  const double u = static_cast<double>(std::max<std::size_t>(updates, 1));
  stats.policy_loss /= u;
  stats.value_loss /= u;
  stats.entropy /= u;
  stats.approx_kl /= u;
  stats.clip_fraction /= u;
  stats.grad_norm /= u;
  return stats;
}

IterationStats Trainer::iterate() {
  const auto start = std::chrono::steady_clock::now();
  const double p = progress();
  for (auto& v : finished_returns_) v.clear();
  for (auto& v : finished_lengths_) v.clear();
  for (auto& v : finished_tracking_) v.clear();
  RolloutBuffer buf = collect_rollouts();
  IterationStats stats;
  stats.update = update(buf, p);
  stats.global_step = global_step_;
  for (std::size_t m = 0; m < robots_.size(); ++m) {
    auto& s = last_stats_[m];
    s.episodes = finished_returns_[m].size();
    if (s.episodes > 0) {
      auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
      s.mean_return = mean(finished_returns_[m]);
      s.mean_episode_length = mean(finished_lengths_[m]);
      s.tracking_share = mean(finished_tracking_[m]);
    }
  }
  stats.robots = last_stats_;
  const auto& params = policy_->parameters();
  if (params.contains("tau")) stats.tau_joints = params.value(params.index("tau"))[0];
  if (params.contains("tau_feet")) stats.tau_feet = params.value(params.index("tau_feet"))[0];
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

void Trainer::train(const std::function<void(const IterationStats&)>& on_iteration) {
  while (global_step_ < config_.total_steps) {
    const IterationStats s = iterate();
    if (on_iteration) on_iteration(s);
  }
}

// ---------------------------------------------------------------------------------------------------------------
// Evaluation

namespace {

Evaluation run_evaluation(const Policy* policy, std::span<const RobotPtr> robots, const EnvConfig& env,
                          const EvalOptions& options) {
  env.validate();
  const std::size_t M = robots.size(), K = options.episodes;
  struct Episode {
    EnvState state;
    ObservationBundle obs;
    std::mt19937_64 rng;
    double ret = 0.0, tracking = 0.0;
    int length = 0;
    bool done = false, fell = false;
  };
  std::vector<Episode> eps;
  for (std::size_t m = 0; m < M; ++m) {
    if (policy) policy->check_robot(*robots[m]);
    for (std::size_t k = 0; k < K; ++k) {
      std::mt19937_64 seeder(options.seed ^ name_hash(robots[m]->name) ^ (0x9E3779B97F4A7C15ull * (k + 1)));
      auto [state, obs] = reset(robots[m], env, seeder);
      eps.push_back(Episode{std::move(state), std::move(obs), std::mt19937_64(seeder()), 0.0, 0.0, 0, false, false});
    }
  }
  const auto desc = policy ? policy->config().description_options() : DescriptionOptions{};
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  for (;;) {
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < eps.size(); ++i)
      if (!eps[i].done) alive.push_back(i);
    if (alive.empty()) break;
    std::vector<std::vector<double>> actions(alive.size());
    if (policy) {
      std::vector<const ObservationBundle*> obs;
      std::vector<RobotPtr> specs;
      for (std::size_t i : alive) {
        if (options.zero_feet) std::fill(eps[i].obs.feet.begin(), eps[i].obs.feet.end(), 0.0);
        obs.push_back(&eps[i].obs);
        specs.push_back(eps[i].state.robot);
      }
      const auto dists = action_distributions(*policy, make_batch(obs, specs, desc));
      for (std::size_t k = 0; k < alive.size(); ++k)
        actions[k] = options.deterministic ? dists[k].mean : sample_and_logprob(dists[k], eps[alive[k]].rng).first;
    } else {
      for (std::size_t k = 0; k < alive.size(); ++k) {
        actions[k].resize(eps[alive[k]].state.robot->joint_count());
        for (double& a : actions[k]) a = uniform(eps[alive[k]].rng);
      }
    }
    for (std::size_t k = 0; k < alive.size(); ++k) {
      Episode& e = eps[alive[k]];
      StepResult r = step(e.state, actions[k], env, options.curriculum_step);
      e.ret += r.reward.total;
      e.tracking += r.reward.tracking();
      ++e.length;
      e.done = r.done;
      e.fell = r.fell;
      e.obs = std::move(r.observation);
    }
  }
  Evaluation ev;
  for (std::size_t m = 0; m < M; ++m) {
    RobotEvaluation r;
    r.robot = robots[m]->name;
    const double w = (env.reward_override ? *env.reward_override : robots[m]->reward).tracking_weight();
    double tracking = 0.0, steps = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const Episode& e = eps[m * K + k];
      r.mean_return += e.ret / K;
      r.mean_episode_length += static_cast<double>(e.length) / K;
      r.fall_rate += e.fell ? 1.0 / K : 0.0;
      tracking += e.tracking;
      steps += e.length;
    }
    r.tracking_share = tracking / std::max(1.0, steps) / w;
    ev.mean_return += r.mean_return / M;
    ev.tracking_share += r.tracking_share / M;
    ev.robots.push_back(r);
  }
  return ev;
}

}  // namespace

Evaluation evaluate(const Policy& policy, std::span<const RobotPtr> robots, const EnvConfig& env,
                    const EvalOptions& options) {
  return run_evaluation(&policy, robots, env, options);
}

Evaluation evaluate_random(std::span<const RobotPtr> robots, const EnvConfig& env, const EvalOptions& options) {
  return run_evaluation(nullptr, robots, env, options);
}

CurveWriter::CurveWriter(const std::string& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open learning-curve file " + path);
  if (fresh)
    out_ << "global_step,robot,mean_return,mean_episode_length,tracking_share,policy_loss,value_loss,entropy,"
            "approx_kl,clip_fraction,grad_norm,lr,tau_joints,tau_feet\n";
}

void CurveWriter::write(const IterationStats& s) {
  out_ << std::setprecision(10);
  for (const auto& r : s.robots)
    out_ << s.global_step << ",\"" << r.robot << "\"," << r.mean_return << ',' << r.mean_episode_length << ','
         << r.tracking_share << ',' << s.update.policy_loss << ',' << s.update.value_loss << ',' << s.update.entropy
         << ',' << s.update.approx_kl << ',' << s.update.clip_fraction << ',' << s.update.grad_norm << ','
         << s.update.learning_rate << ',' << s.tau_joints << ',' << s.tau_feet << '\n';
  out_.flush();
}

}  // namespace urma
