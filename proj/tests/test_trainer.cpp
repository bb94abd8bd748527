#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "urma/trainer.hpp"

using namespace urma;
using tg::Shape;
using tg::Tensor;

namespace {

PolicyConfig tiny() {
  PolicyConfig c;
  c.latent = 4;
  c.description_hidden = {5};
  c.observation_hidden = {3};
  c.core_hidden = {6, 5};
  c.decoder_description_hidden = {4};
  c.decoder_description_latent = 3;
  c.mean_hidden = {5, 4};
  c.std_hidden = {3};
  c.baseline_hidden = {6, 5};
  return c;
}

std::vector<RobotPtr> quadrupeds(std::size_t n, std::uint64_t seed = 40) {
  std::vector<RobotPtr> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(std::make_shared<RobotSpec>(generate_surrogate_robot(seed + i, MorphologyClass::quadruped, {8, 12})));
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.steps_per_env = 10;
  c.envs_per_robot = 2;
  c.epochs = 2;
  c.minibatch_per_robot = 5;
  c.total_steps = 400;
  c.seed = 3;
  return c;
}

Trainer make_trainer(const TrainConfig& tc, std::size_t robots = 2, std::uint64_t policy_seed = 7) {
  auto fleet = quadrupeds(robots);
  std::shared_ptr<Policy> policy = make_policy(tiny(), fleet, policy_seed);
  return Trainer(policy, fleet, EnvConfig{}, tc);
}

std::vector<Tensor> params_of(const Policy& p) {
  std::vector<Tensor> out;
  for (const auto& b : p.parameters().blocks()) out.push_back(b.value);
  return out;
}

bool bit_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    for (std::size_t k = 0; k < a[i].size(); ++k)
      if (a[i][k] != b[i][k]) return false;
  }
  return true;
}

// Full-buffer PPO surrogate with the buffer's advantages normalized over the whole buffer.
double surrogate_on_buffer(const Policy& policy, const RolloutBuffer& buf, double clip) {
  std::vector<const ObservationBundle*> obs;
  std::size_t joints = 0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    obs.push_back(&buf.observations[i]);
    joints += buf.actions[i].size();
  }
  const PolicyBatch batch = make_batch(obs, buf.specs, policy.config().description_options());
  Tensor actions(Shape{joints, 1});
  std::size_t row = 0;
  for (const auto& a : buf.actions)
    for (double x : a) actions[row++] = x;
  tg::Tape tape(tg::Tape::Mode::inference);
  const BoundParams p = bind(tape, policy.parameters());
  const ActorOutput out = policy.actor(tape, p, batch);
  const Tensor lp = batch_log_prob(out, tape.constant(actions), batch).value();
  double mean = 0.0, sd = 0.0;
  for (double a : buf.advantages) mean += a;
  mean /= buf.size();
  for (double a : buf.advantages) sd += (a - mean) * (a - mean);
  sd = std::sqrt(sd / buf.size()) + 1e-8;
  double loss = 0.0;
  for (std::size_t i = 0; i < buf.size(); ++i)
    loss += clipped_surrogate(std::exp(lp[i] - buf.log_probs[i]), (buf.advantages[i] - mean) / sd, clip);
  return loss / buf.size();
}

}  // namespace

TEST(Gae, MatchesBruteForceOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0), p(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 16;
    std::vector<double> r(n), v(n);
    std::vector<std::uint8_t> d(n);
    for (std::size_t t = 0; t < n; ++t) {
      r[t] = u(rng);
      v[t] = u(rng);
      d[t] = p(rng) < 0.15;
    }
    const double bootstrap = u(rng), gamma = 0.9 + 0.1 * p(rng), lambda = p(rng);
    const GaeResult g = compute_gae(r, v, d, bootstrap, gamma, lambda);
    const auto oracle = oracle::brute_force_gae(r, v, d, bootstrap, gamma, lambda);
    for (std::size_t t = 0; t < n; ++t) {
      worst = std::max(worst, std::abs(g.advantages[t] - oracle[t]));
      EXPECT_DOUBLE_EQ(g.returns[t], g.advantages[t] + v[t]);
    }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Gae, OneStepWhenGammaZero) {
  const std::vector<double> r{1.0, -2.0, 0.5}, v{0.3, 0.1, -0.4};
  const std::vector<std::uint8_t> d{0, 1, 0};
  const GaeResult g = compute_gae(r, v, d, 9.0, 0.0, 0.7);
  for (std::size_t t = 0; t < r.size(); ++t) EXPECT_DOUBLE_EQ(g.advantages[t], r[t] - v[t]);
}

TEST(Gae, TelescopesToRewardSum) {
  const std::vector<double> r{1.0, 2.0, 3.0, 4.0}, v(4, 0.0);
  const std::vector<std::uint8_t> d(4, 0);
  const GaeResult g = compute_gae(r, v, d, 0.0, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 10.0);
  EXPECT_DOUBLE_EQ(g.advantages[1], 9.0);
  EXPECT_DOUBLE_EQ(g.advantages[2], 7.0);
  EXPECT_DOUBLE_EQ(g.advantages[3], 4.0);
}

TEST(Gae, TruncationBootstrapsFromNextValue) {
  // Step 1 is truncated (done, not terminal): its target uses next_values[1]; a fall would use 0.
  const std::vector<double> r{1.0, 1.0, 1.0}, v{0.5, 0.5, 0.5}, next{0.5, 2.0, 0.5};
  const std::vector<std::uint8_t> done{0, 1, 0}, truncated_terminal{0, 0, 0}, fall_terminal{0, 1, 0};
  const auto a = compute_gae(r, v, next, truncated_terminal, done, 0.9, 0.8);
  const auto b = compute_gae(r, v, next, fall_terminal, done, 0.9, 0.8);
  EXPECT_DOUBLE_EQ(a.advantages[1], 1.0 + 0.9 * 2.0 - 0.5);
  EXPECT_DOUBLE_EQ(b.advantages[1], 1.0 - 0.5);
  EXPECT_DOUBLE_EQ(a.advantages[2], b.advantages[2]);
}

TEST(Gae, LengthMismatchThrows) {
  const std::vector<double> r{1.0, 2.0}, v{1.0};
  const std::vector<std::uint8_t> d{0, 0};
  EXPECT_THROW(compute_gae(r, v, d, 0.0, 0.9, 0.9), std::invalid_argument);
}

TEST(RunningStatsTest, MergesLikeOnePass) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(3.0, 2.0);
  std::vector<double> all;
  RunningStats s;
  for (int chunk = 0; chunk < 5; ++chunk) {
    std::vector<double> v(37 + chunk);
    for (double& x : v) x = n(rng);
    s.update(v);
    all.insert(all.end(), v.begin(), v.end());
  }
  double mean = 0.0, var = 0.0;
  for (double x : all) mean += x;
  mean /= all.size();
  for (double x : all) var += (x - mean) * (x - mean);
  var /= all.size();
  EXPECT_NEAR(s.mean, mean, 1e-12);
  EXPECT_NEAR(s.var, var, 1e-12);
  EXPECT_EQ(s.count, static_cast<double>(all.size()));
}

TEST(PpoMath, ClippedSurrogate) {
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.3, 2.0, 0.1), -1.1 * 2.0);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.3, -2.0, 0.1), 1.3 * 2.0);
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, 2.0, 0.1), -0.5 * 2.0);
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, -2.0, 0.1), 0.9 * 2.0);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.0, 3.0, 0.1), -3.0);
}

TEST(PpoMath, GlobalNormClip) {
  std::vector<Tensor> g{Tensor::vector({3.0, 4.0}), Tensor::vector({12.0})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 5.0), 13.0);
  EXPECT_LE(global_norm(g), 5.0 + 1e-9);
  EXPECT_NEAR(g[0][0] / g[0][1], 0.75, 1e-15);
  std::vector<Tensor> small{Tensor::vector({0.3})};
  clip_global_norm(small, 5.0);
  EXPECT_EQ(small[0][0], 0.3);
}

TEST(PpoMath, LearningRateSchedule) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 0.0), 4e-4);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 0.25), 3e-4);
  EXPECT_EQ(learning_rate_at(c, 1.0), 0.0);
  const TrainConfig f = c.fine_tune(1000);
  EXPECT_EQ(f.total_steps, 1000u);
  EXPECT_DOUBLE_EQ(learning_rate_at(f, 0.0), learning_rate_at(c, 0.0) / 3.0);
  EXPECT_DOUBLE_EQ(learning_rate_at(f, 0.5), learning_rate_at(c, 0.5) / 3.0);
}

TEST(PpoMath, AdamFirstStepMovesByLearningRate) {
  ParameterStore store;
  store.add("w", Tensor::vector({1.0, -2.0, 0.5}));
  AdamOptimizer adam(0.9, 0.999, 1e-8);
  adam.step(store, {Tensor::vector({0.3, -5.0, 0.0})}, 0.01);
  EXPECT_NEAR(store.value(0)[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(store.value(0)[1], -2.0 + 0.01, 1e-9);
  EXPECT_EQ(store.value(0)[2], 0.5);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(TrainConfigTest, PresetsAndValidation) {
  EXPECT_NO_THROW(TrainConfig::desk().validate());
  const TrainConfig p = TrainConfig::paper();
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.steps_per_env, 10880u);
  EXPECT_EQ(p.minibatch_per_robot, 2040u);
  EXPECT_EQ(p.epochs, 10u);
  EXPECT_DOUBLE_EQ(p.clip, 0.1);
  EXPECT_DOUBLE_EQ(p.lambda, 0.9);
  EXPECT_THROW(TrainConfig::preset("huge"), std::invalid_argument);
  TrainConfig bad;
  bad.minibatch_per_robot = 7;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.clip = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Minibatches, EveryBatchHoldsEveryRobot) {
  std::mt19937_64 rng(5);
  const std::size_t robots = 3, per = 12, count = 4;
  const auto batches = make_minibatches(robots, per, count, rng);
  ASSERT_EQ(batches.size(), per / count);
  std::vector<int> seen(robots * per, 0);
  for (const auto& b : batches) {
    ASSERT_EQ(b.size(), robots * count);
    std::vector<std::size_t> per_robot(robots, 0);
    for (std::size_t i : b) {
      ++per_robot[i / per];
      ++seen[i];
    }
    for (std::size_t n : per_robot) EXPECT_EQ(n, count);
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_THROW(make_minibatches(robots, per, 5, rng), std::invalid_argument);
}

TEST(Rollouts, SizesAndSegments) {
  Trainer t = make_trainer(small_config());
  const RolloutBuffer buf = t.collect_rollouts();
  EXPECT_EQ(buf.size(), 40u);
  EXPECT_EQ(buf.per_robot(), 20u);
  EXPECT_EQ(t.global_step(), 40u);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t e = 0; e < 2; ++e)
      for (std::size_t s = 0; s < 10; ++s) {
        const std::size_t i = buf.index(m, e, s);
        EXPECT_EQ(buf.specs[i]->name, t.robots()[m]->name);
        EXPECT_EQ(buf.actions[i].size(), t.robots()[m]->joint_count());
        EXPECT_DOUBLE_EQ(buf.returns[i], buf.advantages[i] + buf.values[i]);
      }
}

TEST(Rollouts, Deterministic) {
  Trainer a = make_trainer(small_config()), b = make_trainer(small_config());
  const RolloutBuffer x = a.collect_rollouts(), y = b.collect_rollouts();
  ASSERT_EQ(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x.actions[i], y.actions[i]);
    EXPECT_EQ(x.rewards[i], y.rewards[i]);
    EXPECT_EQ(x.values[i], y.values[i]);
    EXPECT_EQ(x.log_probs[i], y.log_probs[i]);
    EXPECT_EQ(x.observations[i].joints, y.observations[i].joints);
  }
}

TEST(Rollouts, EpisodesResetOnDone) {
  TrainConfig c = small_config();
  c.steps_per_env = 30;
  c.minibatch_per_robot = 6;
  auto fleet = quadrupeds(1);
  EnvConfig env;
  env.episode_length = 7;
  Trainer t(make_policy(tiny(), fleet, 1), fleet, env, c);
  const RolloutBuffer buf = t.collect_rollouts();
  for (std::size_t e = 0; e < 2; ++e)
    for (std::size_t s = 0; s < 30; ++s) {
      const std::size_t i = buf.index(0, e, s);
      if (buf.dones[i] && s + 1 < 30) EXPECT_EQ(buf.observations[i + 1].joints.size(), 3 * fleet[0]->joint_count());
      if ((s + 1) % 7 == 0) EXPECT_TRUE(buf.dones[i]) << s;
    }
}

TEST(Update, RatioIsOneBeforeTheFirstStep) {
  Trainer t = make_trainer(small_config());
  RolloutBuffer buf = t.collect_rollouts();
  const Policy& p = t.policy();
  std::vector<const ObservationBundle*> obs;
  std::size_t joints = 0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    obs.push_back(&buf.observations[i]);
    joints += buf.actions[i].size();
  }
  const PolicyBatch batch = make_batch(obs, buf.specs, p.config().description_options());
  PpoTargets tgt{Tensor(Shape{joints, 1}), Tensor(Shape{buf.size(), 1}), Tensor(Shape{buf.size(), 1}),
                 Tensor(Shape{buf.size(), 1})};
  std::size_t row = 0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    for (double a : buf.actions[i]) tgt.actions[row++] = a;
    tgt.old_log_probs[i] = buf.log_probs[i];
    tgt.advantages[i] = buf.advantages[i];
  }
  tg::Tape tape;
  const BoundParams bp = bind(tape, p.parameters());
  const PpoLoss loss = ppo_loss(tape, p, bp, batch, tgt, t.config());
  double expected = 0.0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    EXPECT_NEAR(loss.ratio.value()[i], 1.0, 1e-12);
    expected -= buf.advantages[i];
  }
  EXPECT_NEAR(loss.policy.value().item(), expected / buf.size(), 1e-9);
}

TEST(Update, EntropyTermWithZeroWeightChangesNothing) {
  Trainer t = make_trainer(small_config());
  RolloutBuffer buf = t.collect_rollouts();
  const Policy& p = t.policy();
  std::vector<const ObservationBundle*> obs;
  std::size_t joints = 0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    obs.push_back(&buf.observations[i]);
    joints += buf.actions[i].size();
  }
  const PolicyBatch batch = make_batch(obs, buf.specs, p.config().description_options());
  PpoTargets tgt{Tensor(Shape{joints, 1}), Tensor(Shape{buf.size(), 1}), Tensor(Shape{buf.size(), 1}),
                 Tensor(Shape{buf.size(), 1})};
  std::size_t row = 0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    for (double a : buf.actions[i]) tgt.actions[row++] = a + 0.1;
    tgt.old_log_probs[i] = buf.log_probs[i];
    tgt.advantages[i] = buf.advantages[i];
    tgt.value_targets[i] = buf.returns[i];
  }
  TrainConfig c = t.config();
  ASSERT_EQ(c.entropy_coef, 0.0);
  tg::Tape with_term;
  const BoundParams a = bind(with_term, p.parameters());
  const PpoLoss full = ppo_loss(with_term, p, a, batch, tgt, c);
  with_term.backward(full.total);
  tg::Tape without_term;
  const BoundParams b = bind(without_term, p.parameters());
  const PpoLoss parts = ppo_loss(without_term, p, b, batch, tgt, c);
  without_term.backward(tg::add(parts.policy, tg::scale(parts.value, c.value_coef)));
  EXPECT_EQ(full.total.value().item(), tg::add(parts.policy, tg::scale(parts.value, c.value_coef)).value().item());
  EXPECT_TRUE(bit_equal(gradients(a, p.parameters()), gradients(b, p.parameters())));
}

TEST(Update, DescendsOnItsOwnBuffer) {
  TrainConfig c = small_config();
  c.epochs = 1;
  c.minibatch_per_robot = 20;
  c.learning_rate = 1e-4;
  c.max_grad_norm = 1e9;
  Trainer t = make_trainer(c);
  RolloutBuffer buf = t.collect_rollouts();
  const double before = surrogate_on_buffer(t.policy(), buf, c.clip);
  t.update(buf, 0.0);
  const double after = surrogate_on_buffer(t.policy(), buf, c.clip);
  EXPECT_LT(after, before);
}

TEST(Update, ClippedGradientNormIsBounded) {
  TrainConfig c = small_config();
  c.max_grad_norm = 1e-3;
  Trainer t = make_trainer(c);
  RolloutBuffer buf = t.collect_rollouts();
  const UpdateStats s = t.update(buf, 0.0);
  EXPECT_GT(s.grad_norm, c.max_grad_norm);
  EXPECT_LE(s.max_clipped_grad_norm, c.max_grad_norm + 1e-9);

  Trainer d = make_trainer(small_config());
  RolloutBuffer b2 = d.collect_rollouts();
  EXPECT_LE(d.update(b2, 0.0).max_clipped_grad_norm, 5.0 + 1e-9);
}

TEST(Update, ZeroLearningRateAtTheEnd) {
  Trainer t = make_trainer(small_config());
  RolloutBuffer buf = t.collect_rollouts();
  const auto before = params_of(t.policy());
  const UpdateStats s = t.update(buf, 1.0);
  EXPECT_EQ(s.learning_rate, 0.0);
  EXPECT_TRUE(bit_equal(before, params_of(t.policy())));
}

TEST(Update, Deterministic) {
  Trainer a = make_trainer(small_config()), b = make_trainer(small_config());
  RolloutBuffer x = a.collect_rollouts(), y = b.collect_rollouts();
  a.update(x, 0.0);
  b.update(y, 0.0);
  EXPECT_TRUE(bit_equal(params_of(a.policy()), params_of(b.policy())));
  EXPECT_FALSE(bit_equal(params_of(a.policy()), params_of(make_trainer(small_config()).policy())));
}

TEST(Update, NanLossAborts) {
  Trainer t = make_trainer(small_config());
  RolloutBuffer buf = t.collect_rollouts();
  buf.returns[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    t.update(buf, 0.0);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(Update, RequiresAdvantages) {
  Trainer t = make_trainer(small_config());
  RolloutBuffer buf = t.collect_rollouts();
  buf.advantages.clear();
  EXPECT_THROW(t.update(buf, 0.0), std::logic_error);
}

TEST(Training, ReproducibleCurves) {
  auto run = [] {
    Trainer t = make_trainer(small_config());
    std::vector<double> curve;
    t.train([&](const IterationStats& s) {
      curve.push_back(static_cast<double>(s.global_step));
      curve.push_back(s.update.policy_loss);
      curve.push_back(s.update.value_loss);
    });
    EXPECT_EQ(t.global_step(), 400u);
    return std::make_pair(curve, params_of(t.policy()));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_TRUE(bit_equal(a.second, b.second));
}

TEST(Training, ZeroBudgetLeavesParameters) {
  TrainConfig c = small_config();
  c.total_steps = 0;
  Trainer t = make_trainer(c);
  const auto before = params_of(t.policy());
  t.train();
  EXPECT_EQ(t.global_step(), 0u);
  EXPECT_TRUE(bit_equal(before, params_of(t.policy())));
}

TEST(Evaluation, RepeatableAndIndependentOfFleet) {
  auto fleet = quadrupeds(2);
  auto policy = make_policy(tiny(), fleet, 1);
  EnvConfig env;
  env.episode_length = 40;
  EvalOptions o;
  o.episodes = 2;
  const Evaluation a = evaluate(*policy, fleet, env, o), b = evaluate(*policy, fleet, env, o);
  ASSERT_EQ(a.robots.size(), 2u);
  EXPECT_EQ(a.mean_return, b.mean_return);
  EXPECT_EQ(a.tracking_share, b.tracking_share);
  const std::vector<RobotPtr> one{fleet[1]};
  EXPECT_EQ(evaluate(*policy, one, env, o).robots[0].mean_return, a.robots[1].mean_return);
  for (const auto& r : a.robots) {
    EXPECT_GE(r.tracking_share, 0.0);
    EXPECT_LE(r.tracking_share, 1.0);
  }
}

TEST(Evaluation, ZeroShotRobotOutsideTrainingSet) {
  auto fleet = quadrupeds(3);
  const std::vector<RobotPtr> train(fleet.begin(), fleet.begin() + 2), held{fleet[2]};
  auto policy = make_policy(tiny(), train, 1);
  EnvConfig env;
  env.episode_length = 20;
  EvalOptions o;
  o.episodes = 1;
  EXPECT_NO_THROW(evaluate(*policy, held, env, o));
  o.zero_feet = true;
  EXPECT_NO_THROW(evaluate(*policy, held, env, o));
  EXPECT_NO_THROW(evaluate_random(held, env, o));
}

TEST(Evaluation, PaddingRejectsUnregisteredRobot) {
  auto fleet = quadrupeds(3);
  const std::vector<RobotPtr> train(fleet.begin(), fleet.begin() + 2), held{fleet[2]};
  PolicyConfig c = tiny();
  c.architecture = Architecture::padding;
  auto policy = make_policy(c, train, 1);
  EnvConfig env;
  env.episode_length = 10;
  EXPECT_THROW(evaluate(*policy, held, env, EvalOptions{}), UnsupportedRobot);
}

TEST(CurveWriterTest, HeaderOnceAndRowsPerRobot) {
  const auto path = std::filesystem::temp_directory_path() / "urma_curve_test.csv";
  std::filesystem::remove(path);
  IterationStats s;
  s.global_step = 10;
  s.robots = {{"a", 1.0, 2.0, 0.5, 1}, {"b", 3.0, 4.0, 0.25, 1}};
  CurveWriter(path.string()).write(s);
  s.global_step = 20;
  CurveWriter(path.string()).write(s);
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0].rfind("global_step,robot,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("20,\"a\"", 0), 0u);
  std::filesystem::remove(path);
}
