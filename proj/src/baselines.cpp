#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "policy_internal.hpp"

namespace urma::detail {

using tg::Shape;
using tg::Tape;
using tg::Tensor;
using tg::Var;

namespace {

constexpr std::size_t kGroups = 3;
const std::array<std::string, kGroups> kGroupNames{"quadruped", "biped_humanoid", "hexapod"};

int group_of(MorphologyClass c) {
  switch (c) {
    case MorphologyClass::quadruped: return 0;
    case MorphologyClass::biped:
    case MorphologyClass::humanoid: return 1;
    case MorphologyClass::hexapod: return 2;
    case MorphologyClass::other: return -1;
  }
  return -1;
}

std::size_t max_slot(const RobotSpec& r) {
  int m = -1;
  for (std::size_t j = 0; j < r.joint_count(); ++j) m = std::max(m, r.joint_slot(j));
  return static_cast<std::size_t>(m + 1);
}

void check_unique_slots(const RobotSpec& r) {
  std::vector<int> slots;
  for (std::size_t j = 0; j < r.joint_count(); ++j) slots.push_back(r.joint_slot(j));
  std::sort(slots.begin(), slots.end());
  if (std::adjacent_find(slots.begin(), slots.end()) != slots.end())
    throw UnsupportedRobot("multihead: robot '" + r.name + "' maps two joints to the same slot");
}

/// Gaussian head with a state-independent log std per output slot.
Var slot_std(const BoundParams& p, std::size_t log_std, const PolicyConfig& c) {
  return tg::clamp(tg::exp(p[log_std]), c.min_std, c.max_std);
}

class MultiheadPolicy final : public Policy {
 public:
  struct Layout {
    std::size_t slots = 0, feet = 0;
  };

  MultiheadPolicy(const PolicyConfig& config, std::array<std::optional<Layout>, kGroups> layouts, std::uint64_t seed)
      : Policy(config), layouts_(layouts) {
    NetBuilder nb([this](std::string n, Tensor t, bool c) { return add_block(std::move(n), std::move(t), c); }, seed,
                  config_.layer_norm);
    const auto& H = config_.baseline_hidden;
    std::vector<std::size_t> core_hidden(H.begin() + 1, H.end());
    for (int pass = 0; pass < 2; ++pass) {
      const bool critic = pass == 1;
      const std::string pre = critic ? "critic/" : "";
      auto& net = critic ? critic_ : actor_;
      for (std::size_t g = 0; g < kGroups; ++g) {
        if (!layouts_[g]) continue;
        const std::size_t in = input_width(g, critic);
        net.heads[g] = nb.dense(pre + "head_" + kGroupNames[g], in, H[0], std::numbers::sqrt2, 0.0, critic);
        if (config_.layer_norm) net.head_norms[g] = nb.norm(pre + "head_" + kGroupNames[g] + ".norm", H[0], critic);
      }
      for (std::size_t i = 0; i + 1 < H.size(); ++i)
        net.core.push_back(nb.dense(pre + "core." + std::to_string(i), H[i], H[i + 1], std::numbers::sqrt2, 0.0, critic));
      if (critic) {
        value_ = nb.dense("critic/value", H.back(), 1, 1.0, 0.0, true);
      } else {
        for (std::size_t g = 0; g < kGroups; ++g) {
          if (!layouts_[g]) continue;
          decoders_[g] = nb.dense("decoder_" + kGroupNames[g], H.back(), layouts_[g]->slots, 0.01, 0.0, false);
          log_std_[g] = nb.block("log_std_" + kGroupNames[g] + ".v",
                                 Tensor(Shape{layouts_[g]->slots}, std::log(config_.initial_std)), false);
        }
      }
    }
  }

  std::string registry() const override {
    std::ostringstream out;
    for (std::size_t g = 0; g < kGroups; ++g)
      if (layouts_[g]) out << kGroupNames[g] << ' ' << layouts_[g]->slots << ' ' << layouts_[g]->feet << '\n';
    return out.str();
  }

  void check_robot(const RobotSpec& robot) const override {
    const int g = group_of(robot.morphology);
    if (g < 0 || !layouts_[g])
      throw UnsupportedRobot("multihead: no head registered for morphology class '" + to_string(robot.morphology) +
                             "' (robot '" + robot.name + "')");
    check_unique_slots(robot);
    if (max_slot(robot) > layouts_[g]->slots)
      throw UnsupportedRobot("multihead: robot '" + robot.name + "' needs " + std::to_string(max_slot(robot)) +
                             " slots but the " + kGroupNames[g] + " head has " + std::to_string(layouts_[g]->slots));
    if (robot.foot_count() > layouts_[g]->feet)
      throw UnsupportedRobot("multihead: robot '" + robot.name + "' has " + std::to_string(robot.foot_count()) +
                             " feet but the " + kGroupNames[g] + " head has " + std::to_string(layouts_[g]->feet));
  }

  ActorOutput actor(Tape& tape, const BoundParams& p, const PolicyBatch& batch) const override {
    std::vector<Var> means, stds;
    std::vector<std::uint32_t> order(batch.joint_rows());
    std::uint32_t produced = 0;
    for (std::size_t g = 0; g < kGroups; ++g) {
      auto [samples, x] = group_input(batch, g, false);
      if (samples.empty()) continue;
      Var h = trunk(tape, p, actor_, g, x);
      Var mean = tg::clamp(detail::dense_forward(p, decoders_[g], h), -config_.mean_clip, config_.mean_clip);
      const std::size_t K = layouts_[g]->slots;
      mean = tg::reshape(mean, Shape{samples.size() * K, 1});
      Var std = tg::reshape(slot_std(p, log_std_[g], config_), Shape{K, 1});
      std::vector<std::uint32_t> mean_rows, std_rows;
      for (std::size_t local = 0; local < samples.size(); ++local) {
        const std::size_t b = samples[local];
        const RobotSpec& r = *batch.robots[batch.sample_robot[b]];
        for (std::size_t j = 0; j < r.joint_count(); ++j) {
          mean_rows.push_back(static_cast<std::uint32_t>(local * K + r.joint_slot(j)));
          std_rows.push_back(static_cast<std::uint32_t>(r.joint_slot(j)));
          order[batch.joint_offset[b] + j] = produced++;
        }
      }
      means.push_back(tg::gather_rows(mean, mean_rows));
      stds.push_back(tg::gather_rows(std, std_rows));
    }
    Var mean = tg::gather_rows(tg::concat_rows(means), order);
    Var std = tg::gather_rows(tg::concat_rows(stds), order);
    return {mean, std};
  }

  Var critic(Tape& tape, const BoundParams& p, const PolicyBatch& batch) const override {
    std::vector<Var> values;
    std::vector<std::uint32_t> order(batch.samples);
    std::uint32_t produced = 0;
    for (std::size_t g = 0; g < kGroups; ++g) {
      auto [samples, x] = group_input(batch, g, true);
      if (samples.empty()) continue;
      values.push_back(detail::dense_forward(p, value_, trunk(tape, p, critic_, g, x)));
      for (std::size_t b : samples) order[b] = produced++;
    }
    return tg::gather_rows(tg::concat_rows(values), order);
  }

  /// Adds zero-initialized slots to a head so a larger robot of a registered class fits.
  void adapt_to(const RobotSpec& robot) override {
    const int g = group_of(robot.morphology);
    if (!config_.grow_heads || g < 0 || !layouts_[g]) return;
    Layout next{std::max(layouts_[g]->slots, max_slot(robot)), std::max(layouts_[g]->feet, robot.foot_count())};
    if (next.slots == layouts_[g]->slots && next.feet == layouts_[g]->feet) return;
    const Layout old = *layouts_[g];
    for (int pass = 0; pass < 2; ++pass) {
      const bool critic = pass == 1;
      auto& w = params_.value((critic ? critic_ : actor_).heads[g].weight);
      const std::size_t H = w.cols();
      const std::size_t extra = critic ? kPrivilegedObservationSize : 0;
      Tensor grown(Shape{next.slots * 3 + next.feet * 2 + kGeneralObservationSize + extra, H}, 0.0);
      auto copy_rows = [&](std::size_t from, std::size_t to, std::size_t count) {
        std::copy(w.data() + from * H, w.data() + (from + count) * H, grown.data() + to * H);
      };
      copy_rows(0, 0, old.slots * 3);
      copy_rows(old.slots * 3, next.slots * 3, old.feet * 2);
      copy_rows(old.slots * 3 + old.feet * 2, next.slots * 3 + next.feet * 2, kGeneralObservationSize + extra);
      params_.reshape((critic ? critic_ : actor_).heads[g].weight, std::move(grown));
    }
    auto& dw = params_.value(decoders_[g].weight);
    Tensor w2(Shape{dw.rows(), next.slots}, 0.0);
    for (std::size_t r = 0; r < dw.rows(); ++r)
      for (std::size_t c = 0; c < old.slots; ++c) w2.at(r, c) = dw.at(r, c);
    params_.reshape(decoders_[g].weight, std::move(w2));
    Tensor b2(Shape{next.slots}, 0.0), s2(Shape{next.slots}, std::log(config_.initial_std));
    std::copy_n(params_.value(decoders_[g].bias).data(), old.slots, b2.data());
    std::copy_n(params_.value(log_std_[g]).data(), old.slots, s2.data());
    params_.reshape(decoders_[g].bias, std::move(b2));
    params_.reshape(log_std_[g], std::move(s2));
    layouts_[g] = next;
  }

 private:
  struct Net {
    std::array<Dense, kGroups> heads{};
    std::array<std::optional<Norm>, kGroups> head_norms{};
    std::vector<Dense> core;
  };

  std::size_t input_width(std::size_t g, bool critic) const {
    return layouts_[g]->slots * kJointObservationSize + layouts_[g]->feet * kFootObservationSize +
           kGeneralObservationSize + (critic ? kPrivilegedObservationSize : 0);
  }

  std::pair<std::vector<std::size_t>, Tensor> group_input(const PolicyBatch& batch, std::size_t g, bool critic) const {
    std::vector<std::size_t> samples;
    for (std::size_t b = 0; b < batch.samples; ++b) {
      const RobotSpec& r = *batch.robots[batch.sample_robot[b]];
      if (group_of(r.morphology) == static_cast<int>(g)) samples.push_back(b);
    }
    if (samples.empty()) return {samples, Tensor()};
    const std::size_t width = input_width(g, critic);
    const std::size_t K = layouts_[g]->slots;
    Tensor x(Shape{samples.size(), width}, 0.0);
    for (std::size_t local = 0; local < samples.size(); ++local) {
      const std::size_t b = samples[local];
      const RobotSpec& r = *batch.robots[batch.sample_robot[b]];
      double* row = x.data() + local * width;
      for (std::size_t j = 0; j < r.joint_count(); ++j)
        for (std::size_t k = 0; k < kJointObservationSize; ++k)
          row[r.joint_slot(j) * kJointObservationSize + k] = batch.joint_obs.at(batch.joint_offset[b] + j, k);
      for (std::size_t f = 0; f < r.foot_count(); ++f)
        for (std::size_t k = 0; k < kFootObservationSize; ++k)
          row[K * kJointObservationSize + f * kFootObservationSize + k] = batch.foot_obs.at(batch.foot_offset[b] + f, k);
      double* general = row + K * kJointObservationSize + layouts_[g]->feet * kFootObservationSize;
      for (std::size_t k = 0; k < kGeneralObservationSize; ++k) general[k] = batch.general.at(b, k);
      if (critic)
        for (std::size_t k = 0; k < kPrivilegedObservationSize; ++k)
          general[kGeneralObservationSize + k] = batch.privileged.at(b, k);
    }
    return {samples, std::move(x)};
  }

  Var trunk(Tape& tape, const BoundParams& p, const Net& net, std::size_t g, const Tensor& x) const {
    Var h = detail::dense_forward(p, net.heads[g], tape.constant(x));
    if (net.head_norms[g]) h = tg::layer_norm(h, p[net.head_norms[g]->gain], p[net.head_norms[g]->bias]);
    h = tg::tanh(h);
    for (const auto& d : net.core) h = tg::tanh(detail::dense_forward(p, d, h));
    return h;
  }

  std::array<std::optional<Layout>, kGroups> layouts_;
  Net actor_, critic_;
  std::array<Dense, kGroups> decoders_{};
  std::array<std::size_t, kGroups> log_std_{};
  Dense value_;
};

class PaddingPolicy final : public Policy {
 public:
  PaddingPolicy(const PolicyConfig& config, std::vector<std::string> tasks, std::size_t max_joints,
                std::size_t max_feet, std::uint64_t seed)
      : Policy(config), tasks_(std::move(tasks)), max_joints_(max_joints), max_feet_(max_feet) {
    NetBuilder nb([this](std::string n, Tensor t, bool c) { return add_block(std::move(n), std::move(t), c); }, seed,
                  config_.layer_norm);
    actor_ = nb.mlp("padding_mlp", input_width(false), config_.baseline_hidden, max_joints_,
                    MlpOptions{true, false, 0.01, 0.0}, false);
    log_std_ = nb.block("log_std.v", Tensor(Shape{max_joints_}, std::log(config_.initial_std)), false);
    critic_ = nb.mlp("critic/padding_mlp", input_width(true), config_.baseline_hidden, 1,
                     MlpOptions{true, false, 1.0, 0.0}, true);
  }

  std::string registry() const override {
    std::ostringstream out;
    out << max_joints_ << ' ' << max_feet_ << '\n';
    for (const auto& t : tasks_) out << t << '\n';
    return out.str();
  }

  void check_robot(const RobotSpec& robot) const override { (void)task_of(robot); }

  ActorOutput actor(Tape& tape, const BoundParams& p, const PolicyBatch& batch) const override {
    Var mean = tg::clamp(actor_.forward(p, tape.constant(input(batch, false))), -config_.mean_clip, config_.mean_clip);
    mean = tg::reshape(mean, Shape{batch.samples * max_joints_, 1});
    Var std = tg::reshape(slot_std(p, log_std_, config_), Shape{max_joints_, 1});
    std::vector<std::uint32_t> mean_rows, std_rows;
    for (std::size_t b = 0; b < batch.samples; ++b)
      for (std::size_t j = 0; j < batch.joints(b); ++j) {
        mean_rows.push_back(static_cast<std::uint32_t>(b * max_joints_ + j));
        std_rows.push_back(static_cast<std::uint32_t>(j));
      }
    return {tg::gather_rows(mean, mean_rows), tg::gather_rows(std, std_rows)};
  }

  Var critic(Tape& tape, const BoundParams& p, const PolicyBatch& batch) const override {
    return critic_.forward(p, tape.constant(input(batch, true)));
  }

 private:
  std::size_t input_width(bool critic) const {
    return max_joints_ * kJointObservationSize + max_feet_ * kFootObservationSize + kGeneralObservationSize +
           tasks_.size() + (critic ? kPrivilegedObservationSize : 0);
  }

  std::size_t task_of(const RobotSpec& robot) const {
    auto it = std::find(tasks_.begin(), tasks_.end(), robot.name);
    if (it == tasks_.end()) throw UnsupportedRobot("padding: robot '" + robot.name + "' has no registered task id");
    if (robot.joint_count() > max_joints_ || robot.foot_count() > max_feet_)
      throw UnsupportedRobot("padding: robot '" + robot.name + "' overflows the padded layout (" +
                             std::to_string(robot.joint_count()) + " joints / " + std::to_string(robot.foot_count()) +
                             " feet, max " + std::to_string(max_joints_) + " / " + std::to_string(max_feet_) + ")");
    return static_cast<std::size_t>(it - tasks_.begin());
  }

  Tensor input(const PolicyBatch& batch, bool critic) const {
    const std::size_t width = input_width(critic);
    Tensor x(Shape{batch.samples, width}, 0.0);
    for (std::size_t b = 0; b < batch.samples; ++b) {
      const RobotSpec& r = *batch.robots[batch.sample_robot[b]];
      const std::size_t task = task_of(r);
      double* row = x.data() + b * width;
      const std::size_t nj = batch.joints(b) * kJointObservationSize;
      std::copy_n(batch.joint_obs.data() + batch.joint_offset[b] * kJointObservationSize, nj, row);
      const std::size_t nf = (batch.foot_offset[b + 1] - batch.foot_offset[b]) * kFootObservationSize;
      std::copy_n(batch.foot_obs.data() + batch.foot_offset[b] * kFootObservationSize, nf,
                  row + max_joints_ * kJointObservationSize);
      double* rest = row + max_joints_ * kJointObservationSize + max_feet_ * kFootObservationSize;
      std::copy_n(batch.general.data() + b * kGeneralObservationSize, kGeneralObservationSize, rest);
      rest[kGeneralObservationSize + task] = 1.0;
      if (critic)
        std::copy_n(batch.privileged.data() + b * kPrivilegedObservationSize, kPrivilegedObservationSize,
                    rest + kGeneralObservationSize + tasks_.size());
    }
    return x;
  }

  std::vector<std::string> tasks_;
  std::size_t max_joints_, max_feet_;
  Mlp actor_, critic_;
  std::size_t log_std_ = 0;
};

}  // namespace

std::unique_ptr<Policy> make_multihead(const PolicyConfig& config, std::span<const RobotPtr> robots,
                                       std::uint64_t seed) {
  std::array<std::optional<MultiheadPolicy::Layout>, kGroups> layouts;
  for (const auto& r : robots) {
    const int g = group_of(r->morphology);
    if (g < 0) throw UnsupportedRobot("multihead: morphology class 'other' has no head (robot '" + r->name + "')");
    check_unique_slots(*r);
    auto& l = layouts[g];
    if (!l) l = MultiheadPolicy::Layout{};
    l->slots = std::max(l->slots, max_slot(*r));
    l->feet = std::max(l->feet, r->foot_count());
  }
  if (std::none_of(layouts.begin(), layouts.end(), [](const auto& l) { return l.has_value(); }))
    throw std::invalid_argument("multihead: needs at least one training robot");
  return std::make_unique<MultiheadPolicy>(config, layouts, seed);
}

std::unique_ptr<Policy> make_padding(const PolicyConfig& config, std::span<const RobotPtr> robots, std::uint64_t seed) {
  if (robots.empty()) throw std::invalid_argument("padding: needs at least one training robot");
  std::vector<std::string> tasks;
  std::size_t mj = 0, mf = 0;
  for (const auto& r : robots) {
    if (std::find(tasks.begin(), tasks.end(), r->name) == tasks.end()) tasks.push_back(r->name);
    mj = std::max(mj, r->joint_count());
    mf = std::max(mf, r->foot_count());
  }
  return std::make_unique<PaddingPolicy>(config, tasks, mj, mf, seed);
}

std::unique_ptr<Policy> multihead_from_registry(const PolicyConfig& config, const std::string& registry,
                                                std::uint64_t seed) {
  std::array<std::optional<MultiheadPolicy::Layout>, kGroups> layouts;
  std::istringstream lines(registry);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string name, rest;
    std::size_t slots, feet;
    if (!(in >> name >> slots >> feet) || (in >> rest))
      throw std::invalid_argument("multihead registry: malformed line '" + line + "'");
    auto it = std::find(kGroupNames.begin(), kGroupNames.end(), name);
    if (it == kGroupNames.end()) throw std::invalid_argument("multihead registry: unknown group '" + name + "'");
    layouts[it - kGroupNames.begin()] = MultiheadPolicy::Layout{slots, feet};
  }
  return std::make_unique<MultiheadPolicy>(config, layouts, seed);
}

std::unique_ptr<Policy> padding_from_registry(const PolicyConfig& config, const std::string& registry,
                                              std::uint64_t seed) {
  std::istringstream in(registry);
  std::size_t mj = 0, mf = 0;
  if (!(in >> mj >> mf)) throw std::invalid_argument("padding registry: missing layout line");
  std::string line;
  std::getline(in, line);
  std::vector<std::string> tasks;
  while (std::getline(in, line))
    if (!line.empty()) tasks.push_back(line);
  return std::make_unique<PaddingPolicy>(config, tasks, mj, mf, seed);
}

}  // namespace urma::detail
