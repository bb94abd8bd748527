#include "urma/policy.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "policy_internal.hpp"

namespace urma {

using tg::Shape;
using tg::Tape;
using tg::Tensor;
using tg::Var;

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::urma: return "urma";
    case Architecture::multihead: return "multihead";
    case Architecture::padding: return "padding";
  }
  return "?";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "urma") return Architecture::urma;
  if (s == "multihead") return Architecture::multihead;
  if (s == "padding") return Architecture::padding;
  throw std::invalid_argument("unknown architecture '" + s + "' (expected urma, multihead or padding)");
}

std::string to_string(MeanNorm m) { return m == MeanNorm::concat_input ? "concat_input" : "first_hidden"; }

MeanNorm parse_mean_norm(const std::string& s) {
  if (s == "concat_input") return MeanNorm::concat_input;
  if (s == "first_hidden") return MeanNorm::first_hidden;
  throw std::invalid_argument("unknown mean norm placement '" + s + "' (expected concat_input or first_hidden)");
}

std::string to_string(SharedDescription s) {
  switch (s) {
    case SharedDescription::none: return "none";
    case SharedDescription::full: return "full";
    case SharedDescription::pre_softmax: return "pre_softmax";
  }
  return "?";
}

SharedDescription parse_shared_description(const std::string& s) {
  if (s == "none") return SharedDescription::none;
  if (s == "full") return SharedDescription::full;
  if (s == "pre_softmax") return SharedDescription::pre_softmax;
  throw std::invalid_argument("unknown shared description mode '" + s + "' (expected none, full or pre_softmax)");
}

PolicyConfig PolicyConfig::desk() { return PolicyConfig{}; }

PolicyConfig PolicyConfig::compact() {
  PolicyConfig c;
  c.latent = 16;
  c.description_hidden = {32};
  c.observation_hidden = {16};
  c.core_hidden = {64, 64};
  c.decoder_description_hidden = {32};
  c.decoder_description_latent = 16;
  c.mean_hidden = {32, 32};
  c.std_hidden = {16};
  c.baseline_hidden = {128, 128};
  c.mean_norm = MeanNorm::first_hidden;
  return c;
}

PolicyConfig PolicyConfig::paper() {
  PolicyConfig c;
  c.latent = 64;
  c.description_hidden = {128, 128};
  c.observation_hidden = {128, 128};
  c.core_hidden = {336, 336};
  c.decoder_description_hidden = {128, 128};
  c.decoder_description_latent = 64;
  c.mean_hidden = {192, 192};
  c.std_hidden = {128};
  c.baseline_hidden = {512, 512, 256};
  return c;
}

PolicyConfig PolicyConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "compact") return compact();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown network preset '" + name + "' (expected desk, compact or paper)");
}

void PolicyConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("PolicyConfig: " + what);
  };
  auto positive = [](const std::vector<std::size_t>& v) {
    return std::all_of(v.begin(), v.end(), [](std::size_t x) { return x > 0; });
  };
  require(latent >= 2, "latent must be at least 2");
  require(decoder_description_latent >= 1, "decoder_description_latent must be positive");
  require(!core_hidden.empty() && positive(core_hidden), "core_hidden needs at least one positive width");
  require(!mean_hidden.empty() && positive(mean_hidden), "mean_hidden needs at least one positive width");
  require(!baseline_hidden.empty() && positive(baseline_hidden), "baseline_hidden needs at least one positive width");
  require(positive(description_hidden) && positive(observation_hidden) && positive(decoder_description_hidden) &&
              positive(std_hidden),
          "hidden widths must be positive");
  require(initial_temperature >= 0.0 && temperature_epsilon > 0.0, "temperature must be >= 0 with epsilon > 0");
  require(min_std > 0.0 && min_std < max_std, "std clip range must satisfy 0 < min < max");
  require(initial_std >= min_std && initial_std <= max_std, "initial_std must lie inside the std clip range");
  require(mean_clip > 0.0, "mean_clip must be positive");
}

// ---------------------------------------------------------------------------------------------------------------
// Parameters

std::size_t ParameterStore::add(std::string name, Tensor init) {
  if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter block '" + name + "'");
  by_name_[name] = blocks_.size();
  blocks_.push_back({std::move(name), std::move(init)});
  return blocks_.size() - 1;
}

std::size_t ParameterStore::index(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("no parameter block '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.value.size();
  return n;
}

std::map<std::string, std::size_t> ParameterStore::count_by_group() const {
  std::map<std::string, std::size_t> out;
  for (const auto& b : blocks_) out[b.name.substr(0, b.name.find('.'))] += b.value.size();
  return out;
}

bool ParameterStore::all_finite() const {
  return std::all_of(blocks_.begin(), blocks_.end(), [](const Block& b) { return b.value.all_finite(); });
}

BoundParams bind(Tape& tape, const ParameterStore& store) {
  BoundParams p;
  p.vars.reserve(store.size());
  for (const auto& b : store.blocks()) p.vars.push_back(tape.leaf(b.value));
  return p;
}

std::vector<Tensor> gradients(const BoundParams& bound, const ParameterStore& store) {
  std::vector<Tensor> g;
  g.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) g.push_back(bound.vars[i].grad());
  return g;
}

Tensor orthogonal(std::size_t in, std::size_t out, double gain, std::mt19937_64& rng) {
  const std::size_t rows = std::max(in, out), cols = std::min(in, out);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a(rows, cols);
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r) a(r, c) = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const Eigen::MatrixXd r = qr.matrixQR();
  for (std::size_t c = 0; c < cols; ++c)
    if (r(c, c) < 0.0) q.col(c) *= -1.0;
  Tensor w(Shape{in, out});
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t o = 0; o < out; ++o) w.at(i, o) = gain * (in >= out ? q(i, o) : q(o, i));
  return w;
}

// ---------------------------------------------------------------------------------------------------------------
// Layers

namespace detail {

Var constant(Tape& tape, const Tensor& t) { return tape.constant(t); }

Var dense_forward(const BoundParams& p, const Dense& d, Var x) {
  return tg::add_rowwise(tg::matmul(x, p[d.weight]), p[d.bias]);
}

Var Mlp::forward(const BoundParams& p, Var x) const {
  Var h = dense_forward(p, layers[0], x);
  return forward_from(p, h, 1);
}

Var Mlp::forward_from(const BoundParams& p, Var h, std::size_t first) const {
  if (first == 1 && first_norm) h = tg::layer_norm(h, p[first_norm->gain], p[first_norm->bias]);
  for (std::size_t i = first; i < layers.size(); ++i) {
    h = tg::tanh(h);
    h = dense_forward(p, layers[i], h);
  }
  return tanh_output ? tg::tanh(h) : h;
}

Dense NetBuilder::dense(const std::string& name, std::size_t in, std::size_t out, double gain, double bias,
                        bool critic) {
  Dense d;
  d.weight = add_(name + ".w", orthogonal(in, out, gain, rng_), critic);
  d.bias = add_(name + ".b", Tensor(Shape{out}, bias), critic);
  return d;
}

Norm NetBuilder::norm(const std::string& name, std::size_t width, bool critic) {
  Norm n;
  n.gain = add_(name + ".gain", Tensor(Shape{width}, 1.0), critic);
  n.bias = add_(name + ".bias", Tensor(Shape{width}, 0.0), critic);
  return n;
}

Mlp NetBuilder::mlp(const std::string& prefix, std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                    const MlpOptions& options, bool critic) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  if (out > 0) dims.push_back(out);
  if (dims.size() < 2) throw std::invalid_argument("mlp '" + prefix + "' needs at least one layer");
  Mlp m;
  m.tanh_output = options.tanh_output;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    const bool output_layer = last && out > 0;
    m.layers.push_back(dense(prefix + "." + std::to_string(i), dims[i], dims[i + 1],
                             output_layer ? options.output_gain : std::numbers::sqrt2,
                             output_layer ? options.output_bias : 0.0, critic));
    if (i == 0 && options.norm_first && layer_norm_ && dims[1] >= 2 && !(output_layer && dims.size() == 2))
      m.first_norm = norm(prefix + ".norm", dims[1], critic);
  }
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------------------------
// Batching

PolicyBatch make_batch(std::span<const ObservationBundle* const> observations, std::span<const RobotPtr> robots,
                       const DescriptionOptions& options) {
  if (observations.size() != robots.size())
    throw std::invalid_argument("make_batch: observation and robot counts differ");
  PolicyBatch b;
  b.samples = observations.size();
  std::size_t nj = 0, nf = 0;
  for (std::size_t i = 0; i < b.samples; ++i) {
    const auto& o = *observations[i];
    const auto& r = *robots[i];
    if (o.joint_count() != r.joint_count() || o.foot_count() != r.foot_count() ||
        o.joints.size() % kJointObservationSize || o.feet.size() % kFootObservationSize)
      throw std::invalid_argument("make_batch: observation of sample " + std::to_string(i) + " has " +
                                  std::to_string(o.joint_count()) + " joints / " + std::to_string(o.foot_count()) +
                                  " feet but robot '" + r.name + "' has " + std::to_string(r.joint_count()) + " / " +
                                  std::to_string(r.foot_count()));
    nj += r.joint_count();
    nf += r.foot_count();
  }
  b.joint_obs = Tensor(Shape{nj, kJointObservationSize});
  b.foot_obs = Tensor(Shape{nf, kFootObservationSize});
  b.general = Tensor(Shape{b.samples, kGeneralObservationSize});
  b.privileged = Tensor(Shape{b.samples, kPrivilegedObservationSize});
  b.joint_offset.assign(1, 0);
  b.foot_offset.assign(1, 0);
  b.joint_sample.reserve(nj);
  b.foot_sample.reserve(nf);
  b.sample_robot.reserve(b.samples);

  std::vector<std::uint32_t> robot_foot_offset;
  std::vector<double> jd, fd;
  std::size_t jrow = 0, frow = 0;
  for (std::size_t i = 0; i < b.samples; ++i) {
    const RobotPtr& robot = robots[i];
    std::size_t u = 0;
    while (u < b.robots.size() && b.robots[u] != robot) ++u;
    if (u == b.robots.size()) {
      b.robots.push_back(robot);
      b.robot_joint_offset.push_back(static_cast<std::uint32_t>(jd.size() / kJointDescriptionSize));
      robot_foot_offset.push_back(static_cast<std::uint32_t>(fd.size() / kFootDescriptionSize));
      for (std::size_t j = 0; j < robot->joint_count(); ++j) {
        const auto d = build_joint_description(*robot, j, options);
        jd.insert(jd.end(), d.begin(), d.end());
      }
      for (std::size_t f = 0; f < robot->foot_count(); ++f) {
        const auto d = build_foot_description(*robot, f, options);
        fd.insert(fd.end(), d.begin(), d.end());
      }
    }
    b.sample_robot.push_back(static_cast<std::uint32_t>(u));
    const auto& o = *observations[i];
    std::copy(o.joints.begin(), o.joints.end(), b.joint_obs.data() + jrow * kJointObservationSize);
    std::copy(o.feet.begin(), o.feet.end(), b.foot_obs.data() + frow * kFootObservationSize);
    std::copy(o.general.begin(), o.general.end(), b.general.data() + i * kGeneralObservationSize);
    std::copy(o.privileged.begin(), o.privileged.end(), b.privileged.data() + i * kPrivilegedObservationSize);
    for (std::size_t j = 0; j < robot->joint_count(); ++j) {
      b.joint_sample.push_back(static_cast<std::uint32_t>(i));
      b.joint_desc_row.push_back(static_cast<std::uint32_t>(b.robot_joint_offset[u] + j));
    }
    for (std::size_t f = 0; f < robot->foot_count(); ++f) {
      b.foot_sample.push_back(static_cast<std::uint32_t>(i));
      b.foot_desc_row.push_back(static_cast<std::uint32_t>(robot_foot_offset[u] + f));
    }
    jrow += robot->joint_count();
    frow += robot->foot_count();
    b.joint_offset.push_back(static_cast<std::uint32_t>(jrow));
    b.foot_offset.push_back(static_cast<std::uint32_t>(frow));
  }
  const std::size_t uj = jd.size() / kJointDescriptionSize, uf = fd.size() / kFootDescriptionSize;
  b.joint_desc = Tensor(Shape{uj, kJointDescriptionSize}, std::move(jd));
  b.foot_desc = Tensor(Shape{uf, kFootDescriptionSize}, std::move(fd));
  return b;
}

PolicyBatch make_batch(const ObservationBundle& observation, const RobotPtr& robot, const DescriptionOptions& options) {
  const ObservationBundle* o = &observation;
  return make_batch(std::span<const ObservationBundle* const>(&o, 1), std::span<const RobotPtr>(&robot, 1), options);
}

// ---------------------------------------------------------------------------------------------------------------
// Policy base

std::size_t Policy::add_block(std::string name, Tensor init, bool critic) {
  critic_mask_.push_back(critic);
  return params_.add(std::move(name), std::move(init));
}

void Policy::check_batch(const PolicyBatch& batch) const {
  for (const auto& r : batch.robots) check_robot(*r);
}

namespace {

using detail::Dense;
using detail::Mlp;
using detail::MlpOptions;
using detail::NetBuilder;
using detail::Norm;

struct SetEncoder {
  Mlp description;
  Mlp observation;
  std::size_t temperature = 0;
};

class UrmaPolicy final : public Policy {
 public:
  UrmaPolicy(const PolicyConfig& config, std::uint64_t seed) : Policy(config) {
    config_.validate();
    NetBuilder nb([this](std::string n, Tensor t, bool c) { return add_block(std::move(n), std::move(t), c); }, seed,
                  config_.layer_norm);
    const std::size_t L = config_.latent;
    for (int pass = 0; pass < 2; ++pass) {
      const bool critic = pass == 1;
      const std::string pre = critic ? "critic/" : "";
      auto& enc = critic ? critic_ : actor_;
      enc.joints = encoder(nb, pre, "", kJointDescriptionSize, kJointObservationSize, critic);
      enc.feet = encoder(nb, pre, "_feet", kFootDescriptionSize, kFootObservationSize, critic);
      const std::size_t core_in = kGeneralObservationSize + (critic ? kPrivilegedObservationSize : 0) + 2 * L;
      enc.core = nb.mlp(pre + "h_theta", core_in, config_.core_hidden, 0, MlpOptions{true, true}, critic);
    }
    value_head_ = nb.dense("critic/value", config_.core_hidden.back(), 1, 1.0, 0.0, true);

    if (config_.shared_description == SharedDescription::none) {
      decoder_description_ = nb.mlp("g_omega", kJointDescriptionSize, config_.decoder_description_hidden,
                                    config_.decoder_description_latent, MlpOptions{true, true}, false);
      action_description_width_ = config_.decoder_description_latent;
    } else {
      action_description_width_ = L;
    }

    const std::size_t A = config_.core_hidden.back();
    const std::size_t Dd = action_description_width_;
    const std::size_t in = Dd + A + L;
    const auto& H = config_.mean_hidden;
    Tensor first = orthogonal(in, H[0], std::numbers::sqrt2, nb.rng());
    if (config_.mean_norm == MeanNorm::concat_input) {
      if (config_.layer_norm) mean_input_norm_ = nb.norm("mu_nu.input_norm", in, false);
      mean_first_.weight = nb.block("mu_nu.0.w", first, false);
    } else {
      auto rows = [&](std::size_t from, std::size_t count) {
        Tensor t(Shape{count, H[0]});
        std::copy(first.data() + from * H[0], first.data() + (from + count) * H[0], t.data());
        return t;
      };
      mean_desc_weight_ = nb.block("mu_nu.0.w_desc", rows(0, Dd), false);
      mean_action_weight_ = nb.block("mu_nu.0.w_action", rows(Dd, A), false);
      mean_first_.weight = nb.block("mu_nu.0.w_joint", rows(Dd + A, L), false);
    }
    mean_first_.bias = nb.block("mu_nu.0.b", Tensor(Shape{H[0]}, 0.0), false);
    mean_.layers.push_back(mean_first_);
    if (config_.mean_norm == MeanNorm::first_hidden && config_.layer_norm && H[0] >= 2)
      mean_.first_norm = nb.norm("mu_nu.norm", H[0], false);
    for (std::size_t i = 1; i < H.size(); ++i)
      mean_.layers.push_back(nb.dense("mu_nu." + std::to_string(i), H[i - 1], H[i], std::numbers::sqrt2, 0.0, false));
    mean_.layers.push_back(nb.dense("mu_nu." + std::to_string(H.size()), H.back(), 1, 0.01, 0.0, false));
    mean_.tanh_output = false;

    std_ = nb.mlp("sigma_upsilon", Dd, config_.std_hidden, 1,
                  MlpOptions{true, false, 0.01, std::log(config_.initial_std)}, false);
  }

  void check_robot(const RobotSpec& robot) const override {
    if (robot.joint_count() == 0) throw UnsupportedRobot("urma: robot '" + robot.name + "' has no joints");
  }

  void project() override {
    for (std::size_t i : {actor_.joints.temperature, actor_.feet.temperature, critic_.joints.temperature,
                          critic_.feet.temperature}) {
      auto& t = params_.value(i);
      t[0] = std::max(t[0], 0.0);
    }
  }

  ActorOutput actor(Tape& tape, const BoundParams& p, const PolicyBatch& batch) const override {
    const Trunk t = trunk(tape, p, batch, actor_, false);
    Var desc_u;  // decoder description per distinct joint row
    switch (config_.shared_description) {
      case SharedDescription::none: desc_u = decoder_description_.forward(p, t.joint_desc); break;
      case SharedDescription::full: desc_u = t.joint_attention_u; break;
      case SharedDescription::pre_softmax: desc_u = t.joint_logits_u; break;
    }
    const auto& desc_row = batch.joint_desc_row;
    Var mean;
    if (config_.mean_norm == MeanNorm::concat_input) {
      const Var parts[] = {tg::gather_rows(desc_u, desc_row), tg::gather_rows(t.action, batch.joint_sample),
                           t.joint_latents};
      Var x = tg::concat_cols(parts);
      if (mean_input_norm_) x = tg::layer_norm(x, p[mean_input_norm_->gain], p[mean_input_norm_->bias]);
      mean = mean_.forward(p, x);
    } else {
      Var h = tg::matmul(t.joint_latents, p[mean_first_.weight]);
      h = tg::add(h, tg::gather_rows(tg::matmul(desc_u, p[mean_desc_weight_]), desc_row));
      h = tg::add(h, tg::gather_rows(tg::matmul(t.action, p[mean_action_weight_]), batch.joint_sample));
      h = tg::add_rowwise(h, p[mean_first_.bias]);
      mean = mean_.forward_from(p, h, 1);
    }
    mean = tg::clamp(mean, -config_.mean_clip, config_.mean_clip);
    Var std_u = tg::clamp(tg::exp(std_.forward(p, desc_u)), config_.min_std, config_.max_std);
    return {mean, tg::gather_rows(std_u, desc_row)};
  }

  Var critic(Tape& tape, const BoundParams& p, const PolicyBatch& batch) const override {
    const Trunk t = trunk(tape, p, batch, critic_, true);
    return detail::dense_forward(p, value_head_, t.action);
  }

  /// Encoder output z_bar and per-joint latents, exposed for tests.
  struct Trunk {
    Var joint_desc;
    Var joint_logits_u, joint_attention_u;
    Var joint_latents;  // (N_j x L)
    Var joint_sum;      // (B x L)
    Var foot_sum;       // (B x L)
    Var action;         // (B x A)
  };

 private:
  struct Encoders {
    SetEncoder joints, feet;
    Mlp core;
  };

  SetEncoder encoder(NetBuilder& nb, const std::string& pre, const std::string& suffix, std::size_t desc_width,
                     std::size_t obs_width, bool critic) {
    SetEncoder e;
    e.description = nb.mlp(pre + "f_phi" + suffix, desc_width, config_.description_hidden, config_.latent,
                           MlpOptions{true, true}, critic);
    e.observation = nb.mlp(pre + "f_psi" + suffix, obs_width, config_.observation_hidden, config_.latent,
                           MlpOptions{true, true}, critic);
    e.temperature = nb.block(pre + "tau" + suffix, Tensor(Shape{1}, config_.initial_temperature), critic);
    return e;
  }

  struct SetOut {
    Var logits_u, attention_u, latents, sum;
  };

  SetOut encode(Tape& tape, const BoundParams& p, const SetEncoder& e, const Tensor& desc, const Tensor& obs,
                std::span<const std::uint32_t> desc_row, std::span<const std::uint32_t> sample,
                std::size_t samples) const {
    SetOut out;
    if (obs.rows() == 0 || obs.size() == 0) {
      out.sum = tape.constant(Tensor(Shape{samples, config_.latent}, 0.0));
      return out;
    }
    Var d = tape.constant(desc);
    out.logits_u = e.description.forward(p, d);
    out.attention_u = tg::softmax_with_temperature(out.logits_u, p[e.temperature], config_.temperature_epsilon);
    Var enc = e.observation.forward(p, tape.constant(obs));
    out.latents = tg::mul(tg::gather_rows(out.attention_u, desc_row), enc);
    out.sum = tg::segment_sum(out.latents, sample, samples);
    return out;
  }

 public:
  Trunk trunk(Tape& tape, const BoundParams& p, const PolicyBatch& batch, const Encoders& enc, bool critic) const {
    Trunk t;
    const SetOut joints = encode(tape, p, enc.joints, batch.joint_desc, batch.joint_obs, batch.joint_desc_row,
                                 batch.joint_sample, batch.samples);
    const SetOut feet = encode(tape, p, enc.feet, batch.foot_desc, batch.foot_obs, batch.foot_desc_row,
                               batch.foot_sample, batch.samples);
    t.joint_desc = tape.constant(batch.joint_desc);
    t.joint_logits_u = joints.logits_u;
    t.joint_attention_u = joints.attention_u;
    t.joint_latents = joints.latents;
    t.joint_sum = joints.sum;
    t.foot_sum = feet.sum;
    std::vector<Var> parts{tape.constant(batch.general)};
    if (critic) parts.push_back(tape.constant(batch.privileged));
    parts.push_back(joints.sum);
    parts.push_back(feet.sum);
    t.action = enc.core.forward(p, tg::concat_cols(parts));
    return t;
  }

  const Encoders& actor_encoders() const { return actor_; }

 private:
  Encoders actor_, critic_;
  Dense value_head_;
  Mlp decoder_description_;
  std::size_t action_description_width_ = 0;
  std::optional<Norm> mean_input_norm_;
  Dense mean_first_;
  std::size_t mean_desc_weight_ = 0, mean_action_weight_ = 0;
  Mlp mean_;
  Mlp std_;
};

}  // namespace

std::pair<Tensor, Tensor> joint_set_encoding(const Policy& policy, const PolicyBatch& batch) {
  const auto* urma = dynamic_cast<const UrmaPolicy*>(&policy);
  if (!urma) throw std::invalid_argument("joint_set_encoding: policy is not a URMA policy");
  Tape tape(Tape::Mode::inference);
  const BoundParams p = bind(tape, policy.parameters());
  const auto t = urma->trunk(tape, p, batch, urma->actor_encoders(), false);
  return {t.joint_sum.value(), t.joint_latents.value()};
}

std::unique_ptr<Policy> make_policy(const PolicyConfig& config, std::span<const RobotPtr> training_robots,
                                    std::uint64_t seed) {
  config.validate();
  switch (config.architecture) {
    case Architecture::urma: return std::make_unique<UrmaPolicy>(config, seed);
    case Architecture::multihead: return detail::make_multihead(config, training_robots, seed);
    case Architecture::padding: return detail::make_padding(config, training_robots, seed);
  }
  throw std::invalid_argument("make_policy: unknown architecture");
}

std::unique_ptr<Policy> make_policy_from_registry(const PolicyConfig& config, const std::string& registry,
                                                  std::uint64_t seed) {
  config.validate();
  switch (config.architecture) {
    case Architecture::urma: return std::make_unique<UrmaPolicy>(config, seed);
    case Architecture::multihead: return detail::multihead_from_registry(config, registry, seed);
    case Architecture::padding: return detail::padding_from_registry(config, registry, seed);
  }
  throw std::invalid_argument("make_policy_from_registry: unknown architecture");
}

// ---------------------------------------------------------------------------------------------------------------
// Distributions

std::vector<ActionDistribution> action_distributions(const Policy& policy, const PolicyBatch& batch) {
  policy.check_batch(batch);
  Tape tape(Tape::Mode::inference);
  const BoundParams p = bind(tape, policy.parameters());
  const ActorOutput out = policy.actor(tape, p, batch);
  const auto& mean = out.mean.value();
  const auto& std = out.std.value();
  std::vector<ActionDistribution> dists(batch.samples);
  for (std::size_t b = 0; b < batch.samples; ++b) {
    const std::size_t lo = batch.joint_offset[b], hi = batch.joint_offset[b + 1];
    dists[b].mean.assign(mean.data() + lo, mean.data() + hi);
    dists[b].std.assign(std.data() + lo, std.data() + hi);
  }
  return dists;
}

std::vector<double> critic_values(const Policy& policy, const PolicyBatch& batch) {
  policy.check_batch(batch);
  Tape tape(Tape::Mode::inference);
  const BoundParams p = bind(tape, policy.parameters());
  const auto& v = policy.critic(tape, p, batch).value();
  return {v.data(), v.data() + v.size()};
}

double log_prob(const ActionDistribution& dist, std::span<const double> action) {
  if (action.size() != dist.mean.size()) throw std::invalid_argument("log_prob: action arity mismatch");
  double lp = 0.0;
  for (std::size_t j = 0; j < action.size(); ++j) {
    const double z = (action[j] - dist.mean[j]) / dist.std[j];
    lp += -0.5 * z * z - std::log(dist.std[j]) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

std::pair<std::vector<double>, double> sample_and_logprob(const ActionDistribution& dist, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> a(dist.mean.size());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = dist.mean[j] + dist.std[j] * n(rng);
  return {a, log_prob(dist, a)};
}

Var batch_log_prob(const ActorOutput& out, Var actions, const PolicyBatch& batch) {
  return tg::segment_sum(tg::gaussian_logdensity(out.mean, out.std, actions), batch.joint_sample, batch.samples);
}

Var batch_entropy(const ActorOutput& out, const PolicyBatch& batch) {
  const double c = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  return tg::segment_sum(tg::add_scalar(tg::log(out.std), c), batch.joint_sample, batch.samples);
}

}  // namespace urma
