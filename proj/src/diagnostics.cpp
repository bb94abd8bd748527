#include "urma/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace urma::diag {

using namespace urma::tg;

ObservationBundle random_bundle(const RobotSpec& r, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ObservationBundle o;
  o.joints.resize(r.joint_count() * kJointObservationSize);
  o.feet.resize(r.foot_count() * kFootObservationSize);
  for (auto& v : o.joints) v = u(rng);
  for (auto& v : o.feet) v = u(rng);
  for (auto& v : o.general) v = u(rng);
  for (auto& v : o.privileged) v = u(rng);
  return o;
}

std::pair<RobotPtr, ObservationBundle> permute_joints(const RobotSpec& r, const ObservationBundle& o,
                                                      const std::vector<std::size_t>& perm) {
  auto spec = std::make_shared<RobotSpec>(r);
  ObservationBundle p = o;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    spec->joints[k] = r.joints[perm[k]];
    for (std::size_t c = 0; c < kJointObservationSize; ++c)
      p.joints[k * kJointObservationSize + c] = o.joints[perm[k] * kJointObservationSize + c];
  }
  return {spec, p};
}

void jitter(Policy& p, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < p.parameters().size(); ++i)
    for (std::size_t k = 0; k < p.parameters().value(i).size(); ++k) p.parameters().value(i)[k] += n(rng);
  p.project();
}

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Var weighted_sum(Tape& tape, Var y, const Tensor& w) { return sum_all(mul(y, tape.constant(w))); }

CheckResult worst_case(const std::string& name, int trials, std::uint64_t seed, double tolerance,
                       const std::function<double(std::mt19937_64&)>& run) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) worst = std::max(worst, run(rng));
  CheckResult r{name, worst <= tolerance, worst, tolerance, {}};
  return r;
}

std::function<double(std::mt19937_64&)> unary(std::function<Var(Var)> op, double lo = -1.0, double hi = 1.0,
                                               int min_cols = 1) {
  return [op, lo, hi, min_cols](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dim(1, 5), cdim(min_cols, 5);
    const Shape shape{static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(cdim(rng))};
    const Tensor x = random_tensor(rng, shape, lo, hi);
    const Tensor w = random_tensor(rng, shape);
    return grad_check([&](Tape& t, Var v) { return weighted_sum(t, op(v), w); }, x);
  };
}

std::function<double(std::mt19937_64&)> binary(std::function<Var(Var, Var)> op, bool scalar_rhs) {
  return [op, scalar_rhs](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dim(1, 5);
    const Shape shape{static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng))};
    const Tensor a = random_tensor(rng, shape);
    const Tensor b = scalar_rhs ? random_tensor(rng, {}) : random_tensor(rng, shape);
    const Tensor w = random_tensor(rng, shape);
    return grad_check([&](Tape& t, std::span<const Var> v) { return weighted_sum(t, op(v[0], v[1]), w); }, {a, b})
        .max_relative_error;
  };
}

}  // namespace

std::vector<CheckResult> tensorgrad_suite(int trials, std::uint64_t seed, double tol) {
  using Run = std::function<double(std::mt19937_64&)>;
  const std::vector<std::pair<std::string, Run>> cases = {
      {"add", binary([](Var a, Var b) { return add(a, b); }, false)},
      {"add_scalar_broadcast", binary([](Var a, Var b) { return add(a, b); }, true)},
      {"sub", binary([](Var a, Var b) { return sub(a, b); }, false)},
      {"mul", binary([](Var a, Var b) { return mul(a, b); }, false)},
      {"mul_scalar_broadcast", binary([](Var a, Var b) { return mul(a, b); }, true)},
      {"minimum", binary([](Var a, Var b) { return minimum(a, b); }, false)},
      {"neg", unary([](Var a) { return neg(a); })},
      {"scale", unary([](Var a) { return scale(a, -2.5); })},
      {"add_scalar", unary([](Var a) { return add_scalar(a, 0.7); })},
      {"tanh", unary([](Var a) { return tanh(a); }, -3.0, 3.0)},
      {"exp", unary([](Var a) { return exp(a); })},
      {"log", unary([](Var a) { return log(a); }, 0.5, 2.0)},
      {"square", unary([](Var a) { return square(a); })},
      {"clamp", unary([](Var a) { return clamp(a, -0.5, 0.5); })},
      {"layer_norm", unary([](Var a) { return layer_norm(a); }, -1.0, 1.0, 2)},
      {"sum_all", unary([](Var a) { return sum_all(a); })},
      {"mean_all", unary([](Var a) { return mean_all(a); })},
      {"matmul",
       [](std::mt19937_64& rng) {
         std::uniform_int_distribution<int> dim(1, 6);
         const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
         const Tensor a = random_tensor(rng, {m, k}), b = random_tensor(rng, {k, n}), w = random_tensor(rng, {m, n});
         return grad_check([&](Tape& t, std::span<const Var> v) { return weighted_sum(t, matmul(v[0], v[1]), w); },
                           {a, b})
             .max_relative_error;
       }},
      {"add_rowwise",
       [](std::mt19937_64& rng) {
         const Tensor x = random_tensor(rng, {4, 3}), b = random_tensor(rng, {3}), w = random_tensor(rng, {4, 3});
         return grad_check(
                    [&](Tape& t, std::span<const Var> v) { return weighted_sum(t, add_rowwise(v[0], v[1]), w); },
                    {x, b})
             .max_relative_error;
       }},
      {"layer_norm_affine",
       [](std::mt19937_64& rng) {
         std::uniform_int_distribution<int> dim(2, 6);
         const std::size_t r = dim(rng), c = dim(rng);
         const Tensor x = random_tensor(rng, {r, c}), g = random_tensor(rng, {c}, 0.5, 1.5);
         const Tensor b = random_tensor(rng, {c}), w = random_tensor(rng, {r, c});
         return grad_check(
                    [&](Tape& t, std::span<const Var> v) {
                      return weighted_sum(t, layer_norm(v[0], v[1], v[2]), w);
                    },
                    {x, g, b})
             .max_relative_error;
       }},
      {"softmax_with_temperature",
       [](std::mt19937_64& rng) {
         std::uniform_int_distribution<int> dim(1, 6);
         const std::size_t r = dim(rng), c = dim(rng);
         const Tensor x = random_tensor(rng, {r, c}, -2.0, 2.0), tau = random_tensor(rng, {}, 0.2, 2.0);
         const Tensor w = random_tensor(rng, {r, c});
         return grad_check(
                    [&](Tape& t, std::span<const Var> v) {
                      return weighted_sum(t, softmax_with_temperature(v[0], v[1], 0.015), w);
                    },
                    {x, tau})
             .max_relative_error;
       }},
      {"reduce_sum_over_set",
       [](std::mt19937_64& rng) {
         const Tensor x = random_tensor(rng, {7, 3}), w = random_tensor(rng, {3});
         return grad_check([&](Tape& t, Var v) { return weighted_sum(t, reduce_sum_over_set(v), w); }, x);
       }},
      {"segment_sum",
       [](std::mt19937_64& rng) {
         const Tensor x = random_tensor(rng, {9, 2}), w = random_tensor(rng, {3, 2});
         const std::vector<std::uint32_t> seg{0, 2, 1, 0, 2, 2, 1, 0, 0};
         return grad_check([&](Tape& t, Var v) { return weighted_sum(t, segment_sum(v, seg, 3), w); }, x);
       }},
      {"gather_rows",
       [](std::mt19937_64& rng) {
         const Tensor x = random_tensor(rng, {4, 3}), w = random_tensor(rng, {5, 3});
         const std::vector<std::uint32_t> idx{3, 0, 0, 2, 3};
         return grad_check([&](Tape& t, Var v) { return weighted_sum(t, gather_rows(v, idx), w); }, x);
       }},
      {"concat_reshape",
       [](std::mt19937_64& rng) {
         const Tensor a = random_tensor(rng, {3, 2}), b = random_tensor(rng, {3, 4}), w = random_tensor(rng, {6, 3});
         return grad_check(
                    [&](Tape& t, std::span<const Var> v) {
                      const Var cols[] = {v[0], v[1]};
                      const Var rows[] = {reshape(concat_cols(cols), Shape{6, 3})};
                      return weighted_sum(t, concat_rows(rows), w);
                    },
                    {a, b})
             .max_relative_error;
       }},
      {"gaussian_logprob",
       [](std::mt19937_64& rng) {
         const Tensor m = random_tensor(rng, {5}), s = random_tensor(rng, {5}, 0.3, 2.0), x = random_tensor(rng, {5});
         return grad_check([](Tape&, std::span<const Var> v) { return gaussian_logprob(v[0], v[1], v[2]); },
                           {m, s, x})
             .max_relative_error;
       }},
  };
  std::vector<CheckResult> out;
  for (const auto& [name, run] : cases) out.push_back(worst_case("grad " + name, trials, seed++, tol, run));
  return out;
}

namespace {

PolicyConfig small_config(Architecture a) {
  PolicyConfig c;
  c.architecture = a;
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

std::vector<Tensor> values_of(const Policy& p) {
  std::vector<Tensor> out;
  for (const auto& b : p.parameters().blocks()) out.push_back(b.value);
  return out;
}

// Gradients below this magnitude on an O(10) log-density are dominated by difference rounding at h = 1e-5.
constexpr double kGradFloor = 1e-5;

}  // namespace

std::vector<CheckResult> policy_gradient_suite(Architecture arch, int trials, std::uint64_t seed, double tol) {
  const PolicyConfig config = small_config(arch);
  auto make_robot = [&](std::mt19937_64& rng) {
    // Baselines need a registered class; URMA sees varied morphologies.
    const MorphologyClass cls = arch == Architecture::urma ? static_cast<MorphologyClass>(rng() % 4)
                                                           : MorphologyClass::quadruped;
    return std::make_shared<const RobotSpec>(generate_surrogate_robot(rng(), cls, {4, 8}));
  };
  std::string worst_actor, worst_critic;
  auto check = [&](bool actor, std::string& worst_name) {
    return [&, actor](std::mt19937_64& rng) {
      const RobotPtr robot = make_robot(rng);
      auto policy = make_policy(config, std::span<const RobotPtr>(&robot, 1), rng());
      jitter(*policy, rng, 0.1);
      const auto batch = make_batch(random_bundle(*robot, rng), robot, config.description_options());
      Tensor action(Shape{robot->joint_count(), 1});
      std::normal_distribution<double> n(0.0, 1.0);
      for (std::size_t j = 0; j < action.size(); ++j) action[j] = n(rng);
      const auto r = grad_check(
          [&](Tape& tape, std::span<const Var> vars) {
            BoundParams p{{vars.begin(), vars.end()}};
            if (actor) return sum_all(batch_log_prob(policy->actor(tape, p, batch), tape.constant(action), batch));
            return sum_all(policy->critic(tape, p, batch));
          },
          values_of(*policy), 1e-5, kGradFloor);
      if (r.max_relative_error > tol) worst_name = policy->parameters().block(r.worst_input).name;
      return r.max_relative_error;
    };
  };
  const std::string tag = to_string(arch);
  auto a = worst_case("grad " + tag + " actor", trials, seed, tol, check(true, worst_actor));
  auto c = worst_case("grad " + tag + " critic", trials, seed + 1, tol, check(false, worst_critic));
  a.detail = worst_actor;
  c.detail = worst_critic;
  return {a, c};
}

CheckResult permutation_suite(const Policy& policy, std::size_t robots, std::size_t permutations,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t failures = 0;
  std::ostringstream detail;
  const auto opts = policy.config().description_options();
  for (std::size_t n = 0; n < robots; ++n) {
    const RobotSpec base = generate_surrogate_robot(seed + 1000 + n, static_cast<MorphologyClass>(n % 5));
    const RobotPtr robot = std::make_shared<RobotSpec>(base);
    const auto obs = random_bundle(base, rng);
    const auto batch = make_batch(obs, robot, opts);
    const auto [zbar, zj] = joint_set_encoding(policy, batch);
    const auto dist = action_distributions(policy, batch)[0];
    const double value = critic_values(policy, batch)[0];
    for (std::size_t t = 0; t < permutations; ++t) {
      std::vector<std::size_t> perm(base.joint_count());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const auto [pr, po] = permute_joints(base, obs, perm);
      const auto pb = make_batch(po, pr, opts);
      const auto [pz, pzj] = joint_set_encoding(policy, pb);
      bool ok = std::equal(zbar.data(), zbar.data() + zbar.size(), pz.data());
      const auto pd = action_distributions(policy, pb)[0];
      for (std::size_t k = 0; k < perm.size(); ++k)
        ok = ok && pd.mean[k] == dist.mean[perm[k]] && pd.std[k] == dist.std[perm[k]];
      ok = ok && critic_values(policy, pb)[0] == value;
      if (!ok) {
        if (failures == 0) detail << "first failure on " << base.name;
        ++failures;
      }
    }
  }
  CheckResult r{"permutation laws", failures == 0, static_cast<double>(failures), 0.0, detail.str()};
  return r;
}

std::vector<CheckResult> morphology_suite(const std::string& robots_dir, std::size_t generated, std::uint64_t seed) {
  std::vector<RobotPtr> reference, gen;
  for (const auto& row : reference_robots())
    reference.push_back(std::make_shared<RobotSpec>(load_robot_spec(robots_dir + "/" + row.file_stem + ".yaml")));
  const MorphologyClass classes[] = {MorphologyClass::quadruped, MorphologyClass::biped, MorphologyClass::humanoid,
                                     MorphologyClass::hexapod, MorphologyClass::other};
  for (std::size_t i = 0; i < generated; ++i)
    gen.push_back(std::make_shared<RobotSpec>(generate_surrogate_robot(seed + i, classes[i % 5])));

  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  {
    auto policy = make_policy(PolicyConfig::desk(), {}, seed);
    std::size_t ok = 0;
    std::string first_error;
    for (const auto* set : {&reference, &gen})
      for (const auto& r : *set) {
        try {
          const auto d = action_distributions(*policy, make_batch(random_bundle(*r, rng), r, {}))[0];
          bool finite = d.mean.size() == r->joint_count();
          for (double v : d.mean) finite = finite && std::isfinite(v);
          ok += finite;
        } catch (const std::exception& e) {
          if (first_error.empty()) first_error = r->name + ": " + e.what();
        }
      }
    const double total = static_cast<double>(reference.size() + gen.size());
    out.push_back({"urma evaluates every robot", ok == reference.size() + gen.size() && reference.size() == 16,
                   static_cast<double>(ok), total, first_error});
  }
  // Baselines registered on every legged quadruped, biped and humanoid, reference and generated. Bipeds and humanoids
  // share one multihead head.
  std::vector<RobotPtr> registered;
  for (const auto* set : {&reference, &gen})
    for (const auto& r : *set)
      if (r->morphology == MorphologyClass::quadruped || r->morphology == MorphologyClass::biped ||
          r->morphology == MorphologyClass::humanoid)
        registered.push_back(r);
  auto head_group = [](MorphologyClass c) { return c == MorphologyClass::humanoid ? MorphologyClass::biped : c; };
  for (auto arch : {Architecture::multihead, Architecture::padding}) {
    PolicyConfig c = PolicyConfig::desk();
    c.architecture = arch;
    auto policy = make_policy(c, registered, seed);
    std::size_t mismatches = 0;
    std::string first;
    for (const auto* set : {&reference, &gen})
      for (const auto& r : *set) {
        bool expected_ok = false;
        for (const auto& reg : registered)
          expected_ok = expected_ok || (arch == Architecture::multihead ? head_group(reg->morphology) == head_group(r->morphology)
                                                                        : reg->name == r->name);
        bool threw = false;
        try {
          action_distributions(*policy, make_batch(random_bundle(*r, rng), r, {}));
        } catch (const UnsupportedRobot&) {
          threw = true;
        }
        if (expected_ok == threw) {
          ++mismatches;
          if (first.empty()) first = r->name + (threw ? " rejected" : " accepted");
        }
      }
    out.push_back({to_string(arch) + " rejects exactly unregistered robots", mismatches == 0,
                   static_cast<double>(mismatches), 0.0, first});
  }
  return out;
}

CheckResult finite_parameters(const Policy& policy) {
  for (const auto& b : policy.parameters().blocks())
    if (!b.value.all_finite()) return {"finite parameters", false, 1.0, 0.0, "block " + b.name};
  return {"finite parameters", true, 0.0, 0.0, {}};
}

}  // namespace urma::diag
