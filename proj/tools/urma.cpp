// Command-line entry point: train, eval, finetune, diagnose, bounds, gen-robot.

#include <malloc.h>

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "urma/checkpoint.hpp"
#include "urma/diagnostics.hpp"
#include "urma/theory.hpp"
#include "urma/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace urma;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;
constexpr int kDiagnostic = 3;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RobotArgs {
  std::vector<std::string> paths, references, generated;
  std::string robots_dir = URMA_ROBOTS_DIR;
};

struct PolicyArgs {
  std::string preset = "compact";
  std::string arch = "urma";
  bool no_layernorm = false;
  std::string shared_description = "none";
  bool no_mass_dims = false;
  bool grow_heads = false;
  double initial_std = -1.0;
};

struct TrainArgs {
  std::string preset = "desk";
  bool paper_scale = false;
  std::uint64_t steps = 2'000'000;
  std::size_t epochs = 0, steps_per_env = 0, envs_per_robot = 0, minibatch = 0;
  double lr = 0.0;
  double curriculum_reference = -1.0;
  bool single_reward_set = false;
};

void add_robot_options(CLI::App& app, RobotArgs& r) {
  app.add_option("--robot", r.paths, "Robot spec file (YAML), repeatable");
  app.add_option("--reference", r.references, "Reference robot by file stem, e.g. unitree_a1, repeatable");
  app.add_option("--gen", r.generated, "Generated robot CLASS:SEED[:MIN-MAX], repeatable");
  app.add_option("--robots-dir", r.robots_dir, "Directory of the reference robot specs");
}

void add_policy_options(CLI::App& app, PolicyArgs& p) {
  app.add_option("--preset", p.preset, "Network preset: desk, compact or paper")->check(CLI::IsMember({"desk", "compact", "paper"}));
  app.add_option("--arch", p.arch, "Architecture: urma, multihead or padding")
      ->check(CLI::IsMember({"urma", "multihead", "padding"}));
  app.add_flag("--no-layernorm", p.no_layernorm, "Remove every LayerNorm");
  app.add_option("--shared-description-encoder", p.shared_description,
                 "Reuse f_phi as the decoder description encoder: none, full or partial")
      ->check(CLI::IsMember({"none", "full", "partial"}));
  app.add_flag("--no-mass-dims", p.no_mass_dims, "Zero mass and dimensions in observations and descriptions");
  app.add_flag("--grow-heads", p.grow_heads, "Let the multi-head baseline grow heads for larger robots");
  app.add_option("--initial-std", p.initial_std, "Initial action standard deviation");
}

void add_train_options(CLI::App& app, TrainArgs& t) {
  app.add_option("--train-preset", t.preset, "PPO preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_flag("--paper-scale", t.paper_scale, "Use the full-scale PPO settings (same as --train-preset paper)");
  app.add_option("--steps", t.steps, "Total environment steps over all robots");
  app.add_option("--epochs", t.epochs, "PPO epochs per iteration");
  app.add_option("--steps-per-env", t.steps_per_env, "Rollout length per environment");
  app.add_option("--envs-per-robot", t.envs_per_robot, "Environments per robot");
  app.add_option("--minibatch", t.minibatch, "Samples of every robot per mini-batch");
  app.add_option("--lr", t.lr, "Initial learning rate");
  app.add_option("--curriculum-reference", t.curriculum_reference,
                 "Per-robot budget the curriculum lengths refer to; 0 keeps the tabulated lengths");
  app.add_flag("--single-reward-set", t.single_reward_set, "One reward coefficient set for every robot");
}

RobotPtr generated_robot(const std::string& arg) {
  std::vector<std::string> parts;
  std::stringstream ss(arg);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() < 2 || parts.size() > 3) throw ValidationError("--gen expects CLASS:SEED[:MIN-MAX], got '" + arg + "'");
  GeneratorOptions o;
  if (parts.size() == 3) {
    const auto dash = parts[2].find('-');
    if (dash == std::string::npos) throw ValidationError("--gen joint range must be MIN-MAX, got '" + parts[2] + "'");
    o.min_joints = std::stoi(parts[2].substr(0, dash));
    o.max_joints = std::stoi(parts[2].substr(dash + 1));
  }
  return std::make_shared<RobotSpec>(generate_surrogate_robot(std::stoull(parts[1]), parse_morphology_class(parts[0]), o));
}

struct LoadedRobot {
  std::string key;  // file stem or --gen argument
  RobotPtr robot;
};

std::vector<LoadedRobot> load_keyed_robots(const RobotArgs& r) {
  std::vector<LoadedRobot> out;
  for (const auto& p : r.paths)
    out.push_back({fs::path(p).stem().string(), std::make_shared<RobotSpec>(load_robot_spec(p))});
  for (const auto& s : r.references)
    out.push_back({s, std::make_shared<RobotSpec>(load_robot_spec(fs::path(r.robots_dir) / (s + ".yaml")))});
  for (const auto& g : r.generated) out.push_back({g, generated_robot(g)});
  return out;
}

std::vector<RobotPtr> load_robots(const RobotArgs& r) {
  std::vector<RobotPtr> out;
  for (auto& l : load_keyed_robots(r)) out.push_back(l.robot);
  return out;
}

PolicyConfig make_policy_config(const PolicyArgs& a) {
  PolicyConfig c = PolicyConfig::preset(a.preset);
  c.architecture = parse_architecture(a.arch);
  c.layer_norm = !a.no_layernorm;
  c.shared_description = a.shared_description == "partial" ? SharedDescription::pre_softmax
                                                           : parse_shared_description(a.shared_description);
  c.drop_mass_dims = a.no_mass_dims;
  c.grow_heads = a.grow_heads;
  if (a.initial_std > 0.0) c.initial_std = a.initial_std;
  c.validate();
  return c;
}

TrainConfig make_train_config(const TrainArgs& a, std::uint64_t seed) {
  TrainConfig c = TrainConfig::preset(a.paper_scale ? "paper" : a.preset);
  c.total_steps = a.steps;
  if (a.epochs) c.epochs = a.epochs;
  if (a.steps_per_env) c.steps_per_env = a.steps_per_env;
  if (a.envs_per_robot) c.envs_per_robot = a.envs_per_robot;
  if (a.minibatch) c.minibatch_per_robot = a.minibatch;
  if (a.lr > 0.0) c.learning_rate = a.lr;
  if (a.curriculum_reference >= 0.0) c.curriculum_reference_steps = a.curriculum_reference;
  c.seed = seed;
  c.validate();
  return c;
}

EnvConfig make_env_config(const TrainArgs& a, const PolicyConfig& p) {
  EnvConfig e;
  e.description.drop_mass_dims = p.drop_mass_dims;
  if (a.single_reward_set) e.reward_override = single_set_coefficients();
  e.validate();
  return e;
}

json robot_names(std::span<const RobotPtr> robots) {
  json j = json::array();
  for (const auto& r : robots) j.push_back(r->name);
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json evaluation_json(const Evaluation& e) {
  json j;
  j["mean_return"] = e.mean_return;
  j["tracking_share"] = e.tracking_share;
  for (const auto& r : e.robots)
    j["robots"].push_back({{"robot", r.robot},
                           {"mean_return", r.mean_return},
                           {"mean_episode_length", r.mean_episode_length},
                           {"tracking_share", r.tracking_share},
                           {"fall_rate", r.fall_rate}});
  return j;
}

void print_evaluation(const std::string& title, const Evaluation& e) {
  std::cout << title << "\n";
  for (const auto& r : e.robots)
    std::cout << "  " << std::left << std::setw(28) << r.robot << std::right << " return " << std::setw(10)
              << std::fixed << std::setprecision(2) << r.mean_return << "  tracking " << std::setprecision(3)
              << r.tracking_share << "  falls " << r.fall_rate << "\n";
  std::cout << "  mean return " << std::setprecision(2) << e.mean_return << "  mean tracking " << std::setprecision(3)
            << e.tracking_share << "\n"
            << std::defaultfloat;
}

void check_supported(const Policy& policy, std::span<const RobotPtr> robots) {
  for (const auto& r : robots) policy.check_robot(*r);
}

// Runs a trainer to its budget, writing curves, periodic checkpoints and zero-shot evaluations.
void run_training(Trainer& trainer, const fs::path& out, const json& meta, std::uint64_t step_offset,
                  std::span<const RobotPtr> holdout, std::size_t eval_every, std::size_t checkpoint_every,
                  const EvalOptions& eval_options, bool quiet) {
  CurveWriter curve((out / "curve.csv").string());
  std::ofstream zero_shot;
  if (!holdout.empty()) {
    const bool fresh = !fs::exists(out / "zero_shot.csv");
    zero_shot.open(out / "zero_shot.csv", std::ios::app);
    if (fresh) zero_shot << "global_step,robot,mean_return,tracking_share\n";
  }
  fs::create_directories(out / "checkpoints");
  std::size_t iteration = 0;
  trainer.train([&](const IterationStats& s) {
    IterationStats shifted = s;
    shifted.global_step += step_offset;
    curve.write(shifted);
    ++iteration;
    if (!quiet) {
      double share = 0.0;
      for (const auto& r : s.robots) share += r.tracking_share / s.robots.size();
      std::cout << "step " << shifted.global_step << "  tracking " << std::fixed << std::setprecision(3) << share
                << "  kl " << std::setprecision(5) << s.update.approx_kl << "  " << std::setprecision(2) << s.seconds
                << " s" << std::defaultfloat << std::endl;
    }
    if (!holdout.empty() && eval_every > 0 && iteration % eval_every == 0) {
      const Evaluation e = evaluate(trainer.policy(), holdout, trainer.env_config(), eval_options);
      for (const auto& r : e.robots)
        zero_shot << shifted.global_step << ",\"" << r.robot << "\"," << std::setprecision(10) << r.mean_return << ','
                  << r.tracking_share << '\n';
      zero_shot.flush();
    }
    if (checkpoint_every > 0 && iteration % checkpoint_every == 0)
      save_checkpoint(capture(trainer, meta),
                      (out / "checkpoints" / ("step_" + std::to_string(shifted.global_step) + ".bin")).string());
  });
}

// ---------------------------------------------------------------------------------------------------------------

struct Common {
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool quiet = false;
};

int cmd_train(CLI::App& app, const Common& common, const RobotArgs& ra, const PolicyArgs& pa, const TrainArgs& ta,
              const std::vector<std::string>& holdout_names, std::size_t eval_every, std::size_t checkpoint_every,
              std::size_t eval_episodes) {
  const auto all = load_keyed_robots(ra);
  std::vector<RobotPtr> train, holdout;
  auto matches = [](const LoadedRobot& l, const std::string& h) { return l.key == h || l.robot->name == h; };
  for (const auto& l : all) {
    const bool held = std::any_of(holdout_names.begin(), holdout_names.end(), [&](auto& h) { return matches(l, h); });
    (held ? holdout : train).push_back(l.robot);
  }
  for (const auto& h : holdout_names)
    if (std::none_of(all.begin(), all.end(), [&](const LoadedRobot& l) { return matches(l, h); }))
      throw ValidationError("--holdout " + h + " names no loaded robot");
  if (train.empty()) throw ValidationError("train needs at least one training robot");
  const PolicyConfig pc = make_policy_config(pa);
  const TrainConfig tc = make_train_config(ta, common.seed);
  const EnvConfig ec = make_env_config(ta, pc);

  const fs::path out(common.out_dir);
  fs::create_directories(out);
  write_text(out / "run.ini", app.get_parent()->config_to_str(false, false));
  json meta = {{"command", "train"},
               {"policy", to_json(pc)},
               {"train", to_json(tc)},
               {"train_robots", robot_names(train)},
               {"holdout_robots", robot_names(holdout)},
               {"single_reward_set", ta.single_reward_set},
               {"seed", common.seed}};
  write_text(out / "config.json", meta.dump(2) + "\n");

  std::shared_ptr<Policy> policy = make_policy(pc, train, common.seed);
  Trainer trainer(policy, train, ec, tc);
  EvalOptions eo;
  eo.episodes = eval_episodes;
  eo.seed = common.seed + 1;
  run_training(trainer, out, meta, 0, holdout, eval_every, checkpoint_every, eo, common.quiet);
  const std::string ckpt = (out / "checkpoint.bin").string();
  save_checkpoint(capture(trainer, meta), ckpt);

  json report = {{"config", meta}, {"checkpoint_sha256", file_sha256(ckpt)}};
  const Evaluation tr = evaluate(*policy, train, ec, eo);
  report["train"] = evaluation_json(tr);
  print_evaluation("training robots", tr);
  if (!holdout.empty()) {
    const Evaluation ho = evaluate(*policy, holdout, ec, eo);
    report["holdout"] = evaluation_json(ho);
    print_evaluation("held-out robots (zero-shot)", ho);
  }
  write_text(out / "eval.json", report.dump(2) + "\n");
  std::cout << "checkpoint " << ckpt << " sha256 " << report["checkpoint_sha256"].get<std::string>() << "\n";
  return kOk;
}

int cmd_eval(CLI::App& app, const Common& common, const RobotArgs& ra, const std::string& checkpoint,
             const std::vector<std::string>& drop_groups, std::size_t episodes, bool stochastic,
             bool single_reward_set) {
  const auto robots = load_robots(ra);
  if (robots.empty()) throw ValidationError("eval needs at least one robot");
  const Checkpoint c = load_checkpoint(checkpoint);
  const auto policy = restore_policy(c);
  check_supported(*policy, robots);
  EvalOptions eo;
  eo.episodes = episodes;
  eo.seed = common.seed;
  eo.deterministic = !stochastic;
  for (const auto& g : drop_groups) {
    if (g != "feet") throw ValidationError("--drop-group supports 'feet', got '" + g + "'");
    eo.zero_feet = true;
  }
  TrainArgs ta;
  ta.single_reward_set = single_reward_set;
  const EnvConfig ec = make_env_config(ta, policy->config());
  const Evaluation e = evaluate(*policy, robots, ec, eo);
  print_evaluation("evaluation" + std::string(eo.zero_feet ? " (feet observations zeroed)" : ""), e);

  const fs::path out(common.out_dir);
  fs::create_directories(out);
  write_text(out / "eval_run.ini", app.get_parent()->config_to_str(false, false));
  json report = {{"config",
                  {{"command", "eval"},
                   {"checkpoint", checkpoint},
                   {"checkpoint_sha256", file_sha256(checkpoint)},
                   {"robots", robot_names(robots)},
                   {"drop_groups", drop_groups},
                   {"episodes", episodes},
                   {"deterministic", eo.deterministic},
                   {"seed", common.seed}}},
                 {"evaluation", evaluation_json(e)}};
  write_text(out / "eval.json", report.dump(2) + "\n");
  return kOk;
}

int cmd_finetune(CLI::App& app, const Common& common, const RobotArgs& ra, const TrainArgs& ta,
                 const std::string& checkpoint, bool grow_heads) {
  const auto robots = load_robots(ra);
  if (robots.empty()) throw ValidationError("finetune needs a target robot");
  Checkpoint c = load_checkpoint(checkpoint);
  if (grow_heads) c.config.grow_heads = true;
  std::shared_ptr<Policy> policy = restore_policy(c);
  for (const auto& r : robots) policy->adapt_to(*r);
  check_supported(*policy, robots);

  TrainConfig base = c.meta.contains("train") ? train_config_from_json(c.meta["train"]) : TrainConfig::desk();
  if (ta.epochs) base.epochs = ta.epochs;
  if (ta.steps_per_env) base.steps_per_env = ta.steps_per_env;
  if (ta.envs_per_robot) base.envs_per_robot = ta.envs_per_robot;
  if (ta.minibatch) base.minibatch_per_robot = ta.minibatch;
  if (ta.lr > 0.0) base.learning_rate = ta.lr;
  base.seed = common.seed;
  const TrainConfig tc = base.fine_tune(ta.steps);
  tc.validate();
  const EnvConfig ec = make_env_config(ta, policy->config());

  const fs::path out(common.out_dir);
  fs::create_directories(out);
  write_text(out / "finetune_run.ini", app.get_parent()->config_to_str(false, false));
  const std::uint64_t offset = c.trainer ? c.trainer->global_step : 0;
  json meta = c.meta;
  meta["finetune"] = {{"from", checkpoint},
                      {"from_sha256", file_sha256(checkpoint)},
                      {"targets", robot_names(robots)},
                      {"train", to_json(tc)},
                      {"step_offset", offset},
                      {"seed", common.seed}};
  write_text(out / "finetune_config.json", meta.dump(2) + "\n");
  const std::string ckpt = (out / "finetuned.bin").string();
  if (tc.total_steps == 0) {
    fs::copy_file(checkpoint, ckpt, fs::copy_options::overwrite_existing);
    std::cout << "budget 0: checkpoint copied unchanged\n";
    return kOk;
  }
  Trainer trainer(policy, robots, ec, tc);
  EvalOptions eo;
  eo.seed = common.seed + 1;
  const Evaluation before = evaluate(*policy, robots, ec, eo);
  run_training(trainer, out, meta, offset, {}, 0, 0, eo, common.quiet);
  meta["finetune"]["global_step_end"] = offset + trainer.global_step();
  save_checkpoint(capture(*policy, meta), ckpt);
  const Evaluation after = evaluate(*policy, robots, ec, eo);
  print_evaluation("before fine-tuning (zero-shot)", before);
  print_evaluation("after fine-tuning", after);
  write_text(out / "finetune_eval.json",
             json{{"config", meta}, {"zero_shot", evaluation_json(before)}, {"finetuned", evaluation_json(after)}}
                     .dump(2) +
                 "\n");
  return kOk;
}

theory::BoundConfig parse_bound_spec(const std::string& spec, theory::BoundConfig c) {
  std::stringstream ss(spec);
  for (std::string kv; ss >> kv;) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--bounds expects key=value pairs, got '" + kv + "'");
    const std::string k = kv.substr(0, eq);
    const double v = std::stod(kv.substr(eq + 1));
    if (k == "n") c.n = static_cast<std::size_t>(v);
    else if (k == "M") c.tasks = static_cast<std::size_t>(v);
    else if (k == "delta") c.delta = v;
    else if (k == "gamma") c.gamma = v;
    else if (k == "clip" || k == "eps") c.clip = v;
    else if (k == "E") c.ratio_cap = v;
    else if (k == "R_max") c.r_max = v;
    else throw ValidationError("--bounds: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

int cmd_diagnose(const Common& common, int trials, const std::string& checkpoint, const std::string& bounds,
                 const std::string& robots_dir) {
  if (!bounds.empty()) parse_bound_spec(bounds, {});
  std::vector<diag::CheckResult> results;
  auto add = [&](std::vector<diag::CheckResult> r) { results.insert(results.end(), r.begin(), r.end()); };
  add(diag::tensorgrad_suite(trials, common.seed + 100));
  for (auto a : {Architecture::urma, Architecture::multihead, Architecture::padding})
    add(diag::policy_gradient_suite(a, std::max(1, trials / 10), common.seed + 200));
  std::unique_ptr<Policy> policy;
  if (!checkpoint.empty()) {
    try {
      policy = restore_policy(load_checkpoint(checkpoint));
      results.push_back(diag::finite_parameters(*policy));
    } catch (const CheckpointError& e) {
      results.push_back({"checkpoint " + checkpoint, false, 1.0, 0.0, e.what()});
    }
  }
  if (!policy || policy->config().architecture != Architecture::urma) policy = make_policy(PolicyConfig::desk(), {}, common.seed);
  results.push_back(diag::permutation_suite(*policy, 50, 20, common.seed + 300));
  add(diag::morphology_suite(robots_dir, 50, common.seed + 400));

  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::cout << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(44) << r.name << std::right
              << " value " << std::setw(12) << std::setprecision(4) << r.value << "  tol " << r.tolerance
              << (r.detail.empty() ? "" : "  " + r.detail) << "\n";
  }
  if (!bounds.empty()) {
    const auto report = theory::make_bound_report(parse_bound_spec(bounds, {}), common.seed);
    std::cout << "\n" << report.to_text();
  }
  std::cout << (ok ? "all checks passed" : "some checks FAILED") << "\n";
  return ok ? kOk : kDiagnostic;
}

int cmd_bounds(const Common& common, const theory::BoundConfig& config, std::size_t trials) {
  config.validate();
  const auto report = theory::make_bound_report(config, common.seed, trials);
  std::cout << report.to_text();
  const fs::path out(common.out_dir);
  fs::create_directories(out);
  write_text(out / "bounds.json", report.to_json() + "\n");
  return kOk;
}

int cmd_gen_robot(const std::string& cls, std::uint64_t seed, int min_joints, int max_joints,
                  const std::string& output) {
  GeneratorOptions o{min_joints, max_joints};
  const RobotSpec r = generate_surrogate_robot(seed, parse_morphology_class(cls), o);
  if (fs::path(output).has_parent_path()) fs::create_directories(fs::path(output).parent_path());
  save_robot_spec(r, output);
  std::cout << r.name << ": " << r.joint_count() << " joints, " << r.foot_count() << " feet -> " << output << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  // Keep freed tensor memory in the process; returning it to the kernel every iteration costs more than the math.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);

  CLI::App app{"Morphology-agnostic locomotion policy training and analysis"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file of option values; command-line flags win");
  Common common;
  app.add_option("--out-dir", common.out_dir, "Output directory; all outputs are written here");
  app.add_option("--seed", common.seed, "Seed for every random stream");
  app.add_flag("--quiet", common.quiet, "Only print the final summary");

  RobotArgs robots;
  PolicyArgs policy_args;
  TrainArgs train_args;

  auto* train = app.add_subcommand("train", "Multi-robot PPO training");
  add_robot_options(*train, robots);
  add_policy_options(*train, policy_args);
  add_train_options(*train, train_args);
  std::vector<std::string> holdout;
  std::size_t eval_every = 10, checkpoint_every = 0, eval_episodes = 3;
  train->add_option("--holdout", holdout, "Robot (name, file stem or --gen argument) excluded from training and evaluated zero-shot, repeatable");
  train->add_option("--eval-every", eval_every, "Iterations between zero-shot evaluations of held-out robots");
  train->add_option("--checkpoint-every", checkpoint_every, "Iterations between periodic checkpoints (0: final only)");
  train->add_option("--eval-episodes", eval_episodes, "Episodes per robot in evaluations");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on robots");
  add_robot_options(*eval, robots);
  std::string checkpoint;
  std::vector<std::string> drop_groups;
  std::size_t episodes = 3;
  bool stochastic = false, eval_single_set = false;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--drop-group", drop_groups, "Observation group zeroed during evaluation (feet)");
  eval->add_option("--episodes", episodes, "Episodes per robot");
  eval->add_flag("--stochastic", stochastic, "Sample actions instead of using the mean");
  eval->add_flag("--single-reward-set", eval_single_set, "One reward coefficient set for every robot");

  auto* finetune = app.add_subcommand("finetune", "Continue training on target robots at a third of the learning rate");
  add_robot_options(*finetune, robots);
  add_train_options(*finetune, train_args);
  bool grow = false;
  finetune->add_option("--checkpoint", checkpoint, "Checkpoint to start from")->required();
  finetune->add_flag("--grow-heads", grow, "Multi-head head surgery for targets with more joints or feet");

  auto* diagnose = app.add_subcommand("diagnose", "Gradient, permutation and morphology checks");
  int trials = 100;
  std::string bounds_spec;
  diagnose->add_option("--trials", trials, "Random trials per gradient check")->check(CLI::PositiveNumber);
  diagnose->add_option("--checkpoint", checkpoint, "Also check this checkpoint");
  diagnose->add_option("--bounds", bounds_spec, "Print a bound report, e.g. \"n=1000 M=16 delta=0.05\"");
  diagnose->add_option("--robots-dir", robots.robots_dir, "Directory of the reference robot specs");

  auto* bounds = app.add_subcommand("bounds", "Advantage, loss and generalization bound report");
  theory::BoundConfig bc;
  std::size_t bound_trials = 400;
  bounds->add_option("--r-max", bc.r_max, "Maximum per-step reward (c1 + c2)");
  bounds->add_option("--gamma", bc.gamma, "Discount");
  bounds->add_option("--clip", bc.clip, "PPO clip range");
  bounds->add_option("--ratio-cap", bc.ratio_cap, "Ratio cap E for negative advantages");
  bounds->add_option("--delta", bc.delta, "Confidence parameter");
  bounds->add_option("-n,--n", bc.n, "Samples per task");
  bounds->add_option("-M,--tasks", bc.tasks, "Number of tasks");
  bounds->add_option("--trials", bound_trials, "Monte-Carlo trials for the complexity estimates");

  auto* gen = app.add_subcommand("gen-robot", "Write a procedurally generated robot spec");
  std::string gen_class = "quadruped", gen_output;
  std::uint64_t gen_seed = 0;
  int min_joints = 4, max_joints = 24;
  gen->add_option("--class", gen_class, "quadruped, biped, humanoid, hexapod or other");
  gen->add_option("--robot-seed", gen_seed, "Generator seed (defaults to --seed)");
  gen->add_option("--min-joints", min_joints, "Minimum joint count");
  gen->add_option("--max-joints", max_joints, "Maximum joint count");
  gen->add_option("--output", gen_output, "Output YAML path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*train) return cmd_train(*train, common, robots, policy_args, train_args, holdout, eval_every,
                                 checkpoint_every, eval_episodes);
    if (*eval) return cmd_eval(*eval, common, robots, checkpoint, drop_groups, episodes, stochastic, eval_single_set);
    if (*finetune) {
      if (train_args.steps == 2'000'000 && finetune->count("--steps") == 0) train_args.steps = 200'000;
      return cmd_finetune(*finetune, common, robots, train_args, checkpoint, grow);
    }
    if (*diagnose) return cmd_diagnose(common, trials, checkpoint, bounds_spec, robots.robots_dir);
    if (*bounds) return cmd_bounds(common, bc, bound_trials);
    if (*gen) {
      if (gen->count("--robot-seed") == 0) gen_seed = common.seed;
      return cmd_gen_robot(gen_class, gen_seed, min_joints, max_joints, gen_output);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const UnsupportedRobot& e) {
    std::cerr << "error: unsupported robot: " << e.what() << "\n";
    return kValidation;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}
