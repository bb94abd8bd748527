#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "urma/morphology.hpp"
#include "urma/observation.hpp"
#include "urma/tensorgrad.hpp"

namespace urma {

enum class Architecture { urma, multihead, padding };
/// Where the extra LayerNorm of the action-mean network sits.
enum class MeanNorm { concat_input, first_hidden };
/// Decoder description input: its own encoder g_omega, or a reuse of f_phi (after or before the softmax).
enum class SharedDescription { none, full, pre_softmax };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);
std::string to_string(MeanNorm m);
MeanNorm parse_mean_norm(const std::string& s);
std::string to_string(SharedDescription s);
SharedDescription parse_shared_description(const std::string& s);

struct PolicyConfig {
  Architecture architecture = Architecture::urma;

  std::size_t latent = 32;  // width of z_j, shared by description and observation encoders
  std::vector<std::size_t> description_hidden{64, 64};
  std::vector<std::size_t> observation_hidden{64, 64};
  std::vector<std::size_t> core_hidden{256, 256};
  std::vector<std::size_t> decoder_description_hidden{64, 64};
  std::size_t decoder_description_latent = 32;
  std::vector<std::size_t> mean_hidden{128, 128};
  std::vector<std::size_t> std_hidden{64};
  /// Hidden layers of the multi-head and padding baselines; the first is the per-class head in multi-head.
  std::vector<std::size_t> baseline_hidden{256, 256, 256};

  bool layer_norm = true;
  MeanNorm mean_norm = MeanNorm::concat_input;
  SharedDescription shared_description = SharedDescription::none;
  bool drop_mass_dims = false;

  double initial_temperature = 1.0;
  double temperature_epsilon = 0.015;
  double initial_std = 1.0;
  double min_std = 1e-8;
  double max_std = 2.0;
  double mean_clip = 10.0;

  /// Lets the multi-head baseline grow a head for robots with more slots than it was built for.
  bool grow_heads = false;

  static PolicyConfig desk();
  static PolicyConfig compact();
  static PolicyConfig paper();
  static PolicyConfig preset(const std::string& name);

  DescriptionOptions description_options() const { return {drop_mass_dims}; }
  void validate() const;
};

/// Robot the policy was not built for (unregistered class or task, or too many joints).
class UnsupportedRobot : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named learnable blocks in a fixed order.
class ParameterStore {
 public:
  struct Block {
    std::string name;
    tg::Tensor value;
  };

  std::size_t add(std::string name, tg::Tensor init);
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
  std::size_t size() const { return blocks_.size(); }
  const Block& block(std::size_t i) const { return blocks_[i]; }
  tg::Tensor& value(std::size_t i) { return blocks_[i].value; }
  const tg::Tensor& value(std::size_t i) const { return blocks_[i].value; }
  const std::vector<Block>& blocks() const { return blocks_; }
  /// Replaces a block's tensor, shape included.
  void reshape(std::size_t i, tg::Tensor value) { blocks_[i].value = std::move(value); }

  std::size_t count() const;
  /// Scalar count per sub-network; the sub-network is the block name up to the first '.'.
  std::map<std::string, std::size_t> count_by_group() const;
  bool all_finite() const;

 private:
  std::vector<Block> blocks_;
  std::map<std::string, std::size_t> by_name_;
};

struct BoundParams {
  std::vector<tg::Var> vars;
  tg::Var operator[](std::size_t i) const { return vars[i]; }
};

BoundParams bind(tg::Tape& tape, const ParameterStore& store);
std::vector<tg::Tensor> gradients(const BoundParams& bound, const ParameterStore& store);

/// Observations of many samples (any mix of robots) flattened joint-major for batched evaluation.
struct PolicyBatch {
  std::size_t samples = 0;
  tg::Tensor joint_obs;   // (N_j x 3)
  tg::Tensor foot_obs;    // (N_f x 2)
  tg::Tensor general;     // (B x 16)
  tg::Tensor privileged;  // (B x 4)
  std::vector<std::uint32_t> joint_offset, foot_offset;  // B + 1 entries
  std::vector<std::uint32_t> joint_sample, foot_sample;  // owner sample of each row

  std::vector<RobotPtr> robots;               // distinct specs in first-seen order
  std::vector<std::uint32_t> sample_robot;    // B entries
  tg::Tensor joint_desc;                      // (U_j x 23), rows of every distinct spec
  tg::Tensor foot_desc;                       // (U_f x 10)
  std::vector<std::uint32_t> joint_desc_row;  // N_j entries
  std::vector<std::uint32_t> foot_desc_row;   // N_f entries
  std::vector<std::uint32_t> robot_joint_offset;  // per distinct spec, first row in joint_desc

  std::size_t joint_rows() const { return joint_sample.size(); }
  std::size_t joints(std::size_t b) const { return joint_offset[b + 1] - joint_offset[b]; }
};

PolicyBatch make_batch(std::span<const ObservationBundle* const> observations, std::span<const RobotPtr> robots,
                       const DescriptionOptions& options);
PolicyBatch make_batch(const ObservationBundle& observation, const RobotPtr& robot, const DescriptionOptions& options);

/// Per-joint Gaussian parameters for all rows of a batch, each (N_j x 1).
struct ActorOutput {
  tg::Var mean;
  tg::Var std;
};

class Policy {
 public:
  virtual ~Policy() = default;

  const PolicyConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  const std::vector<bool>& critic_mask() const { return critic_mask_; }

  /// Throws UnsupportedRobot when the architecture cannot act for this robot.
  virtual void check_robot(const RobotSpec& robot) const = 0;
  virtual ActorOutput actor(tg::Tape& tape, const BoundParams& p, const PolicyBatch& batch) const = 0;
  /// Normalized state values, (B x 1).
  virtual tg::Var critic(tg::Tape& tape, const BoundParams& p, const PolicyBatch& batch) const = 0;
  /// Keeps constrained parameters feasible after an optimizer step.
  virtual void project() {}
  /// Grows baseline layouts for a new robot where the configuration allows it; shapes of blocks may change.
  virtual void adapt_to(const RobotSpec&) {}
  /// Registry text for checkpoints; empty for URMA.
  virtual std::string registry() const { return {}; }

  void check_batch(const PolicyBatch& batch) const;

 protected:
  explicit Policy(PolicyConfig config) : config_(std::move(config)) {}
  std::size_t add_block(std::string name, tg::Tensor init, bool critic);

  PolicyConfig config_;
  ParameterStore params_;
  std::vector<bool> critic_mask_;
};

/// Builds a policy with orthogonal initialization. Baselines register the training robots for their layouts.
std::unique_ptr<Policy> make_policy(const PolicyConfig& config, std::span<const RobotPtr> training_robots,
                                    std::uint64_t seed);
/// Rebuilds a policy from a checkpoint registry string instead of robots.
std::unique_ptr<Policy> make_policy_from_registry(const PolicyConfig& config, const std::string& registry,
                                                  std::uint64_t seed);

/// URMA joint-set encoding z_bar (B x latent) and per-joint latents z_j (N_j x latent).
std::pair<tg::Tensor, tg::Tensor> joint_set_encoding(const Policy& policy, const PolicyBatch& batch);

/// Inference-mode helpers.
struct ActionDistribution {
  std::vector<double> mean;
  std::vector<double> std;
};

std::vector<ActionDistribution> action_distributions(const Policy& policy, const PolicyBatch& batch);
std::vector<double> critic_values(const Policy& policy, const PolicyBatch& batch);

/// Diagonal Gaussian sample and its log density.
std::pair<std::vector<double>, double> sample_and_logprob(const ActionDistribution& dist, std::mt19937_64& rng);
double log_prob(const ActionDistribution& dist, std::span<const double> action);

/// Per-sample log densities (B x 1) of flattened actions (N_j x 1) under an actor output.
tg::Var batch_log_prob(const ActorOutput& out, tg::Var actions, const PolicyBatch& batch);
/// Per-sample entropies (B x 1).
tg::Var batch_entropy(const ActorOutput& out, const PolicyBatch& batch);

/// Orthogonal (in x out) matrix scaled by gain.
tg::Tensor orthogonal(std::size_t in, std::size_t out, double gain, std::mt19937_64& rng);

}  // namespace urma
