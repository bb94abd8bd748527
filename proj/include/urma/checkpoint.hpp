#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "urma/policy.hpp"
#include "urma/trainer.hpp"

namespace urma {

nlohmann::json to_json(const PolicyConfig& config);
PolicyConfig policy_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Checkpoint file unreadable, corrupt, or incompatible with the requested use.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainerState {
  std::uint64_t global_step = 0;
  RunningStats value_stats;
  std::uint64_t adam_steps = 0;
  std::vector<tg::Tensor> first_moments, second_moments;
  std::string rng;  // std::mt19937_64 stream state
};

struct Checkpoint {
  PolicyConfig config;
  std::string registry;
  std::vector<std::pair<std::string, tg::Tensor>> blocks;
  /// Free-form echo: train config, robots, seeds.
  nlohmann::json meta = nlohmann::json::object();
  std::optional<TrainerState> trainer;
};

Checkpoint capture(const Policy& policy, nlohmann::json meta = nlohmann::json::object());
Checkpoint capture(Trainer& trainer, nlohmann::json meta = nlohmann::json::object());

/// Binary layout: "URMACKPT", u32 version, length-prefixed JSON header (config, registry, meta, block shapes),
/// then raw little-endian doubles of every block and, when present, the Adam moments.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds the policy; block names and shapes must match what the config and registry produce.
std::unique_ptr<Policy> restore_policy(const Checkpoint& checkpoint);
/// Restores step, value statistics, optimizer moments and RNG of a trainer built on the restored policy.
void restore_trainer(Trainer& trainer, const Checkpoint& checkpoint);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::string& path);

}  // namespace urma
