#include "urma/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace urma {

using nlohmann::json;
using tg::Shape;
using tg::Tensor;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json to_json(const PolicyConfig& c) {
  return {{"architecture", to_string(c.architecture)},
          {"latent", c.latent},
          {"description_hidden", c.description_hidden},
          {"observation_hidden", c.observation_hidden},
          {"core_hidden", c.core_hidden},
          {"decoder_description_hidden", c.decoder_description_hidden},
          {"decoder_description_latent", c.decoder_description_latent},
          {"mean_hidden", c.mean_hidden},
          {"std_hidden", c.std_hidden},
          {"baseline_hidden", c.baseline_hidden},
          {"layer_norm", c.layer_norm},
          {"mean_norm", to_string(c.mean_norm)},
          {"shared_description", to_string(c.shared_description)},
          {"drop_mass_dims", c.drop_mass_dims},
          {"initial_temperature", c.initial_temperature},
          {"temperature_epsilon", c.temperature_epsilon},
          {"initial_std", c.initial_std},
          {"min_std", c.min_std},
          {"max_std", c.max_std},
          {"mean_clip", c.mean_clip},
          {"grow_heads", c.grow_heads}};
}

PolicyConfig policy_config_from_json(const json& j) {
  PolicyConfig c;
  c.architecture = parse_architecture(j.at("architecture").get<std::string>());
  j.at("latent").get_to(c.latent);
  j.at("description_hidden").get_to(c.description_hidden);
  j.at("observation_hidden").get_to(c.observation_hidden);
  j.at("core_hidden").get_to(c.core_hidden);
  j.at("decoder_description_hidden").get_to(c.decoder_description_hidden);
  j.at("decoder_description_latent").get_to(c.decoder_description_latent);
  j.at("mean_hidden").get_to(c.mean_hidden);
  j.at("std_hidden").get_to(c.std_hidden);
  j.at("baseline_hidden").get_to(c.baseline_hidden);
  j.at("layer_norm").get_to(c.layer_norm);
  c.mean_norm = parse_mean_norm(j.at("mean_norm").get<std::string>());
  c.shared_description = parse_shared_description(j.at("shared_description").get<std::string>());
  j.at("drop_mass_dims").get_to(c.drop_mass_dims);
  j.at("initial_temperature").get_to(c.initial_temperature);
  j.at("temperature_epsilon").get_to(c.temperature_epsilon);
  j.at("initial_std").get_to(c.initial_std);
  j.at("min_std").get_to(c.min_std);
  j.at("max_std").get_to(c.max_std);
  j.at("mean_clip").get_to(c.mean_clip);
  j.at("grow_heads").get_to(c.grow_heads);
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"steps_per_env", c.steps_per_env},
          {"envs_per_robot", c.envs_per_robot},
          {"epochs", c.epochs},
          {"minibatch_per_robot", c.minibatch_per_robot},
          {"clip", c.clip},
          {"gamma", c.gamma},
          {"lambda", c.lambda},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"learning_rate", c.learning_rate},
          {"lr_scale", c.lr_scale},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"normalize_advantages", c.normalize_advantages},
          {"normalize_values", c.normalize_values},
          {"total_steps", c.total_steps},
          {"curriculum_reference_steps", c.curriculum_reference_steps},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  j.at("steps_per_env").get_to(c.steps_per_env);
  j.at("envs_per_robot").get_to(c.envs_per_robot);
  j.at("epochs").get_to(c.epochs);
  j.at("minibatch_per_robot").get_to(c.minibatch_per_robot);
  j.at("clip").get_to(c.clip);
  j.at("gamma").get_to(c.gamma);
  j.at("lambda").get_to(c.lambda);
  j.at("entropy_coef").get_to(c.entropy_coef);
  j.at("value_coef").get_to(c.value_coef);
  j.at("max_grad_norm").get_to(c.max_grad_norm);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("lr_scale").get_to(c.lr_scale);
  j.at("adam_beta1").get_to(c.adam_beta1);
  j.at("adam_beta2").get_to(c.adam_beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("normalize_advantages").get_to(c.normalize_advantages);
  j.at("normalize_values").get_to(c.normalize_values);
  j.at("total_steps").get_to(c.total_steps);
  j.at("curriculum_reference_steps").get_to(c.curriculum_reference_steps);
  j.at("seed").get_to(c.seed);
  c.validate();
  return c;
}

Checkpoint capture(const Policy& policy, json meta) {
  Checkpoint c;
  c.config = policy.config();
  c.registry = policy.registry();
  for (const auto& b : policy.parameters().blocks()) c.blocks.emplace_back(b.name, b.value);
  c.meta = std::move(meta);
  return c;
}

Checkpoint capture(Trainer& trainer, json meta) {
  Checkpoint c = capture(trainer.policy(), std::move(meta));
  TrainerState s;
  s.global_step = trainer.global_step();
  s.value_stats = trainer.value_stats();
  auto& adam = trainer.optimizer();
  adam.sync(trainer.policy().parameters());
  s.adam_steps = adam.steps();
  s.first_moments = adam.first_moments();
  s.second_moments = adam.second_moments();
  std::ostringstream rng;
  rng << trainer.rng();
  s.rng = rng.str();
  c.trainer = std::move(s);
  return c;
}

namespace {

constexpr char kMagic[8] = {'U', 'R', 'M', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("checkpoint: truncated file");
  return v;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in, const Shape& shape) {
  Tensor t(shape);
  if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
    throw CheckpointError("checkpoint: truncated tensor data");
  return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  json header;
  header["config"] = to_json(c.config);
  header["registry"] = c.registry;
  header["meta"] = c.meta;
  for (const auto& [name, t] : c.blocks) header["blocks"].push_back({{"name", name}, {"shape", t.shape()}});
  if (c.trainer) {
    const auto& s = *c.trainer;
    if (s.first_moments.size() != c.blocks.size() || s.second_moments.size() != c.blocks.size())
      throw CheckpointError("checkpoint: optimizer moments do not match the parameter blocks");
    header["trainer"] = {{"global_step", s.global_step},
                         {"value_mean", s.value_stats.mean},
                         {"value_var", s.value_stats.var},
                         {"value_count", s.value_stats.count},
                         {"adam_steps", s.adam_steps},
                         {"rng", s.rng}};
  }
  // Doubles go through the binary section so the header never rounds them.
  std::vector<double> exact;
  if (c.trainer) exact = {c.trainer->value_stats.mean, c.trainer->value_stats.var, c.trainer->value_stats.count};
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_u64(out, exact.size());
    out.write(reinterpret_cast<const char*>(exact.data()), static_cast<std::streamsize>(exact.size() * sizeof(double)));
    for (const auto& [name, t] : c.blocks) write_tensor(out, t);
    if (c.trainer) {
      for (const auto& t : c.trainer->first_moments) write_tensor(out, t);
      for (const auto& t : c.trainer->second_moments) write_tensor(out, t);
    }
    if (!out) throw CheckpointError("checkpoint: write failed for " + path);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw CheckpointError("checkpoint: " + path + " is not a checkpoint file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t n = read_u64(in);
  if (n > (1ull << 32)) throw CheckpointError("checkpoint: corrupt header length");
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) throw CheckpointError("checkpoint: truncated header");
  json header;
  Checkpoint c;
  try {
    header = json::parse(text);
    c.config = policy_config_from_json(header.at("config"));
    c.registry = header.at("registry").get<std::string>();
    c.meta = header.at("meta");
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad header: ") + e.what());
  }
  const std::uint64_t exact_count = read_u64(in);
  if (exact_count > 16) throw CheckpointError("checkpoint: corrupt header");
  std::vector<double> exact(exact_count);
  in.read(reinterpret_cast<char*>(exact.data()), static_cast<std::streamsize>(exact_count * sizeof(double)));

  std::vector<Shape> shapes;
  if (header.contains("blocks"))
    for (const auto& b : header["blocks"]) {
      shapes.push_back(b.at("shape").get<Shape>());
      c.blocks.emplace_back(b.at("name").get<std::string>(), Tensor{});
    }
  for (std::size_t i = 0; i < shapes.size(); ++i) c.blocks[i].second = read_tensor(in, shapes[i]);
  if (header.contains("trainer")) {
    const auto& t = header["trainer"];
    TrainerState s;
    s.global_step = t.at("global_step").get<std::uint64_t>();
    s.adam_steps = t.at("adam_steps").get<std::uint64_t>();
    s.rng = t.at("rng").get<std::string>();
    if (exact.size() != 3) throw CheckpointError("checkpoint: missing value statistics");
    s.value_stats = RunningStats{exact[0], exact[1], exact[2]};
    for (const auto& shape : shapes) s.first_moments.push_back(read_tensor(in, shape));
    for (const auto& shape : shapes) s.second_moments.push_back(read_tensor(in, shape));
    c.trainer = std::move(s);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes in " + path);
  for (const auto& [name, t] : c.blocks)
    if (!t.all_finite()) throw CheckpointError("checkpoint: block '" + name + "' holds non-finite values");
  return c;
}

std::unique_ptr<Policy> restore_policy(const Checkpoint& c) {
  std::unique_ptr<Policy> p;
  try {
    p = make_policy_from_registry(c.config, c.registry, 0);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: cannot rebuild policy: ") + e.what());
  }
  auto& params = p->parameters();
  if (params.size() != c.blocks.size())
    throw CheckpointError("checkpoint: block count " + std::to_string(c.blocks.size()) + " does not match the " +
                          std::to_string(params.size()) + " blocks of the configured policy");
  for (std::size_t i = 0; i < c.blocks.size(); ++i) {
    const auto& [name, t] = c.blocks[i];
    if (params.block(i).name != name || params.value(i).shape() != t.shape())
      throw CheckpointError("checkpoint: block '" + name + "' " + tg::to_string(t.shape()) + " does not match '" +
                            params.block(i).name + "' " + tg::to_string(params.value(i).shape()));
    params.value(i) = t;
  }
  return p;
}

void restore_trainer(Trainer& trainer, const Checkpoint& c) {
  if (!c.trainer) throw CheckpointError("checkpoint: no trainer state");
  const auto& s = *c.trainer;
  trainer.set_global_step(s.global_step);
  trainer.value_stats() = s.value_stats;
  auto& adam = trainer.optimizer();
  adam.sync(trainer.policy().parameters());
  if (s.first_moments.size() != adam.first_moments().size())
    throw CheckpointError("checkpoint: optimizer state does not match the policy");
  adam.first_moments() = s.first_moments;
  adam.second_moments() = s.second_moments;
  adam.set_steps(s.adam_steps);
  std::istringstream rng(s.rng);
  rng >> trainer.rng();
  if (!rng) throw CheckpointError("checkpoint: bad RNG state");
}

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in.read(buf.data(), static_cast<std::streamsize>(buf.size())) || in.gcount() > 0)
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

}  // namespace urma
