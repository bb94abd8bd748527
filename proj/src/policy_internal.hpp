#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "urma/policy.hpp"

namespace urma::detail {

struct Dense {
  std::size_t weight = 0, bias = 0;
};

struct Norm {
  std::size_t gain = 0, bias = 0;
};

/// Linear layers with tanh between them; an optional LayerNorm follows the first layer.
struct Mlp {
  std::vector<Dense> layers;
  std::optional<Norm> first_norm;
  bool tanh_output = false;

  tg::Var forward(const BoundParams& p, tg::Var x) const;
  /// Layers from `first` on, applied to an already computed pre-activation of layer `first - 1`.
  tg::Var forward_from(const BoundParams& p, tg::Var h, std::size_t first) const;
};

struct MlpOptions {
  bool norm_first = true;
  bool tanh_output = true;
  double output_gain = 1.4142135623730951;
  double output_bias = 0.0;
};

/// Registers blocks on a policy while building it.
class NetBuilder {
 public:
  using AddFn = std::function<std::size_t(std::string, tg::Tensor, bool)>;

  NetBuilder(AddFn add, std::uint64_t seed, bool layer_norm) : add_(std::move(add)), rng_(seed), layer_norm_(layer_norm) {}

  /// in -> hidden... -> out (out = 0 leaves the last hidden layer as the output).
  Mlp mlp(const std::string& prefix, std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
          const MlpOptions& options, bool critic);
  Dense dense(const std::string& name, std::size_t in, std::size_t out, double gain, double bias, bool critic);
  Norm norm(const std::string& name, std::size_t width, bool critic);
  std::size_t block(const std::string& name, tg::Tensor init, bool critic) { return add_(name, std::move(init), critic); }
  std::mt19937_64& rng() { return rng_; }
  bool layer_norm() const { return layer_norm_; }

 private:
  AddFn add_;
  std::mt19937_64 rng_;
  bool layer_norm_;
};

tg::Var dense_forward(const BoundParams& p, const Dense& d, tg::Var x);

/// Rows of the joint obs/desc tensors as constants on the tape.
tg::Var constant(tg::Tape& tape, const tg::Tensor& t);

std::unique_ptr<Policy> make_multihead(const PolicyConfig& config, std::span<const RobotPtr> robots, std::uint64_t seed);
std::unique_ptr<Policy> make_padding(const PolicyConfig& config, std::span<const RobotPtr> robots, std::uint64_t seed);
std::unique_ptr<Policy> multihead_from_registry(const PolicyConfig& config, const std::string& registry,
                                                std::uint64_t seed);
std::unique_ptr<Policy> padding_from_registry(const PolicyConfig& config, const std::string& registry,
                                              std::uint64_t seed);

}  // namespace urma::detail
