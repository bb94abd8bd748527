#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "urma/policy.hpp"

namespace urma::diag {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured quantity (worst error, count, ...)
  double tolerance = 0.0;  // bound the value was held against
  std::string detail;
};

/// Uniform [-1, 1] observation bundle shaped for `robot`.
ObservationBundle random_bundle(const RobotSpec& robot, std::mt19937_64& rng);

/// Robot and observation with joints reordered: new joint k is old joint perm[k].
std::pair<RobotPtr, ObservationBundle> permute_joints(const RobotSpec& robot, const ObservationBundle& obs,
                                                      const std::vector<std::size_t>& perm);

/// Adds N(0, scale) noise to every parameter, then projects.
void jitter(Policy& policy, std::mt19937_64& rng, double scale);

/// Central-difference checks (h = 1e-5) of every tensorgrad op, worst relative error over `trials` random cases.
std::vector<CheckResult> tensorgrad_suite(int trials, std::uint64_t seed, double tolerance = 1e-4);

/// Whole-network checks of the actor log-density and the critic against central differences, worst over `trials`
/// random parameter/observation draws on a small configuration of the given architecture.
std::vector<CheckResult> policy_gradient_suite(Architecture architecture, int trials, std::uint64_t seed,
                                               double tolerance = 1e-4);

/// z_bar bit-identical and mean/std/value exactly permuted over `robots` generated robots x `permutations` each.
CheckResult permutation_suite(const Policy& policy, std::size_t robots, std::size_t permutations,
                              std::uint64_t seed);

/// One URMA parameter set on every reference robot and `generated` generated robots; multihead must reject exactly
/// the unregistered classes and padding exactly the unregistered tasks.
std::vector<CheckResult> morphology_suite(const std::string& robots_dir, std::size_t generated, std::uint64_t seed);

/// Every parameter block finite.
CheckResult finite_parameters(const Policy& policy);

}  // namespace urma::diag
