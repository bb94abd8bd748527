#include "urma/reward_coefficients.hpp"

#include <map>
#include <stdexcept>

namespace urma {

namespace {

RewardCoefficients with(std::initializer_list<std::pair<int, double>> overrides, double curriculum) {
  RewardCoefficients r = default_coefficients();
  for (auto [term, value] : overrides) r.c[term - 1] = value;
  r.curriculum_steps = curriculum;
  return r;
}

const std::map<std::string, RewardCoefficients>& registry() {
  static const std::map<std::string, RewardCoefficients> table = [] {
    std::map<std::string, RewardCoefficients> m;
    m["ANYbotics ANYmal B"] = with({}, 20e6);
    m["ANYbotics ANYmal C"] = with({}, 20e6);
    m["Google Barkour v0"] = with({{1, 3.0}, {2, 1.5}}, 15e6);
    m["Google Barkour vB"] = with({}, 15e6);
    m["MAB Silver Badger"] = with({}, 12e6);
    m["Petoi Bittle"] = with({{1, 5.0}, {2, 2.5}}, 40e6);
    m["Unitree A1"] = with({}, 12e6);
    m["Unitree Go1"] = with({}, 12e6);
    m["Unitree Go2"] = with({}, 12e6);
    m["Agility Robotics Cassie"] = with({{1, 3.0}, {2, 1.5}, {9, 2e-5}}, 50e6);
    m["PAL Robotics Talos"] = with({{1, 4.0}, {2, 2.0}, {6, 0.2}, {9, 2e-5}}, 80e6);
    m["Robotis OP3"] =
        with({{1, 4.0}, {2, 2.0}, {4, 0.1}, {6, 0.4}, {8, 1.2e-6}, {9, 4e-4}, {10, 6e-3}}, 40e6);
    m["SoftBank Nao V5"] =
        with({{1, 4.0}, {2, 2.0}, {4, 0.1}, {6, 0.15}, {8, 1.2e-6}, {9, 4e-4}, {10, 6e-3}}, 40e6);
    m["Unitree G1"] = with({{1, 3.0}, {2, 1.5}, {6, 0.2}, {9, 5e-5}}, 50e6);
    m["Unitree H1"] = with({{6, 0.2}, {9, 2e-5}}, 50e6);
    m["Custom Hexapod"] = with({{1, 4.0}, {2, 2.0}}, 15e6);
    return m;
  }();
  return table;
}

}  // namespace

RewardCoefficients default_coefficients() {
  RewardCoefficients r;
  r.c = {2.0, 1.0, 2.0, 0.05, 0.2, 0.0, 10.0, 2.5e-7, 2e-4, 0.01, 30.0, 1.0, 0.1, 0.5};
  r.curriculum_steps = 12e6;
  return r;
}

RewardCoefficients single_set_coefficients() {
  RewardCoefficients r;
  r.c = {5.0, 2.5, 2.0, 0.05, 0.2, 0.2, 10.0, 2.5e-7, 2e-5, 6e-3, 30.0, 1.0, 0.1, 0.5};
  r.curriculum_steps = 80e6;
  return r;
}

RewardCoefficients load_coefficients(const std::string& robot_name, bool single_set) {
  const auto& table = registry();
  auto it = table.find(robot_name);
  if (it == table.end()) throw std::invalid_argument("no reward coefficients registered for robot '" + robot_name + "'");
  return single_set ? single_set_coefficients() : it->second;
}

std::vector<std::string> coefficient_registry_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

}  // namespace urma
