/*
 * Copyright 2026 The popr Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "popr/error.hpp"
#include "popr/random.hpp"

namespace popr {

using State = std::vector<double>;

// Integer index for discrete spaces, real vector for continuous ones.
using Action = std::variant<int, std::vector<double>>;

class ActionSpace {
 public:
  enum class Kind { kDiscrete, kContinuous };

  static ActionSpace discrete(int cardinality) {
    require(cardinality >= 2, ErrorCode::kInvalidArgument,
            "discrete action space needs cardinality >= 2, got " +
                std::to_string(cardinality));
    return ActionSpace(Kind::kDiscrete, cardinality);
  }

  static ActionSpace continuous(int dimension) {
    require(dimension >= 1, ErrorCode::kInvalidArgument,
            "continuous action space needs dimension >= 1, got " +
                std::to_string(dimension));
    return ActionSpace(Kind::kContinuous, dimension);
  }

  Kind kind() const { return kind_; }
  bool is_discrete() const { return kind_ == Kind::kDiscrete; }
  // Cardinality for discrete spaces, dimension for continuous ones.
  int size() const { return size_; }

  bool contains(const Action& a) const {
    if (is_discrete()) {
      const int* idx = std::get_if<int>(&a);
      return idx != nullptr && *idx >= 0 && *idx < size_;
    }
    const auto* v = std::get_if<std::vector<double>>(&a);
    return v != nullptr && static_cast<int>(v->size()) == size_;
  }

  std::string describe() const {
    return std::string(is_discrete() ? "discrete(" : "continuous(") +
           std::to_string(size_) + ")";
  }

  friend bool operator==(const ActionSpace&, const ActionSpace&) = default;

 private:
  ActionSpace(Kind kind, int size) : kind_(kind), size_(size) {}

  Kind kind_;
  int size_;
};

struct Step {
  State state;
  Action action;
  std::optional<double> reward;  // absent in sparse-reward logs
  State next_state;

  friend bool operator==(const Step&, const Step&) = default;
};

struct Trajectory {
  std::vector<Step> steps;
  std::string meta;  // opaque JSON object text, empty when absent

  std::size_t length() const { return steps.size(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct ExpertDataset {
  ActionSpace action_space;
  std::vector<Trajectory> trajectories;

  std::size_t size() const { return trajectories.size(); }
  std::size_t state_dim() const {
    return trajectories.empty() || trajectories.front().steps.empty()
               ? 0
               : trajectories.front().steps.front().state.size();
  }
  bool has_rewards() const {
    for (const auto& t : trajectories)
      for (const auto& s : t.steps)
        if (!s.reward) return false;
    return !trajectories.empty();
  }

  friend bool operator==(const ExpertDataset&, const ExpertDataset&) = default;
};

// Throws kValidation describing the first violated invariant.
inline void validate(const ExpertDataset& d) {
  require(!d.trajectories.empty(), ErrorCode::kValidation,
          "dataset has no trajectories");
  const std::size_t dim = d.state_dim();
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    const auto& t = d.trajectories[i];
    const std::string where = "trajectory " + std::to_string(i);
    require(!t.steps.empty(), ErrorCode::kValidation, where + " is empty");
    for (std::size_t j = 0; j < t.steps.size(); ++j) {
      const Step& s = t.steps[j];
      const std::string at = where + " step " + std::to_string(j);
      require(s.state.size() == dim && s.next_state.size() == dim,
              ErrorCode::kValidation, at + ": state dimension differs");
      require(d.action_space.contains(s.action), ErrorCode::kValidation,
              at + ": action does not conform to " +
                  d.action_space.describe());
    }
  }
}

// A candidate (or expert) policy. Implementations are immutable or carry
// only per-instance resources; use clone() to give each worker its own copy.
class Policy {
 public:
  explicit Policy(std::string id) : id_(std::move(id)) {}
  virtual ~Policy() = default;

  const std::string& id() const { return id_; }

  virtual ActionSpace action_space() const = 0;

  // Expected state vector length, or nullopt when any length is accepted.
  virtual std::optional<std::size_t> state_dim() const { return std::nullopt; }

  // Randomness, if any, is drawn from `rng` only.
  virtual Action act(std::span<const double> state, Rng& rng) const = 0;

  // Action probabilities for discrete policies that can report them.
  virtual std::optional<std::vector<double>> act_dist(
      std::span<const double> /*state*/) const {
    return std::nullopt;
  }

  virtual std::unique_ptr<Policy> clone() const = 0;

 protected:
  Policy(const Policy&) = default;
  Policy& operator=(const Policy&) = default;

 private:
  std::string id_;
};

class ConstantPolicy final : public Policy {
 public:
  ConstantPolicy(std::string id, ActionSpace space, Action action)
      : Policy(std::move(id)), space_(space), action_(std::move(action)) {
    require(space_.contains(action_), ErrorCode::kInvalidArgument,
            "constant action does not conform to " + space_.describe());
  }

  ActionSpace action_space() const override { return space_; }

  Action act(std::span<const double>, Rng&) const override { return action_; }

  std::optional<std::vector<double>> act_dist(
      std::span<const double>) const override {
    if (!space_.is_discrete()) return std::nullopt;
    std::vector<double> p(space_.size(), 0.0);
    p[std::get<int>(action_)] = 1.0;
    return p;
  }

  std::unique_ptr<Policy> clone() const override {
    return std::unique_ptr<Policy>(new ConstantPolicy(*this));
  }

 private:
  ConstantPolicy(const ConstantPolicy&) = default;

  ActionSpace space_;
  Action action_;
};

// Queries `policy` on each logged state of `trajectory`, in order.
inline std::vector<Action> replay_actions(const Policy& policy,
                                          const Trajectory& trajectory,
                                          Rng& rng) {
  const auto dim = policy.state_dim();
  const ActionSpace space = policy.action_space();
  std::vector<Action> out;
  out.reserve(trajectory.steps.size());
  for (const Step& step : trajectory.steps) {
    if (dim && *dim != step.state.size()) {
      fail(ErrorCode::kDimensionMismatch,
           "policy '" + policy.id() + "' expects state dimension " +
               std::to_string(*dim) + ", trajectory has " +
               std::to_string(step.state.size()));
    }
    Action a = policy.act(step.state, rng);
    require(space.contains(a), ErrorCode::kDimensionMismatch,
            "policy '" + policy.id() + "' returned an action outside " +
                space.describe());
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<Action> replay_actions(const Policy& policy,
                                          const Trajectory& trajectory,
                                          std::uint64_t seed) {
  Rng rng(seed);
  return replay_actions(policy, trajectory, rng);
}

inline std::vector<Action> logged_actions(const Trajectory& trajectory) {
  std::vector<Action> out;
  out.reserve(trajectory.steps.size());
  for (const Step& s : trajectory.steps) out.push_back(s.action);
  return out;
}

}  // namespace popr
