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

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>

#include "popr/core.hpp"
#include "popr/error.hpp"
#include "popr/random.hpp"

// N-state ring world: two actions, optional slip to a uniformly random other
// state, reward equal to the index of the state moved into.
namespace popr::toy {

enum ToyAction : int { kForward = 0, kBackward = 1 };

struct ToyEnvConfig {
  int n_states = 10;
  double slip_prob = 0.1;
  int episode_length = 100;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_states >= 3, ErrorCode::kValidation,
            "n_states must be >= 3, got " + std::to_string(n_states));
    require(slip_prob >= 0.0 && slip_prob <= 1.0, ErrorCode::kValidation,
            "slip_prob must lie in [0,1], got " + std::to_string(slip_prob));
    require(episode_length >= 1, ErrorCode::kValidation,
            "episode_length must be positive");
  }
};

struct Transition {
  int next_state;
  double reward;
};

inline ActionSpace toy_action_space() { return ActionSpace::discrete(2); }

inline Transition toy_step(const ToyEnvConfig& config, int state, int action,
                           Rng& rng) {
  const int n = config.n_states;
  require(state >= 0 && state < n, ErrorCode::kInvalidArgument,
          "state " + std::to_string(state) + " outside [0," +
              std::to_string(n) + ")");
  require(action == kForward || action == kBackward,
          ErrorCode::kInvalidArgument, "toy action must be 0 or 1");
  int next;
  if (uniform01(rng) < config.slip_prob) {
    // Uniform over the n-1 states other than the current one.
    const int r = std::uniform_int_distribution<int>(0, n - 2)(rng);
    next = r < state ? r : r + 1;
  } else {
    next = action == kForward ? (state + 1) % n : (state + n - 1) % n;
  }
  return {next, static_cast<double>(next)};
}

inline int decode_state(std::span<const double> state, int n_states) {
  require(state.size() == 1, ErrorCode::kDimensionMismatch,
          "toy policies expect a 1-d state, got dimension " +
              std::to_string(state.size()));
  const double v = std::round(state[0]);
  require(v >= 0 && v < n_states, ErrorCode::kInvalidArgument,
          "toy state out of range");
  return static_cast<int>(v);
}

// Climbs forward toward the top state and oscillates between the two
// highest-index states: backward at n-1, forward everywhere else.
class ExpertPolicy final : public Policy {
 public:
  explicit ExpertPolicy(int n_states, std::string id = "toy-expert")
      : Policy(std::move(id)), n_states_(n_states) {
    require(n_states >= 3, ErrorCode::kInvalidArgument, "n_states must be >= 3");
  }

  int n_states() const { return n_states_; }

  int action_at(int state) const {
    return state == n_states_ - 1 ? kBackward : kForward;
  }

  ActionSpace action_space() const override { return toy_action_space(); }
  std::optional<std::size_t> state_dim() const override { return 1; }

  Action act(std::span<const double> state, Rng&) const override {
    return action_at(decode_state(state, n_states_));
  }

  std::optional<std::vector<double>> act_dist(
      std::span<const double> state) const override {
    std::vector<double> p(2, 0.0);
    p[action_at(decode_state(state, n_states_))] = 1.0;
    return p;
  }

  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<ExpertPolicy>(n_states_, id());
  }

 private:
  int n_states_;
};

struct MixturePolicySpec {
  double epsilon = 0.0;
  std::uint64_t seed = 0;
};

// With probability epsilon acts uniformly at random, otherwise as the expert.
// The mixture's seed is mixed into every draw, so two mixtures with different
// seeds driven by the same caller stream still act differently.
class MixturePolicy final : public Policy {
 public:
  MixturePolicy(MixturePolicySpec spec, int n_states, std::string id)
      : Policy(std::move(id)), spec_(spec), expert_(n_states) {
    require(spec.epsilon >= 0.0 && spec.epsilon <= 1.0,
            ErrorCode::kInvalidArgument, "epsilon must lie in [0,1]");
  }

  const MixturePolicySpec& spec() const { return spec_; }

  ActionSpace action_space() const override { return toy_action_space(); }
  std::optional<std::size_t> state_dim() const override { return 1; }

  Action act(std::span<const double> state, Rng& rng) const override {
    const int expert_action = std::get<int>(expert_.act(state, rng));
    const std::uint64_t bits = splitmix64(rng() ^ splitmix64(spec_.seed));
    const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
    if (u < spec_.epsilon) return static_cast<int>(bits & 1U);
    return expert_action;
  }

  std::optional<std::vector<double>> act_dist(
      std::span<const double> state) const override {
    const int e = expert_.action_at(decode_state(state, expert_.n_states()));
    std::vector<double> p(2, spec_.epsilon / 2.0);
    p[e] += 1.0 - spec_.epsilon;
    return p;
  }

  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<MixturePolicy>(spec_, expert_.n_states(), id());
  }

 private:
  MixturePolicySpec spec_;
  ExpertPolicy expert_;
};

inline std::unique_ptr<Policy> expert_policy(int n_states) {
  return std::make_unique<ExpertPolicy>(n_states);
}

inline std::unique_ptr<Policy> mixture_policy(const MixturePolicySpec& spec,
                                              int n_states,
                                              std::string id = {}) {
  if (id.empty()) id = "toy-mixture:" + std::to_string(spec.epsilon);
  return std::make_unique<MixturePolicy>(spec, n_states, std::move(id));
}

// One episode from state 0, `episode_length` steps, rewards recorded.
inline Trajectory rollout(const ToyEnvConfig& config, const Policy& policy,
                          Rng& rng) {
  Trajectory t;
  t.steps.reserve(config.episode_length);
  int s = 0;
  for (int i = 0; i < config.episode_length; ++i) {
    const State state{static_cast<double>(s)};
    const Action a = policy.act(state, rng);
    require(toy_action_space().contains(a), ErrorCode::kInvalidArgument,
            "policy '" + policy.id() + "' is not a two-action toy policy");
    const Transition tr = toy_step(config, s, std::get<int>(a), rng);
    t.steps.push_back(
        Step{state, a, tr.reward, State{static_cast<double>(tr.next_state)}});
    s = tr.next_state;
  }
  return t;
}

// Episode i draws from a stream seeded by (config.seed, i), so the dataset
// does not depend on generation order.
inline ExpertDataset generate_dataset(const ToyEnvConfig& config,
                                      const Policy& policy, int episodes) {
  config.validate();
  require(episodes >= 1, ErrorCode::kValidation, "episodes must be >= 1");
  ExpertDataset d{toy_action_space(), {}};
  d.trajectories.reserve(episodes);
  for (int i = 0; i < episodes; ++i) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
    d.trajectories.push_back(rollout(config, policy, rng));
  }
  return d;
}

// Mean undiscounted episodic return over `episodes` seeded rollouts; the
// ground-truth performance used to order candidate policies.
inline double mean_episode_return(const ToyEnvConfig& config,
                                  const Policy& policy, int episodes) {
  config.validate();
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) {
    Rng rng(derive_seed(config.seed ^ 0x5eedf00dULL,
                        static_cast<std::uint64_t>(i)));
    for (const Step& s : rollout(config, policy, rng).steps) total += *s.reward;
  }
  return total / episodes;
}

}  // namespace popr::toy
