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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "popr/core.hpp"
#include "popr/error.hpp"
#include "popr/random.hpp"

namespace popr {

// Discrepancy measures usable inside the energy function.
struct JsDivergence {};
struct KlDivergence {};
struct MmdRbf {
  double bandwidth = 1.0;
};
struct MmdMultiscale {
  std::vector<double> bandwidths{0.2, 0.5, 0.9, 1.3};
};

using DiscrepancyKind =
    std::variant<JsDivergence, KlDivergence, MmdRbf, MmdMultiscale>;

inline std::string discrepancy_name(const DiscrepancyKind& k) {
  switch (k.index()) {
    case 0: return "js";
    case 1: return "kl";
    case 2: return "mmd-rbf";
    default: return "mmd-multiscale";
  }
}

inline DiscrepancyKind parse_discrepancy(const std::string& name) {
  if (name == "js") return JsDivergence{};
  if (name == "kl") return KlDivergence{};
  if (name == "mmd-rbf") return MmdRbf{};
  if (name == "mmd-multiscale") return MmdMultiscale{};
  fail(ErrorCode::kValidation, "unknown discrepancy '" + name +
                                   "' (expected js, kl, mmd-rbf, mmd-multiscale)");
}

namespace detail {

inline void check_distribution(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (double v : p) {
    require(v >= 0.0 && std::isfinite(v), ErrorCode::kInvalidArgument,
            std::string(name) + " has a negative or non-finite entry");
    sum += v;
  }
  require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::kInvalidArgument,
          std::string(name) + " does not sum to 1");
}

inline void check_pair(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), ErrorCode::kDimensionMismatch,
          "distributions differ in length");
  check_distribution(p, "p");
  check_distribution(q, "q");
}

// p * log2(p / q) with 0 log 0 := 0.
inline double kl_term(double p, double q) {
  return p > 0.0 ? p * std::log2(p / q) : 0.0;
}

}  // namespace detail

// (p_i + eps) / (1 + |A| eps)
inline std::vector<double> smooth(std::span<const double> p, double eps) {
  std::vector<double> out(p.begin(), p.end());
  const double z = 1.0 + static_cast<double>(p.size()) * eps;
  for (double& v : out) v = (v + eps) / z;
  return out;
}

// Base-2 Jensen-Shannon divergence, bounded by 1.
inline double js_divergence(std::span<const double> p,
                            std::span<const double> q) {
  detail::check_pair(p, q);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    d += 0.5 * detail::kl_term(p[i], m) + 0.5 * detail::kl_term(q[i], m);
  }
  return std::clamp(d, 0.0, 1.0);
}

// KL(p || q) in bits with q smoothed by `eps` first.
inline double kl_divergence(std::span<const double> p,
                            std::span<const double> q, double eps) {
  detail::check_pair(p, q);
  require(eps >= 0.0, ErrorCode::kInvalidArgument, "smoothing must be >= 0");
  const std::vector<double> qs = smooth(q, eps);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0 && qs[i] == 0.0) return INFINITY;
    d += detail::kl_term(p[i], qs[i]);
  }
  return std::max(d, 0.0);
}

using SampleSet = std::vector<std::vector<double>>;

inline double squared_distance(std::span<const double> a,
                               std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

inline double kernel_value(const MmdRbf& k, double sq) {
  return std::exp(-sq / (2.0 * k.bandwidth * k.bandwidth));
}

// Sum of inverse multiquadrics h^2 / (h^2 + |x-y|^2).
inline double kernel_value(const MmdMultiscale& k, double sq) {
  double v = 0.0;
  for (double h : k.bandwidths) v += h * h / (h * h + sq);
  return v;
}

inline double kernel_max(const MmdRbf&) { return 1.0; }
inline double kernel_max(const MmdMultiscale& k) {
  return static_cast<double>(k.bandwidths.size());
}

// Biased (V-statistic) estimate of squared MMD, clamped at 0.
template <typename Kernel>
double mmd(const SampleSet& x, const SampleSet& y, const Kernel& kernel) {
  require(!x.empty() && !y.empty(), ErrorCode::kInvalidArgument,
          "mmd needs nonempty sample sets");
  const std::size_t dim = x.front().size();
  for (const auto& v : x)
    require(v.size() == dim, ErrorCode::kDimensionMismatch, "ragged sample set x");
  for (const auto& v : y)
    require(v.size() == dim, ErrorCode::kDimensionMismatch,
            "sample sets differ in dimension");
  auto mean_k = [&](const SampleSet& a, const SampleSet& b) {
    double s = 0.0;
    for (const auto& u : a)
      for (const auto& v : b) s += kernel_value(kernel, squared_distance(u, v));
    return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };
  return std::max(0.0, mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y));
}

struct EnergyOptions {
  DiscrepancyKind kind = JsDivergence{};
  double smoothing = 1e-6;
  // Distance scale for continuous per-step discrepancies; <= 0 means
  // "estimate from the dataset" (see action_distance_scale).
  double continuous_scale = 0.0;
};

// 95th percentile of pairwise distances between logged continuous actions,
// over at most 2000 evenly strided actions. Returns 1 for degenerate data.
inline double action_distance_scale(const ExpertDataset& d) {
  std::vector<const std::vector<double>*> acts;
  for (const auto& t : d.trajectories)
    for (const auto& s : t.steps)
      if (const auto* v = std::get_if<std::vector<double>>(&s.action))
        acts.push_back(v);
  constexpr std::size_t kMax = 2000;
  if (acts.size() > kMax) {
    std::vector<const std::vector<double>*> picked;
    const double stride = static_cast<double>(acts.size()) / kMax;
    for (std::size_t i = 0; i < kMax; ++i)
      picked.push_back(acts[static_cast<std::size_t>(i * stride)]);
    acts.swap(picked);
  }
  std::vector<double> dist;
  for (std::size_t i = 0; i < acts.size(); ++i)
    for (std::size_t j = i + 1; j < acts.size(); ++j)
      dist.push_back(std::sqrt(squared_distance(*acts[i], *acts[j])));
  if (dist.empty()) return 1.0;
  const auto k = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(dist.size()))) - 1;
  std::nth_element(dist.begin(), dist.begin() + k, dist.end());
  return dist[k] > 0.0 ? dist[k] : 1.0;
}

// Normalised similarity E = 1 - mean_t rho_t in [0,1] between expert and
// candidate actions taken on the same states. Discrete spaces compare
// smoothed one-hot vectors step by step (precomputed |A|x|A| table);
// continuous spaces use a scaled Euclidean distance per step, or pool the
// trajectory's actions for the MMD kinds.
class EnergyFunction {
 public:
  EnergyFunction(ActionSpace space, EnergyOptions options)
      : space_(space), options_(std::move(options)) {
    require(options_.smoothing > 0.0, ErrorCode::kInvalidArgument,
            "smoothing must be positive");
    if (space_.is_discrete()) build_table();
    if (options_.continuous_scale <= 0.0) options_.continuous_scale = 1.0;
  }

  EnergyFunction(const ExpertDataset& dataset, EnergyOptions options)
      : EnergyFunction(dataset.action_space, with_scale(dataset, options)) {}

  const EnergyOptions& options() const { return options_; }
  const ActionSpace& space() const { return space_; }

  double step_discrepancy(const Action& expert, const Action& candidate) const {
    if (space_.is_discrete()) {
      const int n = space_.size();
      return table_[std::get<int>(expert) * n + std::get<int>(candidate)];
    }
    const auto& a = std::get<std::vector<double>>(expert);
    const auto& b = std::get<std::vector<double>>(candidate);
    return std::min(1.0, std::sqrt(squared_distance(a, b)) /
                             options_.continuous_scale);
  }

  double operator()(std::span<const Action> expert,
                    std::span<const Action> candidate) const {
    require(expert.size() == candidate.size(), ErrorCode::kDimensionMismatch,
            "expert and candidate action sequences differ in length");
    require(!expert.empty(), ErrorCode::kInvalidArgument,
            "energy needs at least one aligned step");
    for (std::size_t t = 0; t < expert.size(); ++t) {
      require(space_.contains(expert[t]) && space_.contains(candidate[t]),
              ErrorCode::kDimensionMismatch,
              "action outside " + space_.describe());
    }
    if (!space_.is_discrete() && is_mmd()) return pooled_energy(expert, candidate);
    double rho = 0.0;
    for (std::size_t t = 0; t < expert.size(); ++t)
      rho += step_discrepancy(expert[t], candidate[t]);
    return std::clamp(1.0 - rho / static_cast<double>(expert.size()), 0.0, 1.0);
  }

 private:
  static EnergyOptions with_scale(const ExpertDataset& d, EnergyOptions o) {
    if (!d.action_space.is_discrete() && o.continuous_scale <= 0.0)
      o.continuous_scale = action_distance_scale(d);
    return o;
  }

  bool is_mmd() const {
    return std::holds_alternative<MmdRbf>(options_.kind) ||
           std::holds_alternative<MmdMultiscale>(options_.kind);
  }

  // MMD^2 normalised by its upper bound 2 * max k.
  double normalised_mmd(const SampleSet& x, const SampleSet& y) const {
    return std::visit(
        [&](const auto& k) -> double {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, MmdRbf> ||
                        std::is_same_v<K, MmdMultiscale>) {
            return std::min(1.0, mmd(x, y, k) / (2.0 * kernel_max(k)));
          } else {
            return 0.0;
          }
        },
        options_.kind);
  }

  double pooled_energy(std::span<const Action> expert,
                       std::span<const Action> candidate) const {
    SampleSet x, y;
    for (const auto& a : expert) x.push_back(std::get<std::vector<double>>(a));
    for (const auto& a : candidate) y.push_back(std::get<std::vector<double>>(a));
    return std::clamp(1.0 - normalised_mmd(x, y), 0.0, 1.0);
  }

  void build_table() {
    const int n = space_.size();
    const double eps = options_.smoothing;
    auto one_hot = [n](int i) {
      std::vector<double> v(n, 0.0);
      v[i] = 1.0;
      return v;
    };
    table_.assign(static_cast<std::size_t>(n) * n, 0.0);
    // KL between two disjoint smoothed one-hots, the per-step maximum.
    const double kl_max =
        kl_divergence(smooth(one_hot(0), eps), smooth(one_hot(1), eps), 0.0);
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        if (a == b) continue;
        const auto p = smooth(one_hot(a), eps);
        const auto q = smooth(one_hot(b), eps);
        double rho = 0.0;
        switch (options_.kind.index()) {
          case 0: rho = js_divergence(p, q); break;
          case 1: rho = kl_divergence(p, q, 0.0) / kl_max; break;
          default: rho = normalised_mmd({one_hot(a)}, {one_hot(b)}); break;
        }
        table_[a * n + b] = std::clamp(rho, 0.0, 1.0);
      }
    }
  }

  ActionSpace space_;
  EnergyOptions options_;
  std::vector<double> table_;
};

inline double energy(std::span<const Action> expert,
                     std::span<const Action> candidate, ActionSpace space,
                     const EnergyOptions& options = {}) {
  return EnergyFunction(space, options)(expert, candidate);
}

struct EnergySample {
  std::vector<double> values;
  double mean = 0.0;
  double variance = 0.0;  // unbiased, divisor M-1

  static EnergySample from_values(std::vector<double> values) {
    require(values.size() >= 2, ErrorCode::kInvalidArgument,
            "an energy sample needs at least 2 values");
    EnergySample s;
    s.values = std::move(values);
    const double m = static_cast<double>(s.values.size());
    s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / m;
    double ss = 0.0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.variance = ss / (m - 1.0);
    return s;
  }
};

// Draws M trajectories with replacement, replays `policy` on their logged
// states and scores each against the logged actions.
inline EnergySample bootstrap_energies(const ExpertDataset& dataset,
                                       const Policy& policy, int m,
                                       const EnergyFunction& energy_fn,
                                       Rng& rng) {
  require(m >= 2, ErrorCode::kValidation,
          "bootstrap size M must be >= 2, got " + std::to_string(m));
  require(!dataset.trajectories.empty(), ErrorCode::kValidation,
          "dataset has no trajectories");
  require(policy.action_space() == dataset.action_space,
          ErrorCode::kDimensionMismatch,
          "policy '" + policy.id() + "' acts in " +
              policy.action_space().describe() + ", dataset uses " +
              dataset.action_space.describe());
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::vector<double> values;
  values.reserve(m);
  for (int j = 0; j < m; ++j) {
    const Trajectory& t = dataset.trajectories[pick(rng)];
    const std::vector<Action> replayed = replay_actions(policy, t, rng);
    const std::vector<Action> logged = logged_actions(t);
    values.push_back(energy_fn(logged, replayed));
  }
  return EnergySample::from_values(std::move(values));
}

inline EnergySample bootstrap_energies(const ExpertDataset& dataset,
                                       const Policy& policy, int m,
                                       const EnergyOptions& options, Rng& rng) {
  return bootstrap_energies(dataset, policy, m, EnergyFunction(dataset, options),
                            rng);
}

}  // namespace popr
