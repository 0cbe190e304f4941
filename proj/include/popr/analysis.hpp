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
#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "popr/core.hpp"
#include "popr/error.hpp"
#include "popr/random.hpp"
#include "popr/sampler.hpp"

namespace popr {

enum class RankMode { kMean, kWorstTail, kBestTail, kAgreement };

inline std::string rank_mode_name(RankMode m) {
  switch (m) {
    case RankMode::kMean: return "mean";
    case RankMode::kWorstTail: return "worst";
    case RankMode::kBestTail: return "best";
    default: return "agreement";
  }
}

struct RankingReport {
  RankMode mode = RankMode::kMean;
  double fraction = 1.0;               // tail fraction; 1 for mean mode
  std::vector<std::string> ordering;   // best first
  std::map<std::string, double> scores;
  // Posterior spread (sample std) and number of samples behind each score;
  // empty for non-probabilistic rankings.
  std::map<std::string, double> spread;
  std::map<std::string, std::size_t> samples_used;
};

// Descending score, ties broken by id.
inline std::vector<std::string> order_by_score(
    const std::map<std::string, double>& scores) {
  std::vector<std::string> ids;
  for (const auto& [id, _] : scores) ids.push_back(id);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](const std::string& a, const std::string& b) {
                     const double sa = scores.at(a), sb = scores.at(b);
                     if (sa != sb) return sa > sb;
                     return a < b;
                   });
  return ids;
}

namespace detail {

inline void check_unique_nonempty(std::span<const PosteriorSamples> samples) {
  require(!samples.empty(), ErrorCode::kInvalidArgument, "no policies to rank");
  std::set<std::string> ids;
  for (const auto& s : samples) {
    require(!s.samples.empty(), ErrorCode::kInvalidArgument,
            "policy '" + s.policy_id + "' has an empty sample set");
    require(ids.insert(s.policy_id).second, ErrorCode::kInvalidArgument,
            "duplicate policy id '" + s.policy_id + "'");
  }
}

// ceil(fraction * n) without floating-point overshoot (0.1 * 30 -> 3).
inline std::size_t tail_size(double fraction, std::size_t n) {
  return static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

}  // namespace detail

inline RankingReport rank_mean(std::span<const PosteriorSamples> samples) {
  detail::check_unique_nonempty(samples);
  RankingReport r;
  r.mode = RankMode::kMean;
  for (const auto& s : samples) {
    r.scores[s.policy_id] = s.mean();
    r.spread[s.policy_id] = s.stddev();
    r.samples_used[s.policy_id] = s.samples.size();
  }
  r.ordering = order_by_score(r.scores);
  return r;
}

enum class TailSide { kWorst, kBest };

// Scores each policy by the mean of its bottom (worst) or top (best)
// ceil(fraction * |S|) samples.
inline RankingReport rank_tail(std::span<const PosteriorSamples> samples,
                               TailSide side, double fraction = 0.05) {
  detail::check_unique_nonempty(samples);
  require(fraction > 0.0 && fraction <= 1.0, ErrorCode::kInvalidArgument,
          "tail fraction must lie in (0,1]");
  RankingReport r;
  r.mode = side == TailSide::kWorst ? RankMode::kWorstTail : RankMode::kBestTail;
  r.fraction = fraction;
  for (const auto& s : samples) {
    const std::size_t k = detail::tail_size(fraction, s.samples.size());
    require(k >= 1, ErrorCode::kInvalidArgument,
            "tail of policy '" + s.policy_id + "' is empty");
    std::vector<double> sorted = s.samples;
    std::sort(sorted.begin(), sorted.end());
    const auto first = side == TailSide::kWorst ? sorted.begin()
                                                : sorted.end() - k;
    r.scores[s.policy_id] =
        std::accumulate(first, first + k, 0.0) / static_cast<double>(k);
    r.spread[s.policy_id] = s.stddev();
    r.samples_used[s.policy_id] = k;
  }
  r.ordering = order_by_score(r.scores);
  return r;
}

struct PairwiseMatrix {
  std::vector<std::string> policy_ids;
  std::vector<double> probabilities;  // row-major; (k,l) = p(theta_k > theta_l)

  std::size_t size() const { return policy_ids.size(); }
  double at(std::size_t k, std::size_t l) const {
    return probabilities[k * size() + l];
  }
};

enum class Pairing {
  kIndexPaired,  // compare S_k[i] with S_l[i]; equal lengths required
  kAllPairs,     // U-statistic over every (i, j) pair
};

inline PairwiseMatrix pairwise(std::span<const PosteriorSamples> samples,
                               Pairing pairing = Pairing::kIndexPaired) {
  detail::check_unique_nonempty(samples);
  const std::size_t n = samples.size();
  if (pairing == Pairing::kIndexPaired) {
    for (const auto& s : samples)
      require(s.samples.size() == samples[0].samples.size(),
              ErrorCode::kInvalidArgument,
              "index-paired comparison needs equal sample counts ('" +
                  s.policy_id + "' differs)");
  }
  PairwiseMatrix m;
  for (const auto& s : samples) m.policy_ids.push_back(s.policy_id);
  m.probabilities.assign(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t l = 0; l < n; ++l) {
      if (k == l) continue;
      const auto& a = samples[k].samples;
      const auto& b = samples[l].samples;
      double p = 0.0;
      if (pairing == Pairing::kIndexPaired) {
        std::size_t wins = 0;
        for (std::size_t i = 0; i < a.size(); ++i) wins += a[i] > b[i];
        p = static_cast<double>(wins) / static_cast<double>(a.size());
      } else {
        std::vector<double> sb = b;
        std::sort(sb.begin(), sb.end());
        std::size_t wins = 0;
        for (double x : a)
          wins += static_cast<std::size_t>(
              std::lower_bound(sb.begin(), sb.end(), x) - sb.begin());
        p = static_cast<double>(wins) /
            (static_cast<double>(a.size()) * static_cast<double>(b.size()));
      }
      m.probabilities[k * n + l] = p;
    }
  }
  return m;
}

namespace detail {

inline std::uint64_t hash_states(const Trajectory& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Step& s : t.steps) {
    for (double v : s.state) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = splitmix64(h ^ bits);
    }
  }
  return h;
}

}  // namespace detail

/// AgreeRank baseline: replay every policy on all logged states and score
/// the fraction of exactly matching actions (discrete) or the negative mean
/// Euclidean distance to the logged action (continuous).
///
/// Replay streams are keyed by (seed, policy id, trajectory content), which
/// makes the score independent of trajectory order.
inline RankingReport agree_rank(const ExpertDataset& dataset,
                                const std::vector<const Policy*>& policies,
                                std::uint64_t seed = 0) {
  validate(dataset);
  require(!policies.empty(), ErrorCode::kInvalidArgument, "no policies to rank");
  RankingReport r;
  r.mode = RankMode::kAgreement;
  for (const Policy* p : policies) {
    require(p->action_space() == dataset.action_space,
            ErrorCode::kDimensionMismatch,
            "policy '" + p->id() + "' acts in " +
                p->action_space().describe() + ", dataset uses " +
                dataset.action_space.describe());
    const std::uint64_t ps = derive_seed(seed, p->id());
    double total = 0.0;
    std::size_t steps = 0;
    for (const Trajectory& t : dataset.trajectories) {
      Rng rng(derive_seed(ps, detail::hash_states(t)));
      const std::vector<Action> acts = replay_actions(*p, t, rng);
      for (std::size_t i = 0; i < acts.size(); ++i, ++steps) {
        const Action& logged = t.steps[i].action;
        if (dataset.action_space.is_discrete()) {
          total += std::get<int>(acts[i]) == std::get<int>(logged) ? 1.0 : 0.0;
        } else {
          total -= std::sqrt(squared_distance(
              std::get<std::vector<double>>(acts[i]),
              std::get<std::vector<double>>(logged)));
        }
      }
    }
    r.scores[p->id()] = total / static_cast<double>(steps);
    r.samples_used[p->id()] = steps;
  }
  r.ordering = order_by_score(r.scores);
  return r;
}

/// Multi-expert aggregation. `per_expert[m][k]` holds the posterior of
/// policy k under expert dataset m (policies in the same order for every
/// expert). For each policy, the `top_r` experts with the highest posterior
/// mean contribute their samples, concatenated best expert first.
inline std::vector<PosteriorSamples> multi_expert_aggregate(
    const std::vector<std::vector<PosteriorSamples>>& per_expert, int top_r) {
  require(!per_expert.empty(), ErrorCode::kInvalidArgument, "no experts");
  require(top_r >= 1 && static_cast<std::size_t>(top_r) <= per_expert.size(),
          ErrorCode::kValidation,
          "top_r must lie in [1, " + std::to_string(per_expert.size()) +
              "], got " + std::to_string(top_r));
  const std::size_t n_policies = per_expert[0].size();
  const std::size_t len =
      n_policies ? per_expert[0][0].samples.size() : std::size_t{0};
  for (const auto& row : per_expert) {
    require(row.size() == n_policies, ErrorCode::kInvalidArgument,
            "experts disagree on the number of policies");
    for (std::size_t k = 0; k < n_policies; ++k) {
      require(row[k].policy_id == per_expert[0][k].policy_id,
              ErrorCode::kInvalidArgument,
              "experts list policies in different orders");
      require(row[k].samples.size() == len && len > 0,
              ErrorCode::kInvalidArgument,
              "posterior sample counts differ across experts");
    }
  }
  std::vector<PosteriorSamples> out;
  for (std::size_t k = 0; k < n_policies; ++k) {
    std::vector<std::size_t> experts(per_expert.size());
    std::iota(experts.begin(), experts.end(), 0);
    std::vector<double> means;
    for (const auto& row : per_expert) means.push_back(row[k].mean());
    std::stable_sort(experts.begin(), experts.end(),
                     [&](std::size_t a, std::size_t b) {
                       return means[a] > means[b];
                     });
    PosteriorSamples agg;
    agg.policy_id = per_expert[0][k].policy_id;
    agg.config_fingerprint = per_expert[0][k].config_fingerprint;
    for (int r = 0; r < top_r; ++r) {
      const PosteriorSamples& s = per_expert[experts[r]][k];
      agg.samples.insert(agg.samples.end(), s.samples.begin(), s.samples.end());
      agg.trace.insert(agg.trace.end(), s.trace.begin(), s.trace.end());
      agg.acceptance_rate += s.acceptance_rate / top_r;
      agg.variance_shrinks += s.variance_shrinks;
    }
    out.push_back(std::move(agg));
  }
  return out;
}

// Posterior-mean expected reward: E[theta] times the mean cumulative expert
// return per trajectory. For episodic logs with one reward per trajectory
// the inner sum is that single reward.
inline double expected_reward(const ExpertDataset& dataset,
                              const PosteriorSamples& samples) {
  require(!dataset.trajectories.empty(), ErrorCode::kInvalidArgument,
          "dataset has no trajectories");
  double total = 0.0;
  for (const Trajectory& t : dataset.trajectories) {
    for (const Step& s : t.steps) {
      require(s.reward.has_value(), ErrorCode::kValidation,
              "expected_reward needs a reward on every step");
      total += *s.reward;
    }
  }
  return samples.mean() * total / static_cast<double>(dataset.size());
}

}  // namespace popr
