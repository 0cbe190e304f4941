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

#include "popr/analysis.hpp"

#include <gtest/gtest.h>

#include <random>

#include "popr/experiment.hpp"
#include "popr/toyenv.hpp"
#include "test_util.hpp"

namespace popr {
namespace {

using testing::posterior;
using Samples = std::vector<PosteriorSamples>;

TEST(RankMeanTest, TwoPointMeans) {
  const Samples s{posterior("B", {0.1, 0.1}), posterior("A", {0.9, 0.9})};
  const RankingReport r = rank_mean(s);
  EXPECT_EQ(r.ordering, (std::vector<std::string>{"A", "B"}));
  EXPECT_DOUBLE_EQ(r.scores.at("A"), 0.9);
  EXPECT_DOUBLE_EQ(r.scores.at("B"), 0.1);
  EXPECT_EQ(r.mode, RankMode::kMean);
}

TEST(RankMeanTest, SinglePolicy) {
  const Samples s{posterior("only", {0.4, 0.6})};
  EXPECT_EQ(rank_mean(s).ordering, std::vector<std::string>{"only"});
}

TEST(RankMeanTest, TiesBrokenById) {
  const Samples s{posterior("b", {0.5}), posterior("c", {0.5}),
                  posterior("a", {0.5})};
  EXPECT_EQ(rank_mean(s).ordering, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(RankMeanTest, EmptySampleSetNamesPolicy) {
  const Samples s{posterior("A", {0.5}), posterior("hollow", {})};
  try {
    rank_mean(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("hollow"), std::string::npos);
  }
}

TEST(RankMeanTest, ReportsSpread) {
  const Samples s{posterior("A", {0.2, 0.4})};
  EXPECT_NEAR(rank_mean(s).spread.at("A"), std::sqrt(0.02), 1e-12);
}

TEST(RankTailTest, WholeSampleEqualsMean) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  Samples s;
  for (int k = 0; k < 5; ++k) {
    std::vector<double> v(50);
    for (double& x : v) x = u(rng);
    s.push_back(posterior("p" + std::to_string(k), v));
  }
  const auto mean = rank_mean(s);
  for (TailSide side : {TailSide::kWorst, TailSide::kBest}) {
    const auto tail = rank_tail(s, side, 1.0);
    EXPECT_EQ(tail.ordering, mean.ordering);
    for (const auto& [id, v] : mean.scores)
      EXPECT_NEAR(tail.scores.at(id), v, 1e-12);
  }
}

TEST(RankTailTest, HandSelectedTails) {
  const Samples s{posterior("A", {0.1, 0.9}), posterior("B", {0.5, 0.5})};
  const auto worst = rank_tail(s, TailSide::kWorst, 0.5);
  EXPECT_DOUBLE_EQ(worst.scores.at("A"), 0.1);
  EXPECT_DOUBLE_EQ(worst.scores.at("B"), 0.5);
  EXPECT_EQ(worst.ordering, (std::vector<std::string>{"B", "A"}));
  const auto best = rank_tail(s, TailSide::kBest, 0.5);
  EXPECT_EQ(best.ordering, (std::vector<std::string>{"A", "B"}));
}

TEST(RankTailTest, CeilingTailSize) {
  std::vector<double> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i / 100.0;
  const Samples s{posterior("A", v)};
  const auto r = rank_tail(s, TailSide::kWorst, 0.05);
  EXPECT_EQ(r.samples_used.at("A"), 3u);
  EXPECT_NEAR(r.scores.at("A"), 0.01, 1e-12);
  EXPECT_EQ(rank_tail(s, TailSide::kWorst, 0.1).samples_used.at("A"), 5u);
}

TEST(RankTailTest, RejectsBadFraction) {
  const Samples s{posterior("A", {0.5})};
  EXPECT_THROW(rank_tail(s, TailSide::kWorst, 0.0), Error);
  EXPECT_THROW(rank_tail(s, TailSide::kWorst, 1.5), Error);
}

TEST(PairwiseTest, FullDominance) {
  const Samples s{posterior("A", {0.9, 0.8}), posterior("B", {0.1, 0.2})};
  const auto m = pairwise(s);
  EXPECT_DOUBLE_EQ(m.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(m.at(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(m.at(0, 0), 0.0);
}

TEST(PairwiseTest, TiesUseStrictIndicator) {
  const Samples s{posterior("A", {0.3, 0.6}), posterior("B", {0.3, 0.6})};
  const auto m = pairwise(s);
  EXPECT_DOUBLE_EQ(m.at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(m.at(1, 0), 0.0);
}

TEST(PairwiseTest, IndexPairedCount) {
  const Samples s{posterior("A", {0.3, 0.7, 0.9}),
                  posterior("B", {0.5, 0.6, 0.95})};
  EXPECT_NEAR(pairwise(s).at(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(PairwiseTest, UnequalLengths) {
  const Samples s{posterior("A", {0.3, 0.7}), posterior("B", {0.5})};
  EXPECT_THROW(pairwise(s), Error);
  // All-pairs: 0.7 > 0.5 only.
  EXPECT_DOUBLE_EQ(pairwise(s, Pairing::kAllPairs).at(0, 1), 0.5);
}

TEST(PairwiseTest, AntisymmetryWithoutTies) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  Samples s;
  for (int k = 0; k < 4; ++k) {
    std::vector<double> v(50);
    for (double& x : v) x = u(rng);
    s.push_back(posterior("p" + std::to_string(k), v));
  }
  for (Pairing pairing : {Pairing::kIndexPaired, Pairing::kAllPairs}) {
    const auto m = pairwise(s, pairing);
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t l = 0; l < 4; ++l)
        if (k != l) EXPECT_NEAR(m.at(k, l) + m.at(l, k), 1.0, 1e-12);
  }
}

TEST(PairwiseTest, UnanimousRowSumsMatchMeanOrdering) {
  const Samples s{posterior("mid", {0.5, 0.55, 0.45}),
                  posterior("low", {0.1, 0.2, 0.15}),
                  posterior("high", {0.9, 0.85, 0.8})};
  const auto m = pairwise(s);
  std::map<std::string, double> rows;
  for (std::size_t k = 0; k < m.size(); ++k) {
    double sum = 0;
    for (std::size_t l = 0; l < m.size(); ++l) {
      EXPECT_TRUE(m.at(k, l) == 0.0 || m.at(k, l) == 1.0);
      sum += m.at(k, l);
    }
    rows[m.policy_ids[k]] = sum;
  }
  EXPECT_EQ(order_by_score(rows), rank_mean(s).ordering);
}

class AgreeRankTest : public ::testing::Test {
 protected:
  toy::ExpertPolicy expert_{10};
  ExpertDataset data_ = [this] {
    toy::ToyEnvConfig env;
    env.seed = 4;
    return toy::generate_dataset(env, expert_, 20);
  }();
};

TEST_F(AgreeRankTest, ExpertScoresOneAndRanksFirst) {
  const toy::MixturePolicy random({1.0, 3}, 10, "random");
  const auto r = agree_rank(data_, {&expert_, &random});
  EXPECT_DOUBLE_EQ(r.scores.at("toy-expert"), 1.0);
  EXPECT_EQ(r.ordering.front(), "toy-expert");
  EXPECT_NEAR(r.scores.at("random"), 0.5, 0.05);
  EXPECT_TRUE(r.spread.empty());
}

TEST_F(AgreeRankTest, ContinuousIdentityScoresZero) {
  ExpertDataset d{ActionSpace::continuous(2), {Trajectory{}}};
  for (int i = 0; i < 4; ++i)
    d.trajectories[0].steps.push_back(
        {{double(i)}, std::vector<double>{1.0, -1.0}, std::nullopt, {0.0}});
  const ConstantPolicy same("same", d.action_space, std::vector<double>{1.0, -1.0});
  const ConstantPolicy off("off", d.action_space, std::vector<double>{4.0, 3.0});
  const auto r = agree_rank(d, {&off, &same});
  EXPECT_DOUBLE_EQ(r.scores.at("same"), 0.0);
  EXPECT_DOUBLE_EQ(r.scores.at("off"), -5.0);
  EXPECT_EQ(r.ordering.front(), "same");
}

TEST_F(AgreeRankTest, InvariantToTrajectoryOrder) {
  const toy::MixturePolicy m({0.5, 3}, 10, "m");
  ExpertDataset shuffled = data_;
  std::mt19937_64 rng(0);
  std::shuffle(shuffled.trajectories.begin(), shuffled.trajectories.end(), rng);
  EXPECT_DOUBLE_EQ(agree_rank(data_, {&m}, 7).scores.at("m"),
                   agree_rank(shuffled, {&m}, 7).scores.at("m"));
}

TEST_F(AgreeRankTest, ActionSpaceMismatch) {
  const ConstantPolicy c("c", ActionSpace::discrete(4), 3);
  EXPECT_THROW(agree_rank(data_, {&c}), Error);
}

PosteriorSamples shifted(const std::string& id, double base, int n = 10) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(base + i * 1e-3);
  return posterior(id, v);
}

TEST(MultiExpertTest, SingleExpertIsIdentity) {
  const Samples one{shifted("A", 0.5), shifted("B", 0.2)};
  const auto agg = multi_expert_aggregate({one}, 1);
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_EQ(agg[0].samples, one[0].samples);
  EXPECT_EQ(agg[1].samples, one[1].samples);
}

TEST(MultiExpertTest, ConcatenatesTopExperts) {
  std::vector<Samples> per;
  for (int m = 0; m < 5; ++m)
    per.push_back({shifted("A", 0.1 * m), shifted("B", 0.5 - 0.1 * m)});
  const auto agg = multi_expert_aggregate(per, 3);
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_EQ(agg[0].samples.size(), 30u);
  // A's best experts are 4, 3, 2 (in that order).
  std::vector<double> expected;
  for (int m : {4, 3, 2})
    expected.insert(expected.end(), per[m][0].samples.begin(),
                    per[m][0].samples.end());
  EXPECT_EQ(agg[0].samples, expected);
  EXPECT_NEAR(agg[1].mean(), (0.5 + 0.4 + 0.3) / 3 + 0.0045, 1e-12);
}

TEST(MultiExpertTest, IdenticalExpertsRepeatSamples) {
  const Samples one{shifted("A", 0.5), shifted("B", 0.2)};
  const auto agg = multi_expert_aggregate({one, one, one}, 2);
  EXPECT_EQ(agg[0].samples.size(), 20u);
  EXPECT_NEAR(agg[0].mean(), one[0].mean(), 1e-12);
  EXPECT_EQ(rank_mean(agg).ordering, rank_mean(one).ordering);
}

TEST(MultiExpertTest, TopROutOfRange) {
  const Samples one{shifted("A", 0.5)};
  EXPECT_THROW(multi_expert_aggregate({one, one}, 3), Error);
  EXPECT_THROW(multi_expert_aggregate({one}, 0), Error);
}

ExpertDataset returns_dataset(std::initializer_list<std::vector<double>> rewards) {
  ExpertDataset d{ActionSpace::discrete(2), {}};
  for (const auto& rs : rewards) {
    Trajectory t;
    for (double r : rs) t.steps.push_back({{0.0}, 0, r, {0.0}});
    d.trajectories.push_back(t);
  }
  return d;
}

TEST(ExpectedRewardTest, Examples) {
  const ExpertDataset d = returns_dataset({{40, 60}, {200}});
  EXPECT_DOUBLE_EQ(expected_reward(d, posterior("p", {1.0, 1.0})), 150.0);
  EXPECT_DOUBLE_EQ(expected_reward(d, posterior("p", {0.0})), 0.0);
  EXPECT_DOUBLE_EQ(expected_reward(d, posterior("p", {0.5})), 75.0);
}

TEST(ExpectedRewardTest, MissingReward) {
  ExpertDataset d = returns_dataset({{1, 2}});
  d.trajectories[0].steps[1].reward.reset();
  EXPECT_THROW(expected_reward(d, posterior("p", {0.5})), Error);
}

TEST(RankingPipelineTest, EpsilonFamilyOrdering) {
  RunConfig cfg;
  cfg.seed = 12;
  const auto policies = experiment::make_policies(
      experiment::epsilon_family({0, 0.2, 0.4, 0.6, 0.8, 1.0}, cfg.seed),
      toy::toy_action_space(), 10);
  const ExpertDataset d =
      toy::generate_dataset(cfg.toy_config(), toy::ExpertPolicy(10), 20);
  const auto out = experiment::rank(d, experiment::view(policies), cfg);
  EXPECT_EQ(out.ranking.ordering,
            (std::vector<std::string>{"eps=0", "eps=0.2", "eps=0.4", "eps=0.6",
                                      "eps=0.8", "eps=1"}));
}

}  // namespace
}  // namespace popr
