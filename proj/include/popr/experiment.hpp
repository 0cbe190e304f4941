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
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "popr/analysis.hpp"
#include "popr/config.hpp"
#include "popr/core.hpp"
#include "popr/external_policy.hpp"
#include "popr/io.hpp"
#include "popr/metrics.hpp"
#include "popr/parallel.hpp"
#include "popr/sampler.hpp"
#include "popr/toyenv.hpp"

// End-to-end pipelines shared by the CLI and the integration tests.
namespace popr::experiment {

using PolicySet = std::vector<std::unique_ptr<Policy>>;

inline std::vector<const Policy*> view(const PolicySet& set) {
  std::vector<const Policy*> out;
  for (const auto& p : set) out.push_back(p.get());
  return out;
}

inline std::unique_ptr<Policy> make_policy(const io::PolicyEntry& e,
                                           const ActionSpace& space,
                                           int default_n_states) {
  const int n = e.n_states > 0 ? e.n_states : default_n_states;
  if (e.kind == "toy-expert") return std::make_unique<toy::ExpertPolicy>(n, e.id);
  if (e.kind == "toy-mixture")
    return std::make_unique<toy::MixturePolicy>(
        toy::MixturePolicySpec{e.epsilon, e.seed}, n, e.id);
  if (e.kind == "constant") {
    Action a;
    if (e.action.is_number_integer())
      a = e.action.get<int>();
    else
      a = e.action.get<std::vector<double>>();
    return std::make_unique<ConstantPolicy>(e.id, space, std::move(a));
  }
  return std::make_unique<ExternalPolicy>(e.id, e.command, space, e.timeout_ms);
}

inline PolicySet make_policies(const std::vector<io::PolicyEntry>& entries,
                               const ActionSpace& space, int default_n_states) {
  PolicySet out;
  for (const auto& e : entries) {
    try {
      out.push_back(make_policy(e, space, default_n_states));
    } catch (const Error& err) {
      throw Error(err.code(), "policy '" + e.id + "': " + err.what());
    }
  }
  return out;
}

// Toy mixture family, one entry per epsilon, ids "eps=<value>".
inline std::vector<io::PolicyEntry> epsilon_family(
    const std::vector<double>& epsilons, std::uint64_t seed = 0) {
  std::vector<io::PolicyEntry> out;
  for (double eps : epsilons) {
    io::PolicyEntry e;
    char buf[32];
    std::snprintf(buf, sizeof buf, "eps=%g", eps);
    e.id = buf;
    e.kind = "toy-mixture";
    e.epsilon = eps;
    e.seed = derive_seed(seed, e.id);
    out.push_back(std::move(e));
  }
  return out;
}

// Ground truth by mean episodic return over seeded ToyEnv rollouts.
inline Ordering toy_ground_truth(const std::vector<const Policy*>& policies,
                                 const toy::ToyEnvConfig& config,
                                 int episodes) {
  std::map<std::string, double> returns;
  for (const Policy* p : policies)
    returns[p->id()] = toy::mean_episode_return(config, *p, episodes);
  return Ordering(order_by_score(returns));
}

struct RankOutcome {
  std::vector<PosteriorSamples> posteriors;
  RankingReport ranking;
  PairwiseMatrix pairwise;
};

inline RankingReport rank_posteriors(const std::vector<PosteriorSamples>& post,
                                     const AnalysisConfig& a) {
  switch (a.mode) {
    case RankMode::kWorstTail: return rank_tail(post, TailSide::kWorst, a.tail);
    case RankMode::kBestTail: return rank_tail(post, TailSide::kBest, a.tail);
    default: return rank_mean(post);
  }
}

inline RankOutcome rank(const ExpertDataset& dataset,
                        const std::vector<const Policy*>& policies,
                        const RunConfig& config) {
  RankOutcome out;
  out.posteriors = run_all(dataset, policies, config.sampler_config());
  out.ranking = rank_posteriors(out.posteriors, config.analysis);
  out.pairwise = pairwise(out.posteriors, config.analysis.pairing);
  return out;
}

// Report artifacts for a ranking run, staged for an atomic commit.
inline void stage_rank_outputs(io::StagedOutputs& staged,
                               const std::filesystem::path& dir,
                               const RankOutcome& r, const RunConfig& config,
                               const Json& extra = Json::object()) {
  io::Report rep{r.ranking, r.pairwise, r.posteriors, to_json(config), extra};
  staged.add(dir / "report.json", io::report_json(rep).dump(2) + "\n");
  staged.add(dir / "ranking.csv", io::ranking_csv(r.ranking));
  staged.add(dir / "ordering.txt", io::ordering_text(r.ranking.ordering));
  staged.add(dir / "samples.csv", io::samples_csv(r.posteriors));
  staged.add(dir / "pairwise.csv", io::pairwise_csv(r.pairwise));
  staged.add(dir / "pairwise_matrix.csv", io::pairwise_matrix_csv(r.pairwise));
  staged.add(dir / "trace.csv", io::trace_csv(r.posteriors));
  staged.add(dir / "diagnostics.csv", io::diagnostics_csv(r.posteriors));
  staged.add(dir / "config.json", to_json(config).dump(2) + "\n");
}

/// Dataset with round(fraction * N) trajectories from `expert` and the rest
/// from `noise`, N = expert.size(). Trajectories are chosen by a seeded
/// draw without replacement; chosen expert trajectories come first, each
/// group in its original order.
inline ExpertDataset mix_datasets(const ExpertDataset& expert,
                                  const ExpertDataset& noise, double fraction,
                                  std::uint64_t seed) {
  require(fraction >= 0.0 && fraction <= 1.0, ErrorCode::kValidation,
          "expert fraction must lie in [0,1]");
  require(expert.action_space == noise.action_space, ErrorCode::kValidation,
          "expert and noise datasets use different action spaces");
  const std::size_t n = expert.size();
  const auto k = static_cast<std::size_t>(std::llround(fraction * n));
  require(noise.size() >= n - k, ErrorCode::kValidation,
          "noise dataset has " + std::to_string(noise.size()) +
              " trajectories, need " + std::to_string(n - k));
  Rng rng(seed);
  auto choose = [&](std::size_t total, std::size_t count) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  ExpertDataset out{expert.action_space, {}};
  for (std::size_t i : choose(n, k)) out.trajectories.push_back(expert.trajectories[i]);
  for (std::size_t i : choose(noise.size(), n - k))
    out.trajectories.push_back(noise.trajectories[i]);
  return out;
}

struct MultiExpertOutcome {
  std::vector<std::vector<PosteriorSamples>> per_expert;
  std::vector<PosteriorSamples> aggregated;
  RankingReport ranking;
  PairwiseMatrix pairwise;
};

inline MultiExpertOutcome multi_expert(
    const std::vector<ExpertDataset>& datasets,
    const std::vector<const Policy*>& policies, const RunConfig& config,
    int top_r) {
  require(!datasets.empty(), ErrorCode::kValidation, "no expert datasets");
  require(top_r >= 1 && static_cast<std::size_t>(top_r) <= datasets.size(),
          ErrorCode::kValidation,
          "top_r must lie in [1, " + std::to_string(datasets.size()) +
              "], got " + std::to_string(top_r));
  MultiExpertOutcome out;
  for (std::size_t m = 0; m < datasets.size(); ++m) {
    // Expert 0 keeps the run seed so a single dataset reproduces rank().
    RunConfig c = config;
    if (m > 0) c.seed = derive_seed(config.seed, "expert-" + std::to_string(m));
    out.per_expert.push_back(run_all(datasets[m], policies, c.sampler_config()));
  }
  out.aggregated = multi_expert_aggregate(out.per_expert, top_r);
  out.ranking = rank_posteriors(out.aggregated, config.analysis);
  out.pairwise = pairwise(out.aggregated, config.analysis.pairing);
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps over one experimental axis on ToyEnv.

enum class SweepAxis { kDataSize, kQuality, kIterations, kDiscrepancy };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "datasize") return SweepAxis::kDataSize;
  if (s == "quality") return SweepAxis::kQuality;
  if (s == "iterations") return SweepAxis::kIterations;
  if (s == "discrepancy") return SweepAxis::kDiscrepancy;
  fail(ErrorCode::kValidation, "unknown sweep axis '" + s +
                                   "' (expected datasize, quality, iterations, "
                                   "discrepancy)");
}

struct SweepRow {
  std::string axis_value;
  int rep;
  double ndcg;
  double srcc;
};

struct SweepCell {
  std::string axis_value;
  double ndcg_mean, ndcg_std, srcc_mean, srcc_std;
};

inline std::uint64_t rep_seed(std::uint64_t seed, int rep) {
  return derive_seed(seed, "rep-" + std::to_string(rep));
}

inline std::string axis_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// One ranking run on a freshly generated ToyEnv expert dataset.
struct SweepRun {
  RunConfig config;
  int episodes;
  std::optional<double> expert_fraction;
};

inline SweepRow run_sweep_cell(const SweepRun& run,
                               const std::vector<const Policy*>& policies,
                               const Ordering& truth, int rep,
                               const std::string& label) {
  RunConfig c = run.config;
  c.seed = rep_seed(run.config.seed, rep);
  const toy::ToyEnvConfig env = c.toy_config();
  const toy::ExpertPolicy expert(env.n_states);
  ExpertDataset data = toy::generate_dataset(env, expert, run.episodes);
  if (run.expert_fraction) {
    toy::ToyEnvConfig noise_env = env;
    noise_env.seed = derive_seed(c.seed, "noise");
    const toy::MixturePolicy noise(
        {c.sweep.noise_epsilon, derive_seed(c.seed, "noise-policy")},
        env.n_states, "noise");
    const ExpertDataset noisy =
        toy::generate_dataset(noise_env, noise, run.episodes);
    data = mix_datasets(data, noisy, *run.expert_fraction,
                        derive_seed(c.seed, "mix"));
  }
  const RankOutcome r = rank(data, policies, c);
  const Ordering predicted(r.ranking.ordering);
  return {label, rep, ndcg(predicted, truth), srcc(predicted, truth)};
}

inline std::vector<SweepRow> run_sweep(SweepAxis axis, const RunConfig& config,
                                       const std::vector<const Policy*>& policies,
                                       const Ordering& truth) {
  std::vector<std::pair<std::string, SweepRun>> cells;
  const SweepConfig& s = config.sweep;
  switch (axis) {
    case SweepAxis::kDataSize:
      for (int n : s.datasize) {
        require(n >= 1, ErrorCode::kValidation, "dataset sizes must be >= 1");
        cells.push_back({std::to_string(n), {config, n, std::nullopt}});
      }
      break;
    case SweepAxis::kQuality:
      for (double f : s.quality)
        cells.push_back({axis_label(f), {config, config.episodes, f}});
      break;
    case SweepAxis::kIterations:
      for (int it : s.iterations) {
        RunConfig c = config;
        c.sampler.iterations = it;
        c.sampler.thin = std::min(c.sampler.thin, it);
        c.sampler.bootstrap_m = s.iterations_axis_m;
        cells.push_back({std::to_string(it),
                         {c, s.iterations_axis_episodes, std::nullopt}});
      }
      break;
    case SweepAxis::kDiscrepancy:
      for (const auto& name : s.discrepancy) {
        RunConfig c = config;
        c.sampler.energy.kind = parse_discrepancy(name);
        cells.push_back({name, {c, config.episodes, std::nullopt}});
      }
      break;
  }
  for (auto& [_, run] : cells) run.config.validate();
  const auto reps = static_cast<std::size_t>(s.repetitions);
  std::vector<SweepRow> rows(cells.size() * reps);
  parallel_for(rows.size(), [&](std::size_t i) {
    const auto& [label, run] = cells[i / reps];
    rows[i] = run_sweep_cell(run, policies, truth, static_cast<int>(i % reps),
                             label);
  });
  return rows;
}

inline std::vector<SweepCell> summarize(const std::vector<SweepRow>& rows) {
  std::vector<SweepCell> cells;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const SweepRow*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.axis_value)) order.push_back(r.axis_value);
    groups[r.axis_value].push_back(&r);
  }
  auto stats = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0};
  };
  for (const auto& key : order) {
    std::vector<double> n, s;
    for (const SweepRow* r : groups[key]) {
      n.push_back(r->ndcg);
      s.push_back(r->srcc);
    }
    const auto [nm, ns] = stats(n);
    const auto [sm, ss] = stats(s);
    cells.push_back({key, nm, ns, sm, ss});
  }
  return cells;
}

inline std::string sweep_rows_csv(const std::vector<SweepRow>& rows) {
  std::string out = "axis_value,rep,ndcg,srcc\n";
  for (const auto& r : rows)
    out += r.axis_value + "," + std::to_string(r.rep) + "," +
           io::format_double(r.ndcg) + "," + io::format_double(r.srcc) + "\n";
  return out;
}

inline std::string sweep_summary_csv(const std::vector<SweepCell>& cells) {
  std::string out = "axis_value,ndcg_mean,ndcg_std,srcc_mean,srcc_std\n";
  for (const auto& c : cells)
    out += c.axis_value + "," + io::format_double(c.ndcg_mean) + "," +
           io::format_double(c.ndcg_std) + "," + io::format_double(c.srcc_mean) +
           "," + io::format_double(c.srcc_std) + "\n";
  return out;
}

}  // namespace popr::experiment
