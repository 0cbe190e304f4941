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

// popr: offline policy ranking from expert trajectories.
//
// Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "popr/experiment.hpp"

namespace fs = std::filesystem;
using namespace popr;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// "1.0", "-1.0", "0.796708": at most 6 decimals, at least one.
std::string short_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.push_back('0');
  if (s == "-0.0") s = "0.0";
  return s;
}

RunConfig base_config(const std::optional<std::string>& path) {
  return path ? load_run_config(*path) : RunConfig{};
}

// "expert" or "mixture:<eps>".
std::unique_ptr<Policy> toy_policy_from_flag(const std::string& flag,
                                             int n_states,
                                             std::uint64_t seed) {
  if (flag == "expert") return toy::expert_policy(n_states);
  const std::string prefix = "mixture:";
  if (flag.rfind(prefix, 0) == 0) {
    double eps = 0.0;
    try {
      std::size_t used = 0;
      eps = std::stod(flag.substr(prefix.size()), &used);
      if (used != flag.size() - prefix.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      fail(ErrorCode::kValidation, "bad mixture epsilon in '" + flag + "'");
    }
    require(eps >= 0.0 && eps <= 1.0, ErrorCode::kValidation,
            "mixture epsilon must lie in [0,1]");
    return toy::mixture_policy({eps, derive_seed(seed, flag)}, n_states, flag);
  }
  fail(ErrorCode::kValidation,
       "unknown --policy '" + flag + "' (expected expert or mixture:<eps>)");
}

// "0.5", "0,0.5,1" or "start:stop:step".
std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  try {
    if (std::count(text.begin(), text.end(), ':') == 2) {
      const auto a = text.find(':'), b = text.rfind(':');
      const double start = std::stod(text.substr(0, a));
      const double stop = std::stod(text.substr(a + 1, b - a - 1));
      const double step = std::stod(text.substr(b + 1));
      require(step > 0, ErrorCode::kValidation, "fraction step must be > 0");
      const auto n = static_cast<int>(std::floor((stop - start) / step + 1e-9));
      for (int i = 0; i <= n; ++i)
        out.push_back(std::round((start + i * step) * 1e9) / 1e9);
    } else {
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    }
  } catch (const std::invalid_argument&) {
    fail(ErrorCode::kValidation, "cannot parse --fraction '" + text + "'");
  }
  require(!out.empty(), ErrorCode::kValidation, "no fractions given");
  for (double f : out)
    require(f >= 0.0 && f <= 1.0, ErrorCode::kValidation,
            "fractions must lie in [0,1]");
  return out;
}

void apply_common(RunConfig& c, const std::optional<std::uint64_t>& seed,
                  const std::optional<std::string>& mode,
                  const std::optional<double>& tail) {
  if (seed) c.seed = *seed;
  if (mode) c.analysis.mode = parse_rank_mode(*mode);
  if (tail) c.analysis.tail = *tail;
  c.validate();
}

experiment::PolicySet load_policies(const std::optional<std::string>& manifest,
                                    const RunConfig& c,
                                    const ActionSpace& space) {
  const auto entries = manifest ? io::read_manifest(*manifest)
                                : experiment::epsilon_family(
                                      c.sweep.epsilons, c.seed);
  return experiment::make_policies(entries, space, c.toy.n_states);
}

void print_ranking(const RankingReport& r,
                   const std::vector<PosteriorSamples>& post) {
  std::map<std::string, const PosteriorSamples*> by_id;
  for (const auto& p : post) by_id[p.policy_id] = &p;
  std::printf("%-4s %-24s %-10s %-10s %-10s\n", "rank", "policy", "score",
              "post_std", "accept");
  for (std::size_t i = 0; i < r.ordering.size(); ++i) {
    const auto& id = r.ordering[i];
    const auto* p = by_id.count(id) ? by_id[id] : nullptr;
    std::printf("%-4zu %-24s %-10.4f %-10.4f %-10.3f\n", i + 1, id.c_str(),
                r.scores.at(id), r.spread.count(id) ? r.spread.at(id) : 0.0,
                p ? p->acceptance_rate : 0.0);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"popr: probabilistic offline policy ranking"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;

  // gen-toy
  auto* gen = app.add_subcommand("gen-toy", "generate a ToyEnv ring dataset");
  std::optional<int> g_states, g_episodes, g_len;
  std::optional<double> g_slip;
  std::string g_policy = "expert", g_out;
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--states", g_states, "ring size (default 10)");
  gen->add_option("--episodes", g_episodes, "trajectories (default 20)");
  gen->add_option("--len", g_len, "steps per trajectory (default 100)");
  gen->add_option("--slip", g_slip, "slip probability (default 0.1)");
  gen->add_option("--policy", g_policy, "expert | mixture:<eps>");
  gen->add_option("--seed", seed, "master seed");
  gen->add_option("--out", g_out, "output dataset (.jsonl)")->required();

  // rank
  auto* rank = app.add_subcommand("rank", "rank candidate policies");
  std::string r_data, r_out;
  std::optional<std::string> r_policies, r_mode;
  std::optional<double> r_tail;
  rank->add_option("--data", r_data, "expert dataset")
      ->required()
      ->check(CLI::ExistingFile);
  rank->add_option("--policies", r_policies,
                   "policy manifest JSON (default: epsilon family)")
      ->check(CLI::ExistingFile);
  rank->add_option("--config", config_path, "run config JSON")
      ->check(CLI::ExistingFile);
  rank->add_option("--mode", r_mode, "mean | worst | best");
  rank->add_option("--tail", r_tail, "tail fraction for worst/best");
  rank->add_option("--seed", seed, "master seed");
  rank->add_option("--out", r_out, "output directory")->required();

  // mix-data
  auto* mix = app.add_subcommand("mix-data",
                                 "mix expert and non-expert trajectories");
  std::string m_expert, m_noise = "mixture:1.0", m_fraction, m_out;
  std::optional<int> m_states, m_len;
  std::optional<double> m_slip;
  mix->add_option("--expert", m_expert, "expert dataset")
      ->required()
      ->check(CLI::ExistingFile);
  mix->add_option("--noise", m_noise,
                  "noise dataset (.jsonl), policy manifest (.json) or mixture:<eps>");
  mix->add_option("--fraction", m_fraction,
                  "expert fraction: value, list a,b,c or range start:stop:step")
      ->required();
  mix->add_option("--config", config_path, "run config JSON");
  mix->add_option("--states", m_states, "ring size for generated noise");
  mix->add_option("--len", m_len, "length of generated noise trajectories");
  mix->add_option("--slip", m_slip, "slip probability for generated noise");
  mix->add_option("--seed", seed, "master seed");
  mix->add_option("--out", m_out,
                  "output dataset (one fraction) or directory (several)")
      ->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "sensitivity sweep on ToyEnv");
  std::string s_axis, s_out;
  std::optional<std::string> s_policies, s_truth;
  std::optional<int> s_reps;
  sweep->add_option("--axis", s_axis,
                    "datasize | quality | iterations | discrepancy")
      ->required();
  sweep->add_option("--config", config_path, "run config JSON");
  sweep->add_option("--policies", s_policies,
                    "policy manifest (default: epsilon family)");
  sweep->add_option("--truth", s_truth,
                    "ground-truth ordering (default: ToyEnv rollouts)");
  sweep->add_option("--reps", s_reps, "repetitions (default 5)");
  sweep->add_option("--seed", seed, "master seed");
  sweep->add_option("--out-dir", s_out, "output directory")->required();

  // metrics
  auto* metrics = app.add_subcommand("metrics", "NDCG and SRCC of an ordering");
  std::string t_pred, t_truth;
  metrics->add_option("--predicted", t_pred, "predicted ordering")
      ->required()
      ->check(CLI::ExistingFile);
  metrics->add_option("--truth", t_truth, "true ordering")
      ->required()
      ->check(CLI::ExistingFile);

  // multi-expert
  auto* multi = app.add_subcommand("multi-expert",
                                   "rank against several expert datasets");
  std::vector<std::string> x_data;
  std::optional<std::string> x_policies, x_mode;
  std::optional<int> x_top_r;
  std::optional<double> x_tail;
  std::string x_out;
  multi->add_option("--datasets", x_data, "expert datasets")
      ->required()
      ->check(CLI::ExistingFile);
  multi->add_option("--policies", x_policies, "policy manifest")
      ->check(CLI::ExistingFile);
  multi->add_option("--top-r", x_top_r, "experts aggregated per policy");
  multi->add_option("--config", config_path, "run config JSON");
  multi->add_option("--mode", x_mode, "mean | worst | best");
  multi->add_option("--tail", x_tail, "tail fraction for worst/best");
  multi->add_option("--seed", seed, "master seed");
  multi->add_option("--out", x_out, "output directory")->required();

  // truth
  auto* truth = app.add_subcommand(
      "truth", "ground-truth ordering from ToyEnv rollouts");
  std::optional<std::string> u_policies;
  std::optional<int> u_episodes;
  std::string u_out;
  truth->add_option("--policies", u_policies, "policy manifest");
  truth->add_option("--config", config_path, "run config JSON");
  truth->add_option("--episodes", u_episodes, "rollouts per policy");
  truth->add_option("--seed", seed, "master seed");
  truth->add_option("--out", u_out, "ordering file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    RunConfig cfg = base_config(config_path);

    if (*gen) {
      apply_common(cfg, seed, std::nullopt, std::nullopt);
      if (g_states) cfg.toy.n_states = *g_states;
      if (g_slip) cfg.toy.slip_prob = *g_slip;
      if (g_len) cfg.toy.episode_length = *g_len;
      if (g_episodes) cfg.episodes = *g_episodes;
      cfg.validate();
      const auto env = cfg.toy_config();
      const auto policy = toy_policy_from_flag(g_policy, env.n_states, cfg.seed);
      const auto d = toy::generate_dataset(env, *policy, cfg.episodes);
      io::write_dataset(d, g_out);
      std::printf("wrote %zu trajectories x %d steps to %s\n", d.size(),
                  env.episode_length, g_out.c_str());
      return 0;
    }

    if (*rank) {
      apply_common(cfg, seed, r_mode, r_tail);
      const ExpertDataset data = io::read_dataset(r_data);
      const auto policies = load_policies(r_policies, cfg, data.action_space);
      const auto result =
          experiment::rank(data, experiment::view(policies), cfg);
      io::StagedOutputs staged;
      experiment::stage_rank_outputs(staged, r_out, result, cfg,
                                     {{"dataset", r_data}});
      staged.commit();
      print_ranking(result.ranking, result.posteriors);
      return 0;
    }

    if (*mix) {
      apply_common(cfg, seed, std::nullopt, std::nullopt);
      if (m_states) cfg.toy.n_states = *m_states;
      if (m_len) cfg.toy.episode_length = *m_len;
      if (m_slip) cfg.toy.slip_prob = *m_slip;
      cfg.validate();
      const std::vector<double> fractions = parse_fractions(m_fraction);
      const ExpertDataset expert = io::read_dataset(m_expert);
      ExpertDataset noise{expert.action_space, {}};
      auto env = cfg.toy_config();
      env.seed = derive_seed(cfg.seed, "noise");
      const int count = static_cast<int>(expert.size());
      if (fs::path(m_noise).extension() == ".json") {
        // A policy manifest: its first entry generates the noise trajectories.
        const auto entries = io::read_manifest(m_noise);
        require(!entries.empty(), ErrorCode::kValidation,
                "noise manifest has no policies");
        const auto p = experiment::make_policy(entries.front(),
                                               toy::toy_action_space(),
                                               env.n_states);
        noise = toy::generate_dataset(env, *p, count);
      } else if (fs::exists(m_noise)) {
        noise = io::read_dataset(m_noise);
      } else {
        const auto p = toy_policy_from_flag(m_noise, env.n_states, cfg.seed);
        noise = toy::generate_dataset(env, *p, count);
      }
      io::StagedOutputs staged;
      for (double f : fractions) {
        const auto mixed = experiment::mix_datasets(
            expert, noise, f, derive_seed(cfg.seed, "mix"));
        validate(mixed);
        const fs::path path =
            fractions.size() == 1
                ? fs::path(m_out)
                : fs::path(m_out) / ("mix_f" + experiment::axis_label(f) + ".jsonl");
        staged.add(path, io::dataset_to_string(mixed));
      }
      staged.commit();
      std::printf("wrote %zu dataset(s)\n", fractions.size());
      return 0;
    }

    if (*sweep) {
      apply_common(cfg, seed, std::nullopt, std::nullopt);
      if (s_reps) cfg.sweep.repetitions = *s_reps;
      cfg.validate();
      const auto axis = experiment::parse_axis(s_axis);
      const auto policies =
          load_policies(s_policies, cfg, toy::toy_action_space());
      const auto view = experiment::view(policies);
      const Ordering gt =
          s_truth ? io::read_ordering(*s_truth)
                  : experiment::toy_ground_truth(view, cfg.toy_config(),
                                                 cfg.sweep.truth_episodes);
      const auto rows = experiment::run_sweep(axis, cfg, view, gt);
      const auto cells = experiment::summarize(rows);
      io::StagedOutputs staged;
      const fs::path dir = s_out;
      staged.add(dir / ("sweep_" + s_axis + ".csv"),
                 experiment::sweep_rows_csv(rows));
      staged.add(dir / ("sweep_" + s_axis + "_summary.csv"),
                 experiment::sweep_summary_csv(cells));
      staged.add(dir / "truth.txt", io::ordering_text(gt.items()));
      staged.add(dir / "config.json", to_json(cfg).dump(2) + "\n");
      staged.commit();
      std::printf("%-16s %-10s %-10s %-10s %-10s\n", "axis_value", "ndcg",
                  "ndcg_std", "srcc", "srcc_std");
      for (const auto& c : cells)
        std::printf("%-16s %-10.4f %-10.4f %-10.4f %-10.4f\n",
                    c.axis_value.c_str(), c.ndcg_mean, c.ndcg_std, c.srcc_mean,
                    c.srcc_std);
      return 0;
    }

    if (*metrics) {
      const Ordering p = io::read_ordering(t_pred);
      const Ordering t = io::read_ordering(t_truth);
      std::printf("ndcg=%s srcc=%s\n", short_number(ndcg(p, t)).c_str(),
                  short_number(srcc(p, t)).c_str());
      return 0;
    }

    if (*multi) {
      apply_common(cfg, seed, x_mode, x_tail);
      if (x_top_r) cfg.top_r = *x_top_r;
      std::vector<ExpertDataset> datasets;
      for (const auto& path : x_data) datasets.push_back(io::read_dataset(path));
      for (const auto& d : datasets)
        require(d.action_space == datasets[0].action_space,
                ErrorCode::kValidation,
                "expert datasets use different action spaces");
      const auto policies =
          load_policies(x_policies, cfg, datasets[0].action_space);
      const auto r = experiment::multi_expert(
          datasets, experiment::view(policies), cfg, cfg.top_r);
      io::StagedOutputs staged;
      experiment::stage_rank_outputs(
          staged, x_out, {r.aggregated, r.ranking, r.pairwise}, cfg,
          {{"datasets", x_data}, {"top_r", cfg.top_r}});
      staged.commit();
      print_ranking(r.ranking, r.aggregated);
      return 0;
    }

    if (*truth) {
      apply_common(cfg, seed, std::nullopt, std::nullopt);
      const auto policies =
          load_policies(u_policies, cfg, toy::toy_action_space());
      const Ordering gt = experiment::toy_ground_truth(
          experiment::view(policies), cfg.toy_config(),
          u_episodes.value_or(cfg.sweep.truth_episodes));
      io::write_file_atomic(u_out, io::ordering_text(gt.items()));
      for (const auto& id : gt.items()) std::printf("%s\n", id.c_str());
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "popr: %s\n", e.what());
    return e.is_validation() ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "popr: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
