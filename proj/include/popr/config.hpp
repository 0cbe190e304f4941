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

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "popr/analysis.hpp"
#include "popr/energy.hpp"
#include "popr/error.hpp"
#include "popr/sampler.hpp"
#include "popr/toyenv.hpp"

namespace popr {

using Json = nlohmann::ordered_json;

struct AnalysisConfig {
  RankMode mode = RankMode::kMean;
  double tail = 0.05;
  Pairing pairing = Pairing::kIndexPaired;
};

struct SweepConfig {
  int repetitions = 5;
  std::vector<int> datasize{2, 10, 20, 50, 70, 100};
  std::vector<double> quality{0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                              0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> iterations{50, 100, 200, 500, 1000};
  std::vector<std::string> discrepancy{"js", "kl", "mmd-rbf", "mmd-multiscale"};
  std::vector<double> epsilons{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  double noise_epsilon = 1.0;  // non-expert mixer for the quality axis
  int truth_episodes = 1000;   // rollouts behind the ground-truth ordering
  int iterations_axis_episodes = 2;
  int iterations_axis_m = 2;
};

// Every field defaults to the published hyperparameters; the resolved
// config is echoed into every output artifact.
struct RunConfig {
  std::uint64_t seed = 0;
  SamplerConfig sampler{};
  toy::ToyEnvConfig toy{};
  int episodes = 20;
  AnalysisConfig analysis{};
  SweepConfig sweep{};
  int top_r = 3;

  // Sampler config carrying the run seed.
  SamplerConfig sampler_config() const {
    SamplerConfig c = sampler;
    c.seed = seed;
    return c;
  }

  toy::ToyEnvConfig toy_config() const {
    toy::ToyEnvConfig c = toy;
    c.seed = seed;
    return c;
  }

  void validate() const {
    sampler_config().validate();
    toy_config().validate();
    require(episodes >= 1, ErrorCode::kValidation, "episodes must be >= 1");
    require(analysis.tail > 0 && analysis.tail <= 1, ErrorCode::kValidation,
            "analysis.tail must lie in (0,1]");
    require(sweep.repetitions >= 1, ErrorCode::kValidation,
            "sweep.repetitions must be >= 1");
    require(top_r >= 1, ErrorCode::kValidation, "top_r must be >= 1");
  }
};

inline std::string pairing_name(Pairing p) {
  return p == Pairing::kIndexPaired ? "index" : "all-pairs";
}

inline RankMode parse_rank_mode(const std::string& s) {
  if (s == "mean") return RankMode::kMean;
  if (s == "worst") return RankMode::kWorstTail;
  if (s == "best") return RankMode::kBestTail;
  fail(ErrorCode::kValidation, "unknown rank mode '" + s +
                                   "' (expected mean, worst, best)");
}

inline Json to_json(const RunConfig& c) {
  Json prior;
  if (const auto* b = std::get_if<BetaPrior>(&c.sampler.prior))
    prior = {{"type", "beta"}, {"a", b->a}, {"b", b->b}};
  else {
    const auto& n = std::get<NormalPrior>(c.sampler.prior);
    prior = {{"type", "normal"}, {"mu", n.mu}, {"sigma", n.sigma}};
  }
  Json proposal;
  if (const auto* rw = std::get_if<LogitRandomWalk>(&c.sampler.proposal))
    proposal = {{"type", "logit-rw"}, {"step", rw->step}};
  else {
    const auto& b = std::get<BetaProposal>(c.sampler.proposal);
    proposal = {{"type", "beta"}, {"alpha", b.alpha}, {"beta", b.beta}};
  }
  const auto& e = c.sampler.energy;
  double bandwidth = MmdRbf{}.bandwidth;
  std::vector<double> bandwidths = MmdMultiscale{}.bandwidths;
  if (const auto* r = std::get_if<MmdRbf>(&e.kind)) bandwidth = r->bandwidth;
  if (const auto* m = std::get_if<MmdMultiscale>(&e.kind))
    bandwidths = m->bandwidths;
  Json j;
  j["version"] = 1;
  j["seed"] = c.seed;
  j["sampler"] = {{"iterations", c.sampler.iterations},
                  {"bootstrap_m", c.sampler.bootstrap_m},
                  {"burnin", c.sampler.burnin},
                  {"thin", c.sampler.thin},
                  {"prior", prior},
                  {"proposal", proposal},
                  {"discrepancy", discrepancy_name(e.kind)},
                  {"smoothing", e.smoothing},
                  {"rbf_bandwidth", bandwidth},
                  {"multiscale_bandwidths", bandwidths},
                  {"continuous_scale", e.continuous_scale}};
  j["toy"] = {{"n_states", c.toy.n_states},
              {"slip_prob", c.toy.slip_prob},
              {"episode_length", c.toy.episode_length}};
  j["episodes"] = c.episodes;
  j["analysis"] = {{"mode", rank_mode_name(c.analysis.mode)},
                   {"tail", c.analysis.tail},
                   {"pairing", pairing_name(c.analysis.pairing)}};
  j["sweep"] = {{"repetitions", c.sweep.repetitions},
                {"datasize", c.sweep.datasize},
                {"quality", c.sweep.quality},
                {"iterations", c.sweep.iterations},
                {"discrepancy", c.sweep.discrepancy},
                {"epsilons", c.sweep.epsilons},
                {"noise_epsilon", c.sweep.noise_epsilon},
                {"truth_episodes", c.sweep.truth_episodes},
                {"iterations_axis_episodes", c.sweep.iterations_axis_episodes},
                {"iterations_axis_m", c.sweep.iterations_axis_m}};
  j["top_r"] = c.top_r;
  return j;
}

namespace detail {

inline void check_keys(const Json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
  require(obj.is_object(), ErrorCode::kValidation, where + " must be an object");
  for (const auto& [k, _] : obj.items())
    require(allowed.count(k) > 0, ErrorCode::kValidation,
            "unknown config key '" + where + "." + k + "'");
}

template <typename T>
void read_field(const Json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation,
         std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig run_config_from_json(const Json& j) {
  using detail::check_keys;
  using detail::read_field;
  RunConfig c;
  check_keys(j, {"version", "seed", "sampler", "toy", "episodes", "analysis",
                 "sweep", "top_r"},
             "config");
  int version = 1;
  read_field(j, "version", version);
  require(version == 1, ErrorCode::kValidation,
          "unsupported config version " + std::to_string(version));
  read_field(j, "seed", c.seed);
  read_field(j, "episodes", c.episodes);
  read_field(j, "top_r", c.top_r);
  if (j.contains("sampler")) {
    const Json& s = j["sampler"];
    check_keys(s, {"iterations", "bootstrap_m", "burnin", "thin", "prior",
                   "proposal", "discrepancy", "smoothing", "rbf_bandwidth",
                   "multiscale_bandwidths", "continuous_scale"},
               "sampler");
    read_field(s, "iterations", c.sampler.iterations);
    read_field(s, "bootstrap_m", c.sampler.bootstrap_m);
    read_field(s, "burnin", c.sampler.burnin);
    read_field(s, "thin", c.sampler.thin);
    read_field(s, "smoothing", c.sampler.energy.smoothing);
    read_field(s, "continuous_scale", c.sampler.energy.continuous_scale);
    if (s.contains("prior")) {
      const Json& p = s["prior"];
      check_keys(p, {"type", "a", "b", "mu", "sigma"}, "sampler.prior");
      std::string type = "beta";
      read_field(p, "type", type);
      if (type == "beta") {
        BetaPrior b;
        read_field(p, "a", b.a);
        read_field(p, "b", b.b);
        c.sampler.prior = b;
      } else if (type == "normal") {
        NormalPrior n;
        read_field(p, "mu", n.mu);
        read_field(p, "sigma", n.sigma);
        c.sampler.prior = n;
      } else {
        fail(ErrorCode::kValidation, "unknown prior type '" + type + "'");
      }
    }
    if (s.contains("proposal")) {
      const Json& p = s["proposal"];
      check_keys(p, {"type", "step", "alpha", "beta"}, "sampler.proposal");
      std::string type = "logit-rw";
      read_field(p, "type", type);
      if (type == "logit-rw") {
        LogitRandomWalk rw;
        read_field(p, "step", rw.step);
        c.sampler.proposal = rw;
      } else if (type == "beta") {
        BetaProposal b;
        read_field(p, "alpha", b.alpha);
        read_field(p, "beta", b.beta);
        c.sampler.proposal = b;
      } else {
        fail(ErrorCode::kValidation, "unknown proposal type '" + type + "'");
      }
    }
    std::string kind = "js";
    read_field(s, "discrepancy", kind);
    c.sampler.energy.kind = parse_discrepancy(kind);
    if (auto* r = std::get_if<MmdRbf>(&c.sampler.energy.kind))
      read_field(s, "rbf_bandwidth", r->bandwidth);
    if (auto* m = std::get_if<MmdMultiscale>(&c.sampler.energy.kind))
      read_field(s, "multiscale_bandwidths", m->bandwidths);
  }
  if (j.contains("toy")) {
    const Json& t = j["toy"];
    check_keys(t, {"n_states", "slip_prob", "episode_length"}, "toy");
    read_field(t, "n_states", c.toy.n_states);
    read_field(t, "slip_prob", c.toy.slip_prob);
    read_field(t, "episode_length", c.toy.episode_length);
  }
  if (j.contains("analysis")) {
    const Json& a = j["analysis"];
    check_keys(a, {"mode", "tail", "pairing"}, "analysis");
    std::string mode = "mean", pairing = "index";
    read_field(a, "mode", mode);
    read_field(a, "tail", c.analysis.tail);
    read_field(a, "pairing", pairing);
    c.analysis.mode = parse_rank_mode(mode);
    require(pairing == "index" || pairing == "all-pairs",
            ErrorCode::kValidation, "analysis.pairing must be index|all-pairs");
    c.analysis.pairing =
        pairing == "index" ? Pairing::kIndexPaired : Pairing::kAllPairs;
  }
  if (j.contains("sweep")) {
    const Json& w = j["sweep"];
    check_keys(w, {"repetitions", "datasize", "quality", "iterations",
                   "discrepancy", "epsilons", "noise_epsilon",
                   "truth_episodes", "iterations_axis_episodes",
                   "iterations_axis_m"},
               "sweep");
    read_field(w, "repetitions", c.sweep.repetitions);
    read_field(w, "datasize", c.sweep.datasize);
    read_field(w, "quality", c.sweep.quality);
    read_field(w, "iterations", c.sweep.iterations);
    read_field(w, "discrepancy", c.sweep.discrepancy);
    read_field(w, "epsilons", c.sweep.epsilons);
    read_field(w, "noise_epsilon", c.sweep.noise_epsilon);
    read_field(w, "truth_episodes", c.sweep.truth_episodes);
    read_field(w, "iterations_axis_episodes", c.sweep.iterations_axis_episodes);
    read_field(w, "iterations_axis_m", c.sweep.iterations_axis_m);
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace popr
