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
#include <cstdio>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "popr/core.hpp"
#include "popr/energy.hpp"
#include "popr/error.hpp"
#include "popr/parallel.hpp"
#include "popr/random.hpp"

namespace popr {

// Chains live on [kThetaMin, 1 - kThetaMin]; the target is zero outside.
inline constexpr double kThetaMin = 1e-12;
inline constexpr double kMeanClamp = 1e-6;
inline constexpr double kVarianceFloor = 1e-8;

struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;

  double mean() const { return alpha / (alpha + beta); }
  double variance() const {
    const double s = alpha + beta;
    return alpha * beta / (s * s * (s + 1.0));
  }
};

/// Method-of-moments Beta fit to a mean/variance pair.
///
/// The mean is clamped to [1e-6, 1-1e-6] and the variance floored at 1e-8.
/// When mean(1-mean) <= variance no Beta has those moments; the variance is
/// then shrunk to 0.99 mean(1-mean) and `*shrunk` is set.
inline BetaParams fit_beta_moments(double mean, double variance,
                                   bool* shrunk = nullptr) {
  const double mu = std::clamp(mean, kMeanClamp, 1.0 - kMeanClamp);
  double var = std::max(variance, kVarianceFloor);
  const double spread = mu * (1.0 - mu);
  const bool shrink = spread <= var;
  if (shrink) var = 0.99 * spread;
  if (shrunk != nullptr) *shrunk = shrink;
  const double kappa = spread / var - 1.0;
  return {mu * kappa, (1.0 - mu) * kappa};
}

inline BetaParams fit_beta_moments(const EnergySample& sample,
                                   bool* shrunk = nullptr) {
  return fit_beta_moments(sample.mean, sample.variance, shrunk);
}

inline double log_beta_function(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// log Beta(theta | a, b); theta is clamped into [kThetaMin, 1 - kThetaMin].
inline double log_beta_density(double theta, double a, double b) {
  const double t = std::clamp(theta, kThetaMin, 1.0 - kThetaMin);
  return (a - 1.0) * std::log(t) + (b - 1.0) * std::log1p(-t) -
         log_beta_function(a, b);
}

inline double pseudo_likelihood(double theta, const BetaParams& p) {
  return std::exp(log_beta_density(theta, p.alpha, p.beta));
}

struct BetaPrior {
  double a = 0.5;
  double b = 0.5;
};

// Normal density truncated to [0,1] and renormalised.
struct NormalPrior {
  double mu = 0.4;
  double sigma = 0.4;
};

using Prior = std::variant<BetaPrior, NormalPrior>;

inline double log_prior(const Prior& prior, double theta) {
  if (const auto* b = std::get_if<BetaPrior>(&prior))
    return log_beta_density(theta, b->a, b->b);
  const auto& n = std::get<NormalPrior>(prior);
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  const double z = (theta - n.mu) / n.sigma;
  const double mass = cdf((1.0 - n.mu) / n.sigma) - cdf(-n.mu / n.sigma);
  return -0.5 * z * z - std::log(n.sigma * std::sqrt(2.0 * std::numbers::pi)) -
         std::log(mass);
}

// Gaussian step of size `step` in logit space.
struct LogitRandomWalk {
  double step = 0.5;
};

// Independence proposal theta* ~ Beta(alpha, beta).
struct BetaProposal {
  double alpha = 4.0;
  double beta = 1e-3;
};

using Proposal = std::variant<LogitRandomWalk, BetaProposal>;

struct ProposalDraw {
  double theta;
  double log_correction;  // log q(current | theta) - log q(theta | current)
};

inline ProposalDraw propose(const Proposal& proposal, double current,
                            Rng& rng) {
  if (const auto* rw = std::get_if<LogitRandomWalk>(&proposal)) {
    const double z = std::log(current / (1.0 - current)) +
                     rw->step * std::normal_distribution<double>()(rng);
    const double next = 1.0 / (1.0 + std::exp(-z));
    // Jacobian of the logit map; the Gaussian kernel itself is symmetric.
    const double corr = std::log(next) + std::log1p(-next) -
                        std::log(current) - std::log1p(-current);
    return {next, corr};
  }
  const auto& b = std::get<BetaProposal>(proposal);
  const double next = sample_beta(b.alpha, b.beta, rng);
  return {next, log_beta_density(current, b.alpha, b.beta) -
                    log_beta_density(next, b.alpha, b.beta)};
}

struct MhOutcome {
  double theta;
  bool accepted;
};

/// One Metropolis-Hastings transition targeting exp(log_lik) * prior.
///
/// Accepts when u < tau (standard rule), with tau evaluated in log space.
/// Proposals outside the truncated support are rejected.
template <typename LogLik>
MhOutcome mh_transition(double current, LogLik&& log_lik, const Prior& prior,
                        const Proposal& proposal, Rng& rng) {
  const ProposalDraw d = propose(proposal, current, rng);
  const double u = uniform01(rng);
  if (!(d.theta >= kThetaMin && d.theta <= 1.0 - kThetaMin))
    return {current, false};
  const double lp_new = log_lik(d.theta) + log_prior(prior, d.theta);
  const double lp_cur = log_lik(current) + log_prior(prior, current);
  if (std::isnan(lp_new) || lp_new == -INFINITY) return {current, false};
  if (lp_cur == -INFINITY || std::isnan(lp_cur)) return {d.theta, true};
  const double log_tau = lp_new - lp_cur + d.log_correction;
  if (log_tau >= 0.0 || std::log(u) < log_tau) return {d.theta, true};
  return {current, false};
}

struct SamplerConfig {
  int iterations = 500;
  int bootstrap_m = 5;
  int burnin = 10;
  int thin = 10;
  Prior prior = BetaPrior{};
  Proposal proposal = LogitRandomWalk{};
  std::uint64_t seed = 0;
  EnergyOptions energy{};

  void validate() const {
    require(iterations >= 1, ErrorCode::kValidation, "iterations must be >= 1");
    require(bootstrap_m >= 2, ErrorCode::kValidation,
            "bootstrap_m must be >= 2");
    require(burnin >= 0, ErrorCode::kValidation, "burnin must be >= 0");
    require(thin >= 1 && thin <= iterations, ErrorCode::kValidation,
            "thin must lie in [1, iterations]");
    if (const auto* b = std::get_if<BetaPrior>(&prior))
      require(b->a > 0 && b->b > 0, ErrorCode::kValidation,
              "Beta prior parameters must be positive");
    if (const auto* n = std::get_if<NormalPrior>(&prior))
      require(n->sigma > 0, ErrorCode::kValidation,
              "Normal prior sigma must be positive");
    if (const auto* p = std::get_if<BetaProposal>(&proposal))
      require(p->alpha > 0 && p->beta > 0, ErrorCode::kValidation,
              "Beta proposal parameters must be positive");
    if (const auto* p = std::get_if<LogitRandomWalk>(&proposal))
      require(p->step > 0, ErrorCode::kValidation,
              "random-walk step must be positive");
    require(energy.smoothing > 0, ErrorCode::kValidation,
            "smoothing must be positive");
  }
};

// Canonical one-line description; the fingerprint hashes it.
inline std::string describe(const SamplerConfig& c) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string s = "iterations=" + std::to_string(c.iterations) +
                  ";m=" + std::to_string(c.bootstrap_m) +
                  ";burnin=" + std::to_string(c.burnin) +
                  ";thin=" + std::to_string(c.thin) +
                  ";seed=" + std::to_string(c.seed);
  if (const auto* b = std::get_if<BetaPrior>(&c.prior))
    s += ";prior=beta(" + num(b->a) + "," + num(b->b) + ")";
  else {
    const auto& n = std::get<NormalPrior>(c.prior);
    s += ";prior=normal(" + num(n.mu) + "," + num(n.sigma) + ")";
  }
  if (const auto* rw = std::get_if<LogitRandomWalk>(&c.proposal))
    s += ";proposal=logit-rw(" + num(rw->step) + ")";
  else {
    const auto& b = std::get<BetaProposal>(c.proposal);
    s += ";proposal=beta(" + num(b.alpha) + "," + num(b.beta) + ")";
  }
  s += ";discrepancy=" + discrepancy_name(c.energy.kind) +
       ";smoothing=" + num(c.energy.smoothing);
  if (const auto* r = std::get_if<MmdRbf>(&c.energy.kind))
    s += ";bandwidth=" + num(r->bandwidth);
  if (const auto* m = std::get_if<MmdMultiscale>(&c.energy.kind)) {
    s += ";bandwidths=";
    for (double h : m->bandwidths) s += num(h) + ",";
  }
  return s;
}

inline std::string fingerprint(const SamplerConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(describe(c))));
  return buf;
}

struct PosteriorSamples {
  std::string policy_id;
  std::vector<double> samples;  // retained after burn-in and thinning
  double acceptance_rate = 0.0;
  std::string config_fingerprint;
  std::vector<double> trace;  // every post-burn-in chain state
  std::size_t variance_shrinks = 0;

  double mean() const {
    require(!samples.empty(), ErrorCode::kInvalidArgument,
            "policy '" + policy_id + "' has no posterior samples");
    return std::accumulate(samples.begin(), samples.end(), 0.0) /
           static_cast<double>(samples.size());
  }

  double stddev() const {
    if (samples.size() < 2) return 0.0;
    const double m = mean();
    double ss = 0.0;
    for (double s : samples) ss += (s - m) * (s - m);
    return std::sqrt(ss / static_cast<double>(samples.size() - 1));
  }
};

struct MhStep {
  double theta;
  bool accepted;
  BetaParams likelihood;
  bool variance_shrunk;
};

// Fresh bootstrap energies, a Beta pseudo-likelihood fitted to them, then
// one MH transition under that likelihood.
inline MhStep mh_step(double current, const ExpertDataset& dataset,
                      const Policy& policy, const SamplerConfig& config,
                      const EnergyFunction& energy_fn, Rng& rng) {
  const EnergySample e =
      bootstrap_energies(dataset, policy, config.bootstrap_m, energy_fn, rng);
  bool shrunk = false;
  const BetaParams lik = fit_beta_moments(e, &shrunk);
  const MhOutcome o = mh_transition(
      current,
      [&](double t) { return log_beta_density(t, lik.alpha, lik.beta); },
      config.prior, config.proposal, rng);
  return {o.theta, o.accepted, lik, shrunk};
}

inline MhStep mh_step(double current, const ExpertDataset& dataset,
                      const Policy& policy, const SamplerConfig& config,
                      Rng& rng) {
  return mh_step(current, dataset, policy, config,
                 EnergyFunction(dataset, config.energy), rng);
}

/// Drives a chain: theta_0 ~ U[0,1), `burnin` discarded transitions, then
/// `iterations` transitions keeping every `thin`-th state.
///
/// `step(theta, rng)` returns an MhStep. The acceptance rate counts the
/// recorded-phase transitions only.
template <typename StepFn>
PosteriorSamples run_chain_with(StepFn&& step, const SamplerConfig& config,
                                std::string policy_id) {
  config.validate();
  Rng rng(config.seed);
  PosteriorSamples out;
  out.policy_id = std::move(policy_id);
  out.config_fingerprint = fingerprint(config);
  double theta = std::clamp(uniform01(rng), kThetaMin, 1.0 - kThetaMin);
  for (int i = 0; i < config.burnin; ++i) {
    const MhStep s = step(theta, rng);
    out.variance_shrinks += s.variance_shrunk;
    theta = s.theta;
  }
  std::size_t accepted = 0;
  out.trace.reserve(config.iterations);
  out.samples.reserve(config.iterations / config.thin);
  for (int i = 0; i < config.iterations; ++i) {
    const MhStep s = step(theta, rng);
    out.variance_shrinks += s.variance_shrunk;
    accepted += s.accepted;
    theta = s.theta;
    out.trace.push_back(theta);
    if ((i + 1) % config.thin == 0) out.samples.push_back(theta);
  }
  out.acceptance_rate =
      static_cast<double>(accepted) / static_cast<double>(config.iterations);
  return out;
}

inline PosteriorSamples run_chain(const ExpertDataset& dataset,
                                  const Policy& policy,
                                  const SamplerConfig& config) {
  config.validate();
  validate(dataset);
  const EnergyFunction energy_fn(dataset, config.energy);
  return run_chain_with(
      [&](double theta, Rng& rng) {
        return mh_step(theta, dataset, policy, config, energy_fn, rng);
      },
      config, policy.id());
}

// Chain against a fixed log-likelihood instead of bootstrap energies.
template <typename LogLik>
PosteriorSamples run_chain_fixed(LogLik&& log_lik, const SamplerConfig& config,
                                 std::string id = "fixed") {
  return run_chain_with(
      [&](double theta, Rng& rng) {
        const MhOutcome o =
            mh_transition(theta, log_lik, config.prior, config.proposal, rng);
        return MhStep{o.theta, o.accepted, {}, false};
      },
      config, std::move(id));
}

inline std::uint64_t policy_seed(std::uint64_t seed, const std::string& id) {
  return derive_seed(seed, id);
}

/// One independent chain per policy, seeded by (config.seed, policy id), run
/// in parallel on clones of the policies. Output order follows input order.
inline std::vector<PosteriorSamples> run_all(
    const ExpertDataset& dataset, const std::vector<const Policy*>& policies,
    const SamplerConfig& config) {
  config.validate();
  validate(dataset);
  require(!policies.empty(), ErrorCode::kValidation, "no candidate policies");
  std::set<std::string> ids;
  for (const Policy* p : policies)
    require(ids.insert(p->id()).second, ErrorCode::kValidation,
            "duplicate policy id '" + p->id() + "'");
  const EnergyFunction energy_fn(dataset, config.energy);
  std::vector<PosteriorSamples> out(policies.size());
  parallel_for(policies.size(), [&](std::size_t i) {
    const Policy& original = *policies[i];
    try {
      const std::unique_ptr<Policy> local = original.clone();
      SamplerConfig c = config;
      c.seed = policy_seed(config.seed, original.id());
      out[i] = run_chain_with(
          [&](double theta, Rng& rng) {
            return mh_step(theta, dataset, *local, c, energy_fn, rng);
          },
          c, original.id());
      out[i].config_fingerprint = fingerprint(config);
    } catch (const Error& e) {
      throw Error(e.code(), "policy '" + original.id() + "': " + e.what());
    }
  });
  return out;
}

inline std::vector<PosteriorSamples> run_all(
    const ExpertDataset& dataset,
    const std::vector<std::unique_ptr<Policy>>& policies,
    const SamplerConfig& config) {
  std::vector<const Policy*> raw;
  for (const auto& p : policies) raw.push_back(p.get());
  return run_all(dataset, raw, config);
}

}  // namespace popr
