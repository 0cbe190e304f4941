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

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "popr/analysis.hpp"
#include "popr/config.hpp"
#include "popr/core.hpp"
#include "popr/error.hpp"
#include "popr/metrics.hpp"
#include "popr/sampler.hpp"

namespace popr::io {

inline constexpr int kDatasetVersion = 1;
inline constexpr int kReportVersion = 1;

// ---------------------------------------------------------------------------
// Datasets: one header line, then one trajectory per line.

inline Json action_space_json(const ActionSpace& s) {
  return {{"kind", s.is_discrete() ? "discrete" : "continuous"},
          {"n", s.size()}};
}

inline ActionSpace action_space_from_json(const Json& j) {
  require(j.is_object() && j.contains("kind") && j.contains("n") &&
              j["kind"].is_string() && j["n"].is_number_integer(),
          ErrorCode::kParse, "action_space needs string 'kind' and integer 'n'");
  const std::string kind = j["kind"];
  const int n = j["n"];
  if (kind == "discrete") return ActionSpace::discrete(n);
  if (kind == "continuous") return ActionSpace::continuous(n);
  fail(ErrorCode::kParse, "unknown action_space kind '" + kind + "'");
}

inline Json action_json(const Action& a) {
  if (const int* i = std::get_if<int>(&a)) return *i;
  return std::get<std::vector<double>>(a);
}

inline std::string dataset_header_line(const ActionSpace& s) {
  Json h;
  h["version"] = kDatasetVersion;
  h["action_space"] = action_space_json(s);
  return h.dump();
}

inline std::string trajectory_line(const Trajectory& t) {
  Json steps = Json::array();
  for (const Step& s : t.steps) {
    Json js;
    js["s"] = s.state;
    js["a"] = action_json(s.action);
    js["r"] = s.reward ? Json(*s.reward) : Json(nullptr);
    js["s2"] = s.next_state;
    steps.push_back(std::move(js));
  }
  Json line;
  line["steps"] = std::move(steps);
  if (!t.meta.empty()) line["meta"] = Json::parse(t.meta);
  return line.dump();
}

inline std::string dataset_to_string(const ExpertDataset& d) {
  std::string out = dataset_header_line(d.action_space) + "\n";
  for (const auto& t : d.trajectories) out += trajectory_line(t) + "\n";
  return out;
}

namespace detail {

[[noreturn]] inline void line_error(ErrorCode code, const std::string& source,
                                    std::size_t line, const std::string& msg) {
  fail(code, source + ":" + std::to_string(line) + ": " + msg);
}

inline State read_vector(const Json& j, const char* what) {
  require(j.is_array(), ErrorCode::kParse,
          std::string("'") + what + "' must be an array of numbers");
  State v;
  for (const auto& x : j) {
    require(x.is_number(), ErrorCode::kParse,
            std::string("'") + what + "' must be an array of numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

inline Step read_step(const Json& j, const ActionSpace& space) {
  require(j.is_object() && j.contains("s") && j.contains("a") &&
              j.contains("s2"),
          ErrorCode::kParse, "step needs 's', 'a' and 's2'");
  Step s;
  s.state = read_vector(j["s"], "s");
  s.next_state = read_vector(j["s2"], "s2");
  const Json& a = j["a"];
  if (space.is_discrete()) {
    require(a.is_number_integer(), ErrorCode::kParse,
            "discrete action must be an integer");
    s.action = a.get<int>();
  } else {
    s.action = read_vector(a, "a");
  }
  require(space.contains(s.action), ErrorCode::kValidation,
          "action does not conform to " + space.describe());
  if (j.contains("r") && !j["r"].is_null()) {
    require(j["r"].is_number(), ErrorCode::kParse, "'r' must be a number");
    s.reward = j["r"].get<double>();
  }
  return s;
}

}  // namespace detail

// Parses dataset text; `source` prefixes error messages ("path:line: ...").
inline ExpertDataset parse_dataset(std::istream& in,
                                   const std::string& source = "<dataset>") {
  std::string line;
  std::size_t lineno = 0;
  std::optional<ExpertDataset> d;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      detail::line_error(ErrorCode::kParse, source, lineno,
                         std::string("malformed JSON: ") + e.what());
    }
    if (!d) {
      if (!j.is_object() || !j.contains("version"))
        detail::line_error(ErrorCode::kParse, source, lineno,
                           "missing dataset header {\"version\":..}");
      if (!j["version"].is_number_integer() ||
          j["version"].get<int>() != kDatasetVersion)
        detail::line_error(ErrorCode::kParse, source, lineno,
                           "unsupported dataset version " + j["version"].dump());
      try {
        d.emplace(ExpertDataset{action_space_from_json(j["action_space"]), {}});
      } catch (const Error& e) {
        detail::line_error(e.code(), source, lineno, e.what());
      }
      continue;
    }
    try {
      require(j.is_object() && j.contains("steps") && j["steps"].is_array(),
              ErrorCode::kParse, "trajectory record needs a 'steps' array");
      Trajectory t;
      for (const auto& js : j["steps"])
        t.steps.push_back(detail::read_step(js, d->action_space));
      require(!t.steps.empty(), ErrorCode::kValidation, "empty trajectory");
      if (d->trajectories.empty()) dim = t.steps.front().state.size();
      for (const Step& s : t.steps)
        require(s.state.size() == dim && s.next_state.size() == dim,
                ErrorCode::kValidation, "state dimension differs from line 2");
      if (j.contains("meta")) t.meta = j["meta"].dump();
      d->trajectories.push_back(std::move(t));
    } catch (const Error& e) {
      detail::line_error(e.code(), source, lineno, e.what());
    }
  }
  if (!d)
    detail::line_error(ErrorCode::kParse, source, 1,
                       "missing dataset header {\"version\":..}");
  require(!d->trajectories.empty(), ErrorCode::kValidation,
          source + ": dataset has no trajectories");
  return std::move(*d);
}

inline ExpertDataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open dataset " + path);
  return parse_dataset(in, path);
}

// ---------------------------------------------------------------------------
// Output staging: contents are buffered and only renamed into place by
// commit(), so failed commands leave no partial files behind.

class StagedOutputs {
 public:
  void add(std::filesystem::path path, std::string content) {
    files_.emplace_back(std::move(path), std::move(content));
  }

  void commit() {
    std::vector<std::filesystem::path> temps;
    try {
      for (const auto& [path, content] : files_) {
        if (path.has_parent_path())
          std::filesystem::create_directories(path.parent_path());
        auto tmp = path;
        tmp += ".tmp." + std::to_string(::getpid());
        std::ofstream out(tmp, std::ios::binary);
        out << content;
        out.close();
        temps.push_back(tmp);
        require(static_cast<bool>(out), ErrorCode::kIo,
                "cannot write " + path.string());
      }
    } catch (...) {
      std::error_code ec;
      for (const auto& t : temps) std::filesystem::remove(t, ec);
      throw;
    }
    for (std::size_t i = 0; i < files_.size(); ++i)
      std::filesystem::rename(temps[i], files_[i].first);
    files_.clear();
  }

  std::size_t size() const { return files_.size(); }

 private:
  std::vector<std::pair<std::filesystem::path, std::string>> files_;
};

inline void write_file_atomic(const std::filesystem::path& path,
                              std::string content) {
  StagedOutputs s;
  s.add(path, std::move(content));
  s.commit();
}

inline void write_dataset(const ExpertDataset& d, const std::string& path) {
  validate(d);
  write_file_atomic(path, dataset_to_string(d));
}

// ---------------------------------------------------------------------------
// Reports.

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// rank,policy_id,score,posterior_std,samples_used
inline std::string ranking_csv(const RankingReport& r) {
  std::string out = "rank,policy_id,score,posterior_std,samples_used\n";
  for (std::size_t i = 0; i < r.ordering.size(); ++i) {
    const std::string& id = r.ordering[i];
    out += std::to_string(i + 1) + "," + csv_field(id) + "," +
           format_double(r.scores.at(id)) + "," +
           (r.spread.count(id) ? format_double(r.spread.at(id)) : "") + "," +
           (r.samples_used.count(id) ? std::to_string(r.samples_used.at(id))
                                     : "") +
           "\n";
  }
  return out;
}

// Long format: one row per (policy, retained sample).
inline std::string samples_csv(const std::vector<PosteriorSamples>& all) {
  std::string out = "policy_id,index,theta\n";
  for (const auto& s : all)
    for (std::size_t i = 0; i < s.samples.size(); ++i)
      out += csv_field(s.policy_id) + "," + std::to_string(i) + "," +
             format_double(s.samples[i]) + "\n";
  return out;
}

// Long format: one row per ordered pair (k, l), diagonal included.
inline std::string pairwise_csv(const PairwiseMatrix& m) {
  std::string out = "policy_k,policy_l,probability\n";
  for (std::size_t k = 0; k < m.size(); ++k)
    for (std::size_t l = 0; l < m.size(); ++l)
      out += csv_field(m.policy_ids[k]) + "," + csv_field(m.policy_ids[l]) +
             "," + format_double(m.at(k, l)) + "\n";
  return out;
}

// Row-major matrix with a header row of policy ids.
inline std::string pairwise_matrix_csv(const PairwiseMatrix& m) {
  std::string out = "policy_id";
  for (const auto& id : m.policy_ids) out += "," + csv_field(id);
  out += "\n";
  for (std::size_t k = 0; k < m.size(); ++k) {
    out += csv_field(m.policy_ids[k]);
    for (std::size_t l = 0; l < m.size(); ++l)
      out += "," + format_double(m.at(k, l));
    out += "\n";
  }
  return out;
}

// Chain diagnostics: one row per (policy, post-burn-in iteration).
inline std::string trace_csv(const std::vector<PosteriorSamples>& all) {
  std::string out = "policy_id,iteration,theta\n";
  for (const auto& s : all)
    for (std::size_t i = 0; i < s.trace.size(); ++i)
      out += csv_field(s.policy_id) + "," + std::to_string(i) + "," +
             format_double(s.trace[i]) + "\n";
  return out;
}

inline std::string diagnostics_csv(const std::vector<PosteriorSamples>& all) {
  std::string out =
      "policy_id,retained,acceptance_rate,variance_shrinks,config_fingerprint\n";
  for (const auto& s : all)
    out += csv_field(s.policy_id) + "," + std::to_string(s.samples.size()) +
           "," + format_double(s.acceptance_rate) + "," +
           std::to_string(s.variance_shrinks) + "," + s.config_fingerprint +
           "\n";
  return out;
}

inline Json pairwise_json(const PairwiseMatrix& m) {
  Json rows = Json::array();
  for (std::size_t k = 0; k < m.size(); ++k) {
    Json row = Json::array();
    for (std::size_t l = 0; l < m.size(); ++l) row.push_back(m.at(k, l));
    rows.push_back(std::move(row));
  }
  return {{"policy_ids", m.policy_ids}, {"probabilities", std::move(rows)}};
}

inline PairwiseMatrix pairwise_from_json(const Json& j) {
  PairwiseMatrix m;
  m.policy_ids = j.at("policy_ids").get<std::vector<std::string>>();
  for (const auto& row : j.at("probabilities"))
    for (const auto& v : row) m.probabilities.push_back(v.get<double>());
  require(m.probabilities.size() == m.size() * m.size(), ErrorCode::kParse,
          "pairwise matrix is not square");
  return m;
}

inline Json ranking_json(const RankingReport& r) {
  Json policies = Json::array();
  for (const auto& id : r.ordering) {
    Json p;
    p["id"] = id;
    p["score"] = r.scores.at(id);
    if (r.spread.count(id)) p["posterior_std"] = r.spread.at(id);
    if (r.samples_used.count(id)) p["samples_used"] = r.samples_used.at(id);
    policies.push_back(std::move(p));
  }
  return {{"mode", rank_mode_name(r.mode)},
          {"fraction", r.fraction},
          {"ordering", r.ordering},
          {"policies", std::move(policies)}};
}

inline RankingReport ranking_from_json(const Json& j) {
  RankingReport r;
  const std::string mode = j.at("mode");
  r.mode = mode == "agreement" ? RankMode::kAgreement : parse_rank_mode(mode);
  r.fraction = j.at("fraction");
  r.ordering = j.at("ordering").get<std::vector<std::string>>();
  for (const auto& p : j.at("policies")) {
    const std::string id = p.at("id");
    r.scores[id] = p.at("score");
    if (p.contains("posterior_std")) r.spread[id] = p["posterior_std"];
    if (p.contains("samples_used"))
      r.samples_used[id] = p["samples_used"].get<std::size_t>();
  }
  return r;
}

// Versioned report document embedding the resolved config.
struct Report {
  RankingReport ranking;
  std::optional<PairwiseMatrix> pairwise;
  std::vector<PosteriorSamples> posteriors;
  Json config;  // resolved RunConfig echo
  Json extra = Json::object();
};

inline Json report_json(const Report& rep) {
  Json j;
  j["schema"] = "popr.report";
  j["version"] = kReportVersion;
  j["ranking"] = ranking_json(rep.ranking);
  if (rep.pairwise) j["pairwise"] = pairwise_json(*rep.pairwise);
  Json post = Json::array();
  for (const auto& s : rep.posteriors) {
    post.push_back({{"id", s.policy_id},
                    {"mean", s.mean()},
                    {"std", s.stddev()},
                    {"acceptance_rate", s.acceptance_rate},
                    {"variance_shrinks", s.variance_shrinks},
                    {"config_fingerprint", s.config_fingerprint},
                    {"samples", s.samples}});
  }
  j["posteriors"] = std::move(post);
  j["config"] = rep.config;
  if (!rep.extra.empty()) j["extra"] = rep.extra;
  return j;
}

inline Report report_from_json(const Json& j) {
  require(j.value("schema", "") == "popr.report", ErrorCode::kParse,
          "not a popr report");
  require(j.value("version", 0) == kReportVersion, ErrorCode::kParse,
          "unsupported report version");
  Report rep;
  rep.ranking = ranking_from_json(j.at("ranking"));
  if (j.contains("pairwise")) rep.pairwise = pairwise_from_json(j["pairwise"]);
  for (const auto& p : j.at("posteriors")) {
    PosteriorSamples s;
    s.policy_id = p.at("id");
    s.samples = p.at("samples").get<std::vector<double>>();
    s.acceptance_rate = p.at("acceptance_rate");
    s.variance_shrinks = p.at("variance_shrinks");
    s.config_fingerprint = p.at("config_fingerprint");
    rep.posteriors.push_back(std::move(s));
  }
  rep.config = j.at("config");
  if (j.contains("extra")) rep.extra = j["extra"];
  return rep;
}

inline Report read_report(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open report " + path);
  try {
    return report_from_json(Json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path + ": " + e.what());
  }
}

// Ordering files: a report JSON ({"ranking":{"ordering":..}}), a bare
// {"ordering": [...]} / [...] document, or one id per line.
inline Ordering read_ordering(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open ordering " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (text[first] == '{' || text[first] == '[')) {
    Json j;
    try {
      j = Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParse, path + ": " + e.what());
    }
    if (j.is_object() && j.contains("ranking")) j = j["ranking"];
    if (j.is_object() && j.contains("ordering")) j = j["ordering"];
    require(j.is_array(), ErrorCode::kParse, path + ": no ordering array");
    return Ordering(j.get<std::vector<std::string>>());
  }
  std::vector<std::string> ids;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return Ordering(std::move(ids));
}

inline std::string ordering_text(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) out += id + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Policy manifest.

struct PolicyEntry {
  std::string id;
  std::string kind;  // toy-expert | toy-mixture | constant | external
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  Json action;  // constant action: int or array
  int n_states = 0;  // 0: use the run's toy.n_states
  std::vector<std::string> command;
  int timeout_ms = 5000;
};

inline std::vector<PolicyEntry> parse_manifest(const Json& j,
                                               const std::string& source) {
  require(j.is_object() && j.contains("policies") && j["policies"].is_array(),
          ErrorCode::kValidation, source + ": manifest needs a 'policies' array");
  require(j.value("version", 1) == 1, ErrorCode::kValidation,
          source + ": unsupported manifest version");
  std::vector<PolicyEntry> out;
  std::set<std::string> ids;
  for (const auto& p : j["policies"]) {
    PolicyEntry e;
    try {
      e.id = p.at("id").get<std::string>();
      e.kind = p.at("kind").get<std::string>();
      e.epsilon = p.value("epsilon", 0.0);
      e.seed = p.value("seed", std::uint64_t{0});
      e.n_states = p.value("n_states", 0);
      if (p.contains("action")) e.action = p["action"];
      if (p.contains("command")) {
        if (p["command"].is_string())
          e.command = {"/bin/sh", "-c", p["command"].get<std::string>()};
        else
          e.command = p["command"].get<std::vector<std::string>>();
      }
      e.timeout_ms = p.value("timeout_ms", 5000);
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::kValidation, source + ": bad policy entry: " + ex.what());
    }
    require(!e.id.empty(), ErrorCode::kValidation, source + ": empty policy id");
    require(ids.insert(e.id).second, ErrorCode::kValidation,
            source + ": duplicate policy id '" + e.id + "'");
    require(e.kind == "toy-expert" || e.kind == "toy-mixture" ||
                e.kind == "constant" || e.kind == "external",
            ErrorCode::kValidation,
            source + ": policy '" + e.id + "' has unknown kind '" + e.kind + "'");
    if (e.kind == "external")
      require(!e.command.empty() && e.timeout_ms > 0, ErrorCode::kValidation,
              source + ": external policy '" + e.id +
                  "' needs a command and a positive timeout_ms");
    if (e.kind == "constant")
      require(!e.action.is_null(), ErrorCode::kValidation,
              source + ": constant policy '" + e.id + "' needs an action");
    out.push_back(std::move(e));
  }
  require(!out.empty(), ErrorCode::kValidation, source + ": no policies");
  return out;
}

inline std::vector<PolicyEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open manifest " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path + ": " + e.what());
  }
  return parse_manifest(j, path);
}

inline Json manifest_json(const std::vector<PolicyEntry>& entries) {
  Json list = Json::array();
  for (const auto& e : entries) {
    Json p;
    p["id"] = e.id;
    p["kind"] = e.kind;
    if (e.kind == "toy-mixture") {
      p["epsilon"] = e.epsilon;
      p["seed"] = e.seed;
    }
    if (e.n_states) p["n_states"] = e.n_states;
    if (e.kind == "constant") p["action"] = e.action;
    if (e.kind == "external") {
      p["command"] = e.command;
      p["timeout_ms"] = e.timeout_ms;
    }
    list.push_back(std::move(p));
  }
  return {{"version", 1}, {"policies", std::move(list)}};
}

}  // namespace popr::io
