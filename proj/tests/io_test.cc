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

#include "popr/io.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "popr/experiment.hpp"
#include "popr/toyenv.hpp"
#include "test_util.hpp"

namespace popr::io {
namespace {

using popr::testing::TempDir;
using popr::testing::posterior;
using popr::testing::slurp;
using popr::testing::spit;

const char* kHeader = R"({"version":1,"action_space":{"kind":"discrete","n":2}})";

ExpertDataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in, "mem");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(DatasetFormatTest, RoundTripToyDataset) {
  TempDir dir("io");
  const ExpertDataset d =
      toy::generate_dataset({}, toy::ExpertPolicy(10), 20);
  const auto path = (dir / "d.jsonl").string();
  write_dataset(d, path);
  const ExpertDataset back = read_dataset(path);
  EXPECT_EQ(back, d);
  EXPECT_EQ(back.size(), 20u);
  EXPECT_EQ(back.trajectories[0].length(), 100u);
  EXPECT_EQ(dataset_to_string(back), slurp(path));
}

TEST(DatasetFormatTest, CanonicalTextIsStable) {
  ExpertDataset d{ActionSpace::discrete(2), {Trajectory{}}};
  d.trajectories[0].steps.push_back({{0.0}, 1, 9.0, {9.0}});
  d.trajectories[0].steps.push_back({{9.0}, 0, std::nullopt, {0.0}});
  const std::string text = dataset_to_string(d);
  EXPECT_EQ(text,
            std::string(kHeader) + "\n" +
                R"({"steps":[{"s":[0.0],"a":1,"r":9.0,"s2":[9.0]},)"
                R"({"s":[9.0],"a":0,"r":null,"s2":[0.0]}]})" "\n");
  EXPECT_EQ(dataset_to_string(parse(text)), text);
}

TEST(DatasetFormatTest, ContinuousAndMeta) {
  ExpertDataset d{ActionSpace::continuous(2), {Trajectory{}}};
  d.trajectories[0].steps.push_back(
      {{0.1, 0.2}, std::vector<double>{-1.5, 2.25}, 0.5, {0.3, 0.4}});
  d.trajectories[0].meta = R"({"source":"unit"})";
  const ExpertDataset back = parse(dataset_to_string(d));
  EXPECT_EQ(back, d);
}

TEST(DatasetFormatTest, MissingHeaderNamesLineOne) {
  const std::string msg =
      error_of(R"({"steps":[{"s":[0],"a":0,"r":null,"s2":[1]}]})" "\n");
  EXPECT_NE(msg.find("mem:1:"), std::string::npos) << msg;
  EXPECT_NE(error_of("").find("mem:1:"), std::string::npos);
}

TEST(DatasetFormatTest, ActionOutOfRangeNamesLine) {
  const std::string text = std::string(kHeader) + "\n" +
                           R"({"steps":[{"s":[0],"a":0,"s2":[1]}]})" "\n" +
                           R"({"steps":[{"s":[0],"a":2,"s2":[1]}]})" "\n";
  const std::string msg = error_of(text);
  EXPECT_NE(msg.find("mem:3:"), std::string::npos) << msg;
}

TEST(DatasetFormatTest, RejectsOtherViolations) {
  const std::string h = std::string(kHeader) + "\n";
  EXPECT_NE(error_of(R"({"version":2,"action_space":{"kind":"discrete","n":2}})")
                .find("version"),
            std::string::npos);
  EXPECT_NE(error_of(h + "{not json\n").find("mem:2:"), std::string::npos);
  EXPECT_NE(error_of(h + R"({"steps":[]})").find("mem:2:"), std::string::npos);
  EXPECT_NE(error_of(h + R"({"steps":[{"s":[0],"a":0,"s2":[1]}]})" "\n" +
                     R"({"steps":[{"s":[0,1],"a":0,"s2":[1,1]}]})")
                .find("mem:3:"),
            std::string::npos);
  EXPECT_FALSE(error_of(h).empty());  // header only: no trajectories
}

TEST(DatasetFormatTest, MissingFileIsIoError) {
  try {
    read_dataset("/nonexistent/popr.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

TEST(ReportFormatTest, SamplesCsvRows) {
  std::vector<double> v(50, 0.5);
  const std::string csv = samples_csv({posterior("a", v)});
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 51);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "policy_id,index,theta");
}

TEST(ReportFormatTest, PairwiseCsvRows) {
  const std::vector<PosteriorSamples> s{posterior("a", {0.1}),
                                        posterior("b", {0.2}),
                                        posterior("c", {0.3})};
  const auto m = pairwise(s);
  const std::string csv = pairwise_csv(m);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
  EXPECT_NE(csv.find("c,a,1\n"), std::string::npos);
  const std::string matrix = pairwise_matrix_csv(m);
  EXPECT_EQ(matrix.substr(0, matrix.find('\n')), "policy_id,a,b,c");
}

TEST(ReportFormatTest, CsvQuoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
}

TEST(ReportFormatTest, JsonRoundTrip) {
  std::vector<PosteriorSamples> post{posterior("a", {0.9, 0.8, 0.85}),
                                     posterior("b", {0.1, 0.3, 0.2})};
  post[0].acceptance_rate = 0.4;
  post[0].config_fingerprint = "00ff";
  const Report rep{rank_mean(post), pairwise(post), post,
                   to_json(RunConfig{}), {{"dataset", "d.jsonl"}}};
  TempDir dir("report");
  write_file_atomic(dir / "r.json", report_json(rep).dump(2));
  const Report back = read_report((dir / "r.json").string());
  EXPECT_EQ(back.ranking.ordering, rep.ranking.ordering);
  EXPECT_EQ(back.ranking.scores, rep.ranking.scores);
  EXPECT_EQ(back.ranking.spread, rep.ranking.spread);
  EXPECT_EQ(back.ranking.samples_used, rep.ranking.samples_used);
  ASSERT_TRUE(back.pairwise.has_value());
  EXPECT_EQ(back.pairwise->probabilities, rep.pairwise->probabilities);
  ASSERT_EQ(back.posteriors.size(), 2u);
  EXPECT_EQ(back.posteriors[0].samples, post[0].samples);
  EXPECT_EQ(back.posteriors[0].acceptance_rate, 0.4);
  EXPECT_EQ(back.posteriors[0].config_fingerprint, "00ff");
  EXPECT_EQ(back.config, rep.config);
  EXPECT_EQ(back.extra, rep.extra);
  EXPECT_EQ(report_json(back).dump(), report_json(rep).dump());
}

TEST(ReportFormatTest, RejectsUnknownVersion) {
  Json j = report_json({rank_mean(std::vector{posterior("a", {0.5})}),
                        std::nullopt, {}, Json::object(), Json::object()});
  j["version"] = 2;
  EXPECT_THROW(report_from_json(j), Error);
}

TEST(OrderingFileTest, AcceptsAllShapes) {
  TempDir dir("ordering");
  spit(dir / "lines.txt", "a\nb\r\n\nc\n");
  spit(dir / "array.json", R"(["a","b","c"])");
  spit(dir / "object.json", R"({"ordering":["a","b","c"]})");
  spit(dir / "report.json", R"({"ranking":{"ordering":["a","b","c"]}})");
  for (const char* f : {"lines.txt", "array.json", "object.json", "report.json"})
    EXPECT_EQ(read_ordering((dir / f).string()).items(),
              (std::vector<std::string>{"a", "b", "c"}))
        << f;
  spit(dir / "dup.txt", "a\na\n");
  EXPECT_THROW(read_ordering((dir / "dup.txt").string()), Error);
}

TEST(StagedOutputsTest, NothingWrittenUntilCommit) {
  TempDir dir("staged");
  StagedOutputs s;
  s.add(dir / "sub" / "a.txt", "A");
  s.add(dir / "b.txt", "B");
  EXPECT_FALSE(std::filesystem::exists(dir / "b.txt"));
  s.commit();
  EXPECT_EQ(slurp(dir / "sub" / "a.txt"), "A");
  EXPECT_EQ(slurp(dir / "b.txt"), "B");
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path()))
    EXPECT_EQ(e.path().string().find(".tmp."), std::string::npos);
}

TEST(StagedOutputsTest, FailedCommitLeavesNoFiles) {
  TempDir dir("staged-fail");
  spit(dir / "blocker", "file, not a directory");
  StagedOutputs s;
  s.add(dir / "ok.txt", "fine");
  s.add(dir / "blocker" / "x.txt", "cannot exist");
  EXPECT_ANY_THROW(s.commit());
  EXPECT_FALSE(std::filesystem::exists(dir / "ok.txt"));
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    (void)e;
    ++n;
  }
  EXPECT_EQ(n, 1u);
}

TEST(ManifestTest, ParsesAllKinds) {
  const Json j = Json::parse(R"({
    "version": 1,
    "policies": [
      {"id": "expert", "kind": "toy-expert"},
      {"id": "eps=0.5", "kind": "toy-mixture", "epsilon": 0.5, "seed": 3},
      {"id": "fwd", "kind": "constant", "action": 0},
      {"id": "ext", "kind": "external", "command": ["prog", "--x"], "timeout_ms": 100}
    ]})");
  const auto entries = parse_manifest(j, "m");
  ASSERT_EQ(entries.size(), 4u);
  EXPECT_EQ(entries[1].epsilon, 0.5);
  EXPECT_EQ(entries[1].seed, 3u);
  EXPECT_EQ(entries[3].command, (std::vector<std::string>{"prog", "--x"}));
  EXPECT_EQ(entries[3].timeout_ms, 100);
  const auto again = parse_manifest(manifest_json(entries), "m2");
  ASSERT_EQ(again.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(again[i].id, entries[i].id);
    EXPECT_EQ(again[i].kind, entries[i].kind);
  }
}

TEST(ManifestTest, Validation) {
  auto bad = [](const char* text) {
    return [text] { parse_manifest(Json::parse(text), "m"); };
  };
  EXPECT_THROW(bad(R"({"policies":[{"id":"a","kind":"toy-expert"},
                                    {"id":"a","kind":"toy-expert"}]})")(),
               Error);
  EXPECT_THROW(bad(R"({"policies":[{"id":"a","kind":"robot"}]})")(), Error);
  EXPECT_THROW(bad(R"({"policies":[{"id":"a","kind":"external"}]})")(), Error);
  EXPECT_THROW(bad(R"({"policies":[{"id":"a","kind":"constant"}]})")(), Error);
  EXPECT_THROW(bad(R"({"version":2,"policies":[{"id":"a","kind":"toy-expert"}]})")(),
               Error);
  EXPECT_THROW(bad(R"({"policies":[]})")(), Error);
}

TEST(ManifestTest, BuildsPolicies) {
  const auto policies = experiment::make_policies(
      parse_manifest(Json::parse(R"({"policies":[
        {"id":"e","kind":"toy-expert"},
        {"id":"c","kind":"constant","action":1}]})"),
                     "m"),
      ActionSpace::discrete(2), 10);
  Rng rng(0);
  EXPECT_EQ(std::get<int>(policies[0]->act(std::vector<double>{9.0}, rng)), 1);
  EXPECT_EQ(std::get<int>(policies[1]->act(std::vector<double>{0.0}, rng)), 1);
}

}  // namespace
}  // namespace popr::io
