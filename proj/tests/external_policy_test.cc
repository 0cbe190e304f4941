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

#include "popr/external_policy.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>

#include "popr/experiment.hpp"
#include "popr/toyenv.hpp"
#include "test_util.hpp"

namespace popr {
namespace {

const std::string kFake = POPR_FAKE_POLICY;

std::vector<std::string> fake(std::initializer_list<std::string> args) {
  std::vector<std::string> cmd{kFake};
  cmd.insert(cmd.end(), args);
  return cmd;
}

std::size_t open_descriptors() {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator("/proc/self/fd")) {
    (void)e;
    ++n;
  }
  return n;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

TEST(ExternalPolicyTest, ConstantProgramBehavesAsConstantPolicy) {
  const ExternalPolicy ext("ext", fake({"constant", "0"}), ActionSpace::discrete(2));
  const ConstantPolicy local("local", ActionSpace::discrete(2), 0);
  const ExpertDataset d = toy::generate_dataset({}, toy::ExpertPolicy(10), 2);
  for (const auto& t : d.trajectories)
    EXPECT_EQ(replay_actions(ext, t, 1), replay_actions(local, t, 1));
}

TEST(ExternalPolicyTest, ContinuousActions) {
  const ExternalPolicy ext("mirror", fake({"mirror"}), ActionSpace::continuous(2));
  Rng rng(0);
  const std::vector<double> s{0.25, -3.5};
  EXPECT_EQ(std::get<std::vector<double>>(ext.act(s, rng)), s);
}

TEST(ExternalPolicyTest, HandshakeMismatchFailsBeforeUse) {
  EXPECT_EQ(code_of([] {
              ExternalPolicy("bad", fake({"bad-handshake"}),
                             ActionSpace::discrete(2));
            }),
            ErrorCode::kProtocol);
}

TEST(ExternalPolicyTest, HandshakeMismatchSurfacesBeforeSampling) {
  io::PolicyEntry e;
  e.id = "bad";
  e.kind = "external";
  e.command = fake({"bad-handshake"});
  try {
    experiment::make_policies({e}, ActionSpace::discrete(2), 10);
    FAIL();
  } catch (const Error& err) {
    EXPECT_NE(std::string(err.what()).find("'bad'"), std::string::npos);
  }
}

TEST(ExternalPolicyTest, Timeout) {
  const ExternalPolicy ext("slow", fake({"slow"}), ActionSpace::discrete(2), 200);
  Rng rng(0);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { ext.act(std::vector<double>{0.0}, rng); }),
            ErrorCode::kTimeout);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(5));
}

TEST(ExternalPolicyTest, MalformedReply) {
  const ExternalPolicy ext("g", fake({"garbage"}), ActionSpace::discrete(2));
  Rng rng(0);
  EXPECT_EQ(code_of([&] { ext.act(std::vector<double>{0.0}, rng); }),
            ErrorCode::kProtocol);
}

TEST(ExternalPolicyTest, ActionOutsideSpace) {
  const ExternalPolicy ext("o", fake({"out-of-range"}), ActionSpace::discrete(2));
  Rng rng(0);
  EXPECT_EQ(code_of([&] { ext.act(std::vector<double>{0.0}, rng); }),
            ErrorCode::kProtocol);
}

TEST(ExternalPolicyTest, ChildExitIsReported) {
  const ExternalPolicy ext("c", fake({"crash-after", "2"}), ActionSpace::discrete(2));
  Rng rng(0);
  ext.act(std::vector<double>{0.0}, rng);
  ext.act(std::vector<double>{0.0}, rng);
  EXPECT_THROW(ext.act(std::vector<double>{0.0}, rng), Error);
}

TEST(ExternalPolicyTest, SpawnFailure) {
  EXPECT_EQ(code_of([] {
              ExternalPolicy("nope", {"/nonexistent/popr-policy"},
                             ActionSpace::discrete(2), 500);
            }),
            ErrorCode::kIo);
}

TEST(ExternalPolicyTest, ShellCommandFromManifest) {
  const auto entries = io::parse_manifest(
      Json::parse(R"({"policies":[{"id":"sh","kind":"external","command":")" +
                  kFake + R"( constant 1","timeout_ms":2000}]})"),
      "inline");
  const auto policies =
      experiment::make_policies(entries, ActionSpace::discrete(2), 10);
  Rng rng(0);
  EXPECT_EQ(std::get<int>(policies[0]->act(std::vector<double>{3.0}, rng)), 1);
}

TEST(ExternalPolicyTest, TenThousandQueriesWithoutDescriptorLeak) {
  const std::size_t before = open_descriptors();
  {
    const ExternalPolicy ext("leak", fake({"constant", "1"}),
                             ActionSpace::discrete(2));
    Rng rng(0);
    for (int i = 0; i < 10000; ++i)
      ASSERT_EQ(std::get<int>(ext.act(std::vector<double>{double(i % 10)}, rng)), 1);
  }
  EXPECT_EQ(open_descriptors(), before);
}

TEST(ExternalPolicyTest, ProcessTerminatedOnDrop) {
  pid_t pid = 0;
  {
    const ExternalPolicy ext("p", fake({"slow"}), ActionSpace::discrete(2), 100);
    pid = ext.pid();
    EXPECT_EQ(::kill(pid, 0), 0);
  }
  // The child has been reaped, so the pid no longer names our process.
  EXPECT_NE(::waitpid(pid, nullptr, WNOHANG), 0);
}

TEST(ExternalPolicyTest, ParallelChainsUseSeparateProcesses) {
  std::vector<std::unique_ptr<Policy>> policies;
  policies.push_back(std::make_unique<ExternalPolicy>(
      "zero", fake({"constant", "0"}), ActionSpace::discrete(2)));
  policies.push_back(std::make_unique<ExternalPolicy>(
      "one", fake({"constant", "1"}), ActionSpace::discrete(2)));
  policies.push_back(std::make_unique<toy::ExpertPolicy>(10));
  const ExpertDataset d = toy::generate_dataset({}, toy::ExpertPolicy(10), 5);
  SamplerConfig c;
  c.iterations = 50;
  c.thin = 5;
  const auto out = run_all(d, policies, c);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].samples.size(), 10u);
  EXPECT_GT(out[2].mean(), out[1].mean());
}

}  // namespace
}  // namespace popr
