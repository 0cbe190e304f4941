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

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "popr/core.hpp"
#include "popr/error.hpp"

extern "C" char** environ;

namespace popr {

/// A policy served by a child process over a line protocol on its
/// stdin/stdout, one JSON object per line:
///
///   -> {"protocol":1,"action_space":{"kind":"discrete","n":2}}
///   <- {"protocol":1,"action_space":{"kind":"discrete","n":2}}
///   -> {"state":[0.0]}
///   <- {"action":1}
///
/// The handshake is validated before the object is usable. Every exchange
/// is bounded by the timeout. The child is terminated on destruction.
/// Instances are not thread-safe; clone() spawns a separate process.
class ExternalPolicy final : public Policy {
 public:
  ExternalPolicy(std::string id, std::vector<std::string> command,
                 ActionSpace space, int timeout_ms = 5000)
      : Policy(std::move(id)),
        command_(std::move(command)),
        space_(space),
        timeout_ms_(timeout_ms) {
    require(!command_.empty(), ErrorCode::kValidation,
            "external policy '" + this->id() + "' has no command");
    require(timeout_ms_ > 0, ErrorCode::kValidation,
            "external policy timeout must be positive");
    spawn();
    try {
      handshake();
    } catch (...) {
      terminate();
      throw;
    }
  }

  ExternalPolicy(const ExternalPolicy&) = delete;
  ExternalPolicy& operator=(const ExternalPolicy&) = delete;

  ~ExternalPolicy() override { terminate(); }

  ActionSpace action_space() const override { return space_; }

  Action act(std::span<const double> state, Rng&) const override {
    nlohmann::json q;
    q["state"] = std::vector<double>(state.begin(), state.end());
    send_line(q.dump());
    const nlohmann::json r = parse_reply(receive_line());
    require(r.is_object() && r.contains("action"), ErrorCode::kProtocol,
            where() + "reply lacks 'action'");
    Action a;
    const auto& ja = r["action"];
    if (space_.is_discrete()) {
      require(ja.is_number_integer(), ErrorCode::kProtocol,
              where() + "discrete action must be an integer");
      a = ja.get<int>();
    } else {
      require(ja.is_array(), ErrorCode::kProtocol,
              where() + "continuous action must be an array");
      std::vector<double> v;
      for (const auto& x : ja) {
        require(x.is_number(), ErrorCode::kProtocol,
                where() + "continuous action must be numeric");
        v.push_back(x.get<double>());
      }
      a = std::move(v);
    }
    require(space_.contains(a), ErrorCode::kProtocol,
            where() + "action outside " + space_.describe());
    return a;
  }

  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<ExternalPolicy>(id(), command_, space_,
                                            timeout_ms_);
  }

  pid_t pid() const { return pid_; }

 private:
  std::string where() const { return "external policy '" + id() + "': "; }

  static nlohmann::json space_json(const ActionSpace& s) {
    return {{"kind", s.is_discrete() ? "discrete" : "continuous"},
            {"n", s.size()}};
  }

  nlohmann::json parse_reply(const std::string& line) const {
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::kProtocol, where() + "malformed reply '" + line + "'");
    }
  }

  void spawn() {
    static std::once_flag ignore_sigpipe;
    std::call_once(ignore_sigpipe, [] { ::signal(SIGPIPE, SIG_IGN); });

    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0)
      fail(ErrorCode::kIo, where() + "pipe: " + std::strerror(errno));
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      close_pair(to_child);
      fail(ErrorCode::kIo, where() + "pipe: " + std::strerror(errno));
    }
    std::vector<char*> argv;
    for (auto& s : command_) argv.push_back(s.data());
    argv.push_back(nullptr);

    posix_spawn_file_actions_t actions;
    ::posix_spawn_file_actions_init(&actions);
    ::posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
    ::posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);
    pid_t pid = -1;
    const int rc =
        ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    ::posix_spawn_file_actions_destroy(&actions);
    ::close(to_child[0]);
    ::close(from_child[1]);
    if (rc != 0) {
      ::close(to_child[1]);
      ::close(from_child[0]);
      fail(ErrorCode::kIo, where() + "cannot execute '" + command_[0] +
                               "': " + std::strerror(rc));
    }
    pid_ = pid;
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
  }

  void handshake() {
    nlohmann::json hello;
    hello["protocol"] = 1;
    hello["action_space"] = space_json(space_);
    send_line(hello.dump());
    const nlohmann::json r = parse_reply(receive_line());
    require(r.is_object() && r.contains("protocol") &&
                r["protocol"] == 1 && r.contains("action_space"),
            ErrorCode::kProtocol,
            where() + "handshake reply must carry protocol 1 and action_space");
    require(r["action_space"] == space_json(space_), ErrorCode::kProtocol,
            where() + "handshake action_space " + r["action_space"].dump() +
                " does not match dataset " + space_json(space_).dump());
  }

  int remaining_ms(std::chrono::steady_clock::time_point deadline) const {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    return static_cast<int>(std::max<long long>(0, left.count()));
  }

  void send_line(const std::string& line) const {
    const std::string msg = line + "\n";
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::milliseconds(timeout_ms_);
    std::size_t off = 0;
    while (off < msg.size()) {
      pollfd p{in_fd_, POLLOUT, 0};
      const int rc = ::poll(&p, 1, remaining_ms(deadline));
      if (rc < 0 && errno == EINTR) continue;
      require(rc > 0, ErrorCode::kTimeout, where() + "timed out writing request");
      const ssize_t n = ::write(in_fd_, msg.data() + off, msg.size() - off);
      if (n < 0 && errno == EINTR) continue;
      require(n > 0, ErrorCode::kProtocol,
              where() + "process closed its input (" + std::strerror(errno) +
                  ")");
      off += static_cast<std::size_t>(n);
    }
  }

  std::string receive_line() const {
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::milliseconds(timeout_ms_);
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      pollfd p{out_fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, remaining_ms(deadline));
      if (rc < 0 && errno == EINTR) continue;
      require(rc > 0, ErrorCode::kTimeout,
              where() + "no reply within " + std::to_string(timeout_ms_) +
                  " ms");
      char chunk[4096];
      const ssize_t n = ::read(out_fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      require(n > 0, ErrorCode::kProtocol,
              where() + "process exited before replying");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  static void close_pair(int fds[2]) {
    ::close(fds[0]);
    ::close(fds[1]);
  }

  void terminate() noexcept {
    if (in_fd_ >= 0) ::close(in_fd_);
    if (out_fd_ >= 0) ::close(out_fd_);
    in_fd_ = out_fd_ = -1;
    if (pid_ <= 0) return;
    // Closing stdin lets well-behaved children exit; escalate otherwise.
    for (int i = 0; i < 20; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ::kill(pid_, SIGTERM);
    for (int i = 0; i < 40; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
  }

  std::vector<std::string> command_;
  ActionSpace space_;
  int timeout_ms_;
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  mutable std::string buffer_;
};

}  // namespace popr
