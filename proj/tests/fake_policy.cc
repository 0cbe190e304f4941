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

// Scripted child process for the external-policy tests.
//
//   fake_policy constant <k>     echo the handshake, answer action k
//   fake_policy mirror           continuous: answer the state as the action
//   fake_policy bad-handshake    answer the handshake with another space
//   fake_policy slow             echo the handshake, then never answer
//   fake_policy garbage          echo the handshake, then answer non-JSON
//   fake_policy out-of-range     echo the handshake, answer action 99
//   fake_policy crash-after <n>  answer n queries with action 0, then exit

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include "json.hpp"

int main(int argc, char** argv) {
  if (argc < 2) return 64;
  const std::string mode = argv[1];
  std::ios::sync_with_stdio(false);
  std::string line;
  if (!std::getline(std::cin, line)) return 0;
  if (mode == "bad-handshake") {
    std::cout << R"({"protocol":1,"action_space":{"kind":"discrete","n":7}})"
              << std::endl;
  } else {
    std::cout << line << std::endl;
  }
  long answered = 0;
  const long limit = mode == "crash-after" && argc > 2 ? std::atol(argv[2]) : -1;
  while (std::getline(std::cin, line)) {
    if (mode == "slow") {
      std::this_thread::sleep_for(std::chrono::seconds(30));
      return 0;
    }
    if (mode == "garbage") {
      std::cout << "this is not json" << std::endl;
      continue;
    }
    if (limit >= 0 && answered >= limit) return 3;
    if (mode == "mirror") {
      const auto q = nlohmann::json::parse(line);
      std::cout << nlohmann::json{{"action", q["state"]}}.dump() << std::endl;
    } else if (mode == "out-of-range") {
      std::cout << R"({"action":99})" << std::endl;
    } else {
      const int k = argc > 2 && mode == "constant" ? std::atoi(argv[2]) : 0;
      std::cout << "{\"action\":" << k << "}" << std::endl;
    }
    ++answered;
  }
  return 0;
}
