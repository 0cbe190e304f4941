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

#include <stdexcept>
#include <string>

namespace popr {

enum class ErrorCode {
  kInvalidArgument,   // bad input to a pure function
  kDimensionMismatch,
  kValidation,        // config / flag / file-content validation
  kParse,
  kIo,
  kProtocol,          // external policy wire protocol
  kTimeout,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // True for errors caused by the caller's input rather than the runtime.
  bool is_validation() const noexcept {
    return code_ == ErrorCode::kInvalidArgument ||
           code_ == ErrorCode::kDimensionMismatch ||
           code_ == ErrorCode::kValidation || code_ == ErrorCode::kParse;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace popr
