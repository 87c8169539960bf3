/*
 * Copyright 2026 The MRL Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace mrl {

enum class ErrorKind {
  kConstruction,
  kShape,
  kUsage,
  kOracle,
  kConfig,
  kPartition,
  kNonFinite,
  kBuild,
  kAccounting,
  kCheckpoint,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConstruction: return "construction error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kUsage: return "usage error";
    case ErrorKind::kOracle: return "oracle error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kPartition: return "partition error";
    case ErrorKind::kNonFinite: return "validity error";
    case ErrorKind::kBuild: return "build error";
    case ErrorKind::kAccounting: return "accounting error";
    case ErrorKind::kCheckpoint: return "checkpoint error";
  }
  return "error";
}

/// Single exception type for the library; `kind()` tells callers which
/// contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(ErrorKind kind, Args&&... args) {
  throw Error(kind, detail::concat(std::forward<Args>(args)...));
}

}  // namespace mrl
