// Copyright 2026 The fact Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>

namespace fact::log {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

/// Threshold from FACT_LOG={error,info,debug}; info when unset.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("FACT_LOG");
    if (!env) return Level::kInfo;
    const std::string_view v(env);
    if (v == "error") return Level::kError;
    if (v == "debug") return Level::kDebug;
    return Level::kInfo;
  }();
  return level;
}

inline void write(Level level, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static constexpr const char* kTags[] = {"E", "I", "D"};
  std::fprintf(stderr, "[%s] %.*s\n", kTags[static_cast<int>(level)], static_cast<int>(msg.size()), msg.data());
}

inline void error(std::string_view msg) { write(Level::kError, msg); }
inline void info(std::string_view msg) { write(Level::kInfo, msg); }
inline void debug(std::string_view msg) { write(Level::kDebug, msg); }

}  // namespace fact::log
