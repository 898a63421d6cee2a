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

// Plumbing shared by the fact subcommands: run manifests, dtype-agnostic
// artifact loading and small text writers.

#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fact/config.hpp"
#include "fact/error.hpp"
#include "fact/rng.hpp"
#include "fact/serialize.hpp"
#include "fact/store.hpp"

#ifndef FACT_VERSION
#define FACT_VERSION "0.0.0"
#endif

namespace fact::cli {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out;
  std::string dtype = "f32";
  KeyValueConfig config;
};

inline void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  require(!ec, ErrorKind::kIo, "cannot create directory " + parent.string() + ": " + ec.message());
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create directory " + dir + ": " + ec.message());
}

inline void write_text(const std::string& text, const std::string& path) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot open " + path + " for writing");
  out << text;
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed for " + path);
}

inline void write_json(const nlohmann::json& j, const std::string& path) { write_text(j.dump(2) + "\n", path); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Shortest round-trippable decimal, so CSV and JSON agree byte for byte.
inline std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// One per command invocation, written next to its outputs. Wall-clock
/// values live here and nowhere else.
class RunManifest {
 public:
  RunManifest(std::string command, const Common& common, nlohmann::json options)
      : command_(std::move(command)), common_(common), options_(std::move(options)), start_(Clock::now()),
        started_at_(std::time(nullptr)) {}

  void artifact(const std::string& path) { artifacts_.push_back(path); }

  void lap(const std::string& phase) {
    const auto now = Clock::now();
    timings_[phase] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

  /// Hash of the resolved config values and command options.
  std::string config_hash() const {
    nlohmann::json j{{"config", common_.config.values()}, {"options", options_}, {"dtype", common_.dtype}};
    return hex64(fnv1a64(j.dump()));
  }

  void write(const std::string& path) {
    timings_["total"] = std::chrono::duration<double>(Clock::now() - start_).count();
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&started_at_));
    nlohmann::json j{{"command", command_},
                     {"config_path", common_.config_path},
                     {"config_hash", config_hash()},
                     {"seed", common_.seed},
                     {"threads", common_.threads},
                     {"dtype", common_.dtype},
                     {"options", options_},
                     {"artifacts", artifacts_},
                     {"tool_version", FACT_VERSION},
                     {"started_at", stamp},
                     {"timings_s", timings_}};
    write_json(j, path);
  }

 private:
  using Clock = std::chrono::steady_clock;
  std::string command_;
  const Common& common_;
  nlohmann::json options_;
  std::vector<std::string> artifacts_;
  nlohmann::json timings_ = nlohmann::json::object();
  Clock::time_point start_, last_ = Clock::now();
  std::time_t started_at_;
};

inline bool holds_f64(const TensorContainer& c) {
  for (const auto& e : c.entries)
    if (e.dtype == DType::kF64) return true;
  return false;
}

template <class T>
Network<T> load_network(const std::string& path) {
  const TensorContainer c = read_container(path);
  if (holds_f64(c)) return network_from_container<double>(c).template cast<T>();
  return network_from_container<float>(c).template cast<T>();
}

template <class T>
SaeModel<T> load_sae(const std::string& path) {
  const TensorContainer c = read_container(path);
  if (holds_f64(c)) return sae_from_container<double>(c).template cast<T>();
  return sae_from_container<float>(c).template cast<T>();
}

inline std::string base64(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    std::uint32_t v = static_cast<std::uint32_t>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (i + 2 < bytes.size()) v |= bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kAlphabet[v & 63] : '=';
  }
  return out;
}

/// Minimal CSV builder; fields never contain commas or quotes here.
class Csv {
 public:
  explicit Csv(std::vector<std::string> header) { row(header); }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) text_ += (i ? "," : "") + fields[i];
    text_ += "\n";
  }

  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

}  // namespace fact::cli
