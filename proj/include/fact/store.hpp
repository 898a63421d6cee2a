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

// FTC1 tensor container.
//
//   offset 0   "FTC1"
//   offset 4   u64 little-endian header length L
//   offset 12  L bytes of UTF-8 JSON:
//              {"format_version":1,
//               "entries":[{"name","dtype","shape","byte_offset","byte_length"}],
//               "meta":{string:string}}
//   payload    little-endian row-major blobs; byte_offset is absolute and a
//              multiple of 64; gaps are zero-filled
//
// Entries are laid out in insertion order. The header is serialized with
// sorted keys, so identical containers produce identical bytes.

#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "fact/error.hpp"
#include "fact/tensor.hpp"

namespace fact {

inline constexpr char kContainerMagic[4] = {'F', 'T', 'C', '1'};
inline constexpr std::int64_t kContainerVersion = 1;
inline constexpr std::size_t kContainerAlign = 64;

enum class DType { kF32, kF64, kU8 };

inline std::size_t dtype_size(DType d) { return d == DType::kF64 ? 8 : d == DType::kF32 ? 4 : 1; }

inline const char* dtype_name(DType d) {
  switch (d) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kU8: return "u8";
  }
  return "?";
}

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kF32;
  else if constexpr (std::is_same_v<T, double>) return DType::kF64;
  else {
    static_assert(std::is_same_v<T, std::uint8_t>, "container supports f32, f64 and u8");
    return DType::kU8;
  }
}

enum class ContainerIssue { kBadMagic, kUnsupportedVersion, kBadHeader, kUnknownDtype, kTruncated, kOverlap,
                            kMisaligned, kLengthMismatch, kDuplicateName, kMissingEntry, kWrongDtype };

class ContainerError : public Error {
 public:
  ContainerError(ContainerIssue issue, const std::string& what) : Error(ErrorKind::kFormat, what), issue_(issue) {}
  ContainerIssue issue() const noexcept { return issue_; }

 private:
  ContainerIssue issue_;
};

namespace detail {

template <class T>
void store_le(T value, std::uint8_t* out) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::memcpy(out, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) std::reverse(out, out + sizeof(T));
}

template <class T>
T load_le(const std::uint8_t* in) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, in, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline std::size_t align_up(std::size_t v) { return (v + kContainerAlign - 1) / kContainerAlign * kContainerAlign; }

}  // namespace detail

/// One named blob, held as little-endian bytes.
struct ContainerEntry {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  template <class T>
  static ContainerEntry from(std::string name, const Tensor<T>& t) {
    ContainerEntry e{std::move(name), dtype_of<T>(), t.shape(), {}};
    e.bytes.resize(t.size() * sizeof(T));
    for (std::size_t i = 0; i < t.size(); ++i) detail::store_le<T>(t[i], e.bytes.data() + i * sizeof(T));
    return e;
  }

  template <class T>
  Tensor<T> as() const {
    if (dtype != dtype_of<T>())
      throw ContainerError(ContainerIssue::kWrongDtype, "entry '" + name + "' has dtype " + dtype_name(dtype) +
                                                            ", expected " + dtype_name(dtype_of<T>()));
    std::vector<T> data(numel(shape));
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = detail::load_le<T>(bytes.data() + i * sizeof(T));
    return Tensor<T>(shape, std::move(data));
  }

  friend bool operator==(const ContainerEntry&, const ContainerEntry&) = default;
};

struct TensorContainer {
  std::vector<ContainerEntry> entries;
  std::map<std::string, std::string> meta;

  template <class T>
  void add(std::string name, const Tensor<T>& t) {
    entries.push_back(ContainerEntry::from(std::move(name), t));
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const ContainerEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  template <class T>
  Tensor<T> get(const std::string& name) const {
    const ContainerEntry* e = find(name);
    if (!e) throw ContainerError(ContainerIssue::kMissingEntry, "container has no entry '" + name + "'");
    return e->template as<T>();
  }

  std::string meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }

  const std::string& meta_required(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw ContainerError(ContainerIssue::kBadHeader, "container meta lacks key '" + key + "'");
    return it->second;
  }

  friend bool operator==(const TensorContainer&, const TensorContainer&) = default;
};

/// Serialized bytes of a container.
inline std::vector<std::uint8_t> encode_container(const TensorContainer& c) {
  std::set<std::string> names;
  for (const auto& e : c.entries) {
    if (!names.insert(e.name).second)
      throw ContainerError(ContainerIssue::kDuplicateName, "duplicate entry name '" + e.name + "'");
    if (e.bytes.size() != dtype_size(e.dtype) * numel(e.shape))
      throw ContainerError(ContainerIssue::kLengthMismatch, "entry '" + e.name + "' byte length does not match shape");
  }
  // Offsets depend on the header length, which depends on the offsets'
  // digit count; iterate to a fixed point.
  std::vector<std::size_t> offsets(c.entries.size(), 0);
  std::string header;
  for (int pass = 0; pass < 16; ++pass) {
    nlohmann::json j;
    j["format_version"] = kContainerVersion;
    j["meta"] = nlohmann::json::object();
    for (const auto& [k, v] : c.meta) j["meta"][k] = v;
    j["entries"] = nlohmann::json::array();
    for (std::size_t i = 0; i < c.entries.size(); ++i) {
      const auto& e = c.entries[i];
      j["entries"].push_back({{"name", e.name},
                              {"dtype", dtype_name(e.dtype)},
                              {"shape", e.shape},
                              {"byte_offset", offsets[i]},
                              {"byte_length", e.bytes.size()}});
    }
    header = j.dump();
    std::vector<std::size_t> next(c.entries.size());
    std::size_t cursor = detail::align_up(12 + header.size());
    for (std::size_t i = 0; i < c.entries.size(); ++i) {
      next[i] = cursor;
      cursor = detail::align_up(cursor + c.entries[i].bytes.size());
    }
    if (next == offsets) break;
    offsets = std::move(next);
  }
  std::size_t total = detail::align_up(12 + header.size());
  if (!c.entries.empty()) total = offsets.back() + c.entries.back().bytes.size();
  std::vector<std::uint8_t> out(total, 0);
  std::memcpy(out.data(), kContainerMagic, 4);
  detail::store_le<std::uint64_t>(header.size(), out.data() + 4);
  std::memcpy(out.data() + 12, header.data(), header.size());
  for (std::size_t i = 0; i < c.entries.size(); ++i)
    std::copy(c.entries[i].bytes.begin(), c.entries[i].bytes.end(), out.begin() + static_cast<std::ptrdiff_t>(offsets[i]));
  return out;
}

/// Validates every structural invariant before any blob is copied out.
inline TensorContainer decode_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0)
    throw ContainerError(ContainerIssue::kBadMagic, "bad magic: not an FTC1 container");
  const std::uint64_t header_len = detail::load_le<std::uint64_t>(bytes.data() + 4);
  if (header_len > bytes.size() - 12)
    throw ContainerError(ContainerIssue::kTruncated, "truncated header: declared " + std::to_string(header_len) +
                                                         " bytes, file has " + std::to_string(bytes.size() - 12));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerIssue::kBadHeader, std::string("bad header JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_number_integer())
    throw ContainerError(ContainerIssue::kBadHeader, "bad header: missing integer format_version");
  const auto version = j["format_version"].get<std::int64_t>();
  if (version > kContainerVersion || version < 1)
    throw ContainerError(ContainerIssue::kUnsupportedVersion,
                         "unsupported format version " + std::to_string(version) + " (reader supports " +
                             std::to_string(kContainerVersion) + ")");
  if (!j.contains("entries") || !j["entries"].is_array())
    throw ContainerError(ContainerIssue::kBadHeader, "bad header: entries must be an array");

  struct Span {
    std::size_t begin, end;
    std::string name;
  };
  std::vector<Span> spans;
  TensorContainer c;
  std::set<std::string> names;
  const std::size_t payload_start = 12 + header_len;
  for (const auto& je : j["entries"]) {
    if (!je.is_object() || !je.contains("name") || !je["name"].is_string() || !je.contains("dtype") ||
        !je["dtype"].is_string() || !je.contains("shape") || !je["shape"].is_array() ||
        !je.contains("byte_offset") || !je["byte_offset"].is_number_unsigned() || !je.contains("byte_length") ||
        !je["byte_length"].is_number_unsigned())
      throw ContainerError(ContainerIssue::kBadHeader, "bad header: malformed entry " + je.dump());
    ContainerEntry e;
    e.name = je["name"].get<std::string>();
    if (!names.insert(e.name).second)
      throw ContainerError(ContainerIssue::kDuplicateName, "duplicate entry name '" + e.name + "'");
    const std::string dt = je["dtype"].get<std::string>();
    if (dt == "f32") e.dtype = DType::kF32;
    else if (dt == "f64") e.dtype = DType::kF64;
    else if (dt == "u8") e.dtype = DType::kU8;
    else throw ContainerError(ContainerIssue::kUnknownDtype, "unknown dtype '" + dt + "' in entry '" + e.name + "'");
    for (const auto& d : je["shape"]) {
      if (!d.is_number_unsigned())
        throw ContainerError(ContainerIssue::kBadHeader, "bad header: shape of '" + e.name + "' is not unsigned");
      e.shape.push_back(d.get<std::size_t>());
    }
    const auto off = je["byte_offset"].get<std::uint64_t>();
    const auto len = je["byte_length"].get<std::uint64_t>();
    if (len != dtype_size(e.dtype) * numel(e.shape))
      throw ContainerError(ContainerIssue::kLengthMismatch,
                           "entry '" + e.name + "' declares " + std::to_string(len) + " bytes, shape needs " +
                               std::to_string(dtype_size(e.dtype) * numel(e.shape)));
    if (off % kContainerAlign != 0)
      throw ContainerError(ContainerIssue::kMisaligned, "entry '" + e.name + "' offset is not 64-byte aligned");
    if (off < payload_start)
      throw ContainerError(ContainerIssue::kOverlap, "overlapping entries: '" + e.name + "' overlaps the header");
    if (off > bytes.size() || len > bytes.size() - off)
      throw ContainerError(ContainerIssue::kTruncated, "truncated payload: entry '" + e.name + "' ends at " +
                                                           std::to_string(off + len) + ", file has " +
                                                           std::to_string(bytes.size()) + " bytes");
    spans.push_back({static_cast<std::size_t>(off), static_cast<std::size_t>(off + len), e.name});
    c.entries.push_back(std::move(e));
  }
  std::vector<Span> sorted = spans;
  std::sort(sorted.begin(), sorted.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].begin < sorted[i - 1].end)
      throw ContainerError(ContainerIssue::kOverlap,
                           "overlapping entries: '" + sorted[i - 1].name + "' and '" + sorted[i].name + "'");
  if (j.contains("meta")) {
    if (!j["meta"].is_object()) throw ContainerError(ContainerIssue::kBadHeader, "bad header: meta must be an object");
    for (const auto& [k, v] : j["meta"].items()) {
      if (!v.is_string()) throw ContainerError(ContainerIssue::kBadHeader, "bad header: meta '" + k + "' is not a string");
      c.meta[k] = v.get<std::string>();
    }
  }
  for (std::size_t i = 0; i < c.entries.size(); ++i)
    c.entries[i].bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(spans[i].begin),
                              bytes.begin() + static_cast<std::ptrdiff_t>(spans[i].end));
  return c;
}

/// Writes and fsyncs.
inline void write_file_bytes(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) fail(ErrorKind::kIo, "cannot open " + path + " for writing: " + std::strerror(errno));
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const std::string err = std::strerror(errno);
      ::close(fd);
      fail(ErrorKind::kIo, "write to " + path + " failed: " + err);
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    const std::string err = std::strerror(errno);
    ::close(fd);
    fail(ErrorKind::kIo, "fsync of " + path + " failed: " + err);
  }
  if (::close(fd) != 0) fail(ErrorKind::kIo, "close of " + path + " failed");
}

inline void write_container(const TensorContainer& c, const std::string& path) {
  write_file_bytes(encode_container(c), path);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline TensorContainer read_container(const std::string& path) { return decode_container(read_file_bytes(path)); }

}  // namespace fact
