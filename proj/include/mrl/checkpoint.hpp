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

// Binary checkpoint format, all integers and reals little-endian:
//
//   "MRL1"
//   repeated until end of file:
//     u32 name_length, name bytes
//     u32 rank, rank x u64 dims
//     prod(dims) x f64 values

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mrl/layers.hpp"

namespace mrl {

inline constexpr std::string_view kCheckpointMagic = "MRL1";

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ == bytes_.size(); }
  bool has(std::uint64_t n) const { return n <= bytes_.size() - pos_; }

  std::uint64_t read_uint(int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += bytes;
    return v;
  }

  std::string_view read_bytes(std::uint64_t n) {
    const std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const ParamList& params) {
  std::string out(kCheckpointMagic);
  for (const auto& [name, t] : params) {
    detail::put_u64(out, name.size(), 4);
    out += name;
    detail::put_u64(out, t.rank(), 4);
    for (Index d : t.shape().dims()) detail::put_u64(out, d, 8);
    for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, 3) != kCheckpointMagic.substr(0, 3)) {
    fail(ErrorKind::kCheckpoint, "bad magic: not an MRL checkpoint");
  }
  if (bytes.substr(0, 4) != kCheckpointMagic) {
    fail(ErrorKind::kCheckpoint, "unsupported checkpoint version '", bytes.substr(3, 1), "' (expected '1')");
  }
  detail::ByteReader reader(bytes.substr(kCheckpointMagic.size()));
  std::vector<CheckpointEntry> entries;
  auto truncated = [&](std::string_view during) {
    fail(ErrorKind::kCheckpoint, "truncated while reading ", during, "; last complete entry: ",
         entries.empty() ? std::string("<none>") : "'" + entries.back().name + "'");
  };
  while (!reader.at_end()) {
    CheckpointEntry e;
    if (!reader.has(4)) truncated("a name length");
    const std::uint64_t name_length = reader.read_uint(4);
    if (!reader.has(name_length)) truncated("a name");
    e.name = std::string(reader.read_bytes(name_length));
    if (!reader.has(4)) truncated("the rank of '" + e.name + "'");
    const std::uint64_t rank = reader.read_uint(4);
    if (rank == 0 || rank > kMaxRank) fail(ErrorKind::kCheckpoint, "entry '", e.name, "' has invalid rank ", rank);
    if (!reader.has(8 * rank)) truncated("the shape of '" + e.name + "'");
    std::vector<Index> dims;
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      dims.push_back(reader.read_uint(8));
      if (dims.back() == 0 || count > (std::uint64_t{1} << 40) / dims.back()) {
        fail(ErrorKind::kCheckpoint, "entry '", e.name, "' has an invalid shape");
      }
      count *= dims.back();
    }
    e.shape = Shape(dims);
    if (!reader.has(8 * count)) truncated("the values of '" + e.name + "'");
    e.values.resize(count);
    for (double& v : e.values) v = std::bit_cast<double>(reader.read_uint(8));
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kCheckpoint, "cannot open '", path.string(), "' for writing");
  const std::string bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kCheckpoint, "write to '", path.string(), "' failed");
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kCheckpoint, "cannot open '", path.string(), "' for reading");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Copies entries into `params`, which must match by name and shape exactly.
inline void load_entries(const std::vector<CheckpointEntry>& entries, ParamList& params) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const CheckpointEntry& e : entries) {
    if (!by_name.emplace(e.name, &e).second) fail(ErrorKind::kCheckpoint, "duplicate entry '", e.name, "'");
  }
  std::vector<std::string> missing, extra;
  for (const auto& [name, t] : params) {
    if (!by_name.count(name)) missing.push_back(name);
  }
  for (const CheckpointEntry& e : entries) {
    const bool known = std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.first == e.name; });
    if (!known) extra.push_back(e.name);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string message = "checkpoint does not match the model;";
    auto list = [&](const char* label, const std::vector<std::string>& names) {
      if (names.empty()) return;
      constexpr Index kShown = 8;
      message += std::string(" ") + label + " (" + std::to_string(names.size()) + ") [";
      for (Index i = 0; i < std::min(names.size(), kShown); ++i) message += (i ? ", " : "") + names[i];
      if (names.size() > kShown) message += ", ...";
      message += "]";
    };
    list("missing", missing);
    list("extra", extra);
    fail(ErrorKind::kCheckpoint, message);
  }
  for (auto& [name, t] : params) {
    const CheckpointEntry& e = *by_name.at(name);
    if (e.shape != t.shape()) {
      fail(ErrorKind::kCheckpoint, "entry '", name, "' has shape ", e.shape.str(), ", model expects ", t.shape().str());
    }
  }
  for (auto& [name, t] : params) {
    const CheckpointEntry& e = *by_name.at(name);
    std::copy(e.values.begin(), e.values.end(), t.mutable_data().begin());
  }
}

inline void load_checkpoint(const std::filesystem::path& path, ParamList& params) {
  load_entries(read_checkpoint(path), params);
}

}  // namespace mrl
