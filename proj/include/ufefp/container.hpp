// Copyright 2026 The U-FEFP Authors. All Rights Reserved.
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

// Single-file archive used for checkpoints and datasets.
//
// Layout (little endian):
//   magic "UFEFPAR\0" | u32 version | u32 entry count |
//   entries: u32 name length, name bytes, u8 kind, u64 payload length, payload |
//   u32 CRC-32 of every preceding byte.

#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ufefp/error.hpp"

namespace ufefp {

inline constexpr std::array<char, 8> kArchiveMagic{'U', 'F', 'E', 'F', 'P', 'A', 'R', '\0'};
inline constexpr std::uint32_t kArchiveVersion = 1;

enum class BlobKind : std::uint8_t { kFloat32 = 0, kFloat64 = 1, kInt64 = 2, kText = 3 };

struct Blob {
  BlobKind kind = BlobKind::kText;
  std::vector<std::uint8_t> bytes;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Archive {
 public:
  template <class T>
  void put(const std::string& name, std::span<const T> values) {
    Blob b;
    b.kind = kind_of<T>();
    b.bytes.resize(values.size_bytes());
    if (!values.empty()) std::memcpy(b.bytes.data(), values.data(), values.size_bytes());
    entries_[name] = std::move(b);
  }
  template <class T>
  void put(const std::string& name, const std::vector<T>& values) {
    put(name, std::span<const T>(values));
  }
  void put_text(const std::string& name, const std::string& text) {
    Blob b;
    b.kind = BlobKind::kText;
    b.bytes.assign(text.begin(), text.end());
    entries_[name] = std::move(b);
  }
  void put_int(const std::string& name, std::int64_t v) { put(name, std::vector<std::int64_t>{v}); }
  void put_real(const std::string& name, double v) { put(name, std::vector<double>{v}); }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  template <class T>
  std::vector<T> get(const std::string& name) const {
    const Blob& b = find(name);
    if (b.kind != kind_of<T>()) throw DataError("archive entry '" + name + "' has an unexpected type");
    if (b.bytes.size() % sizeof(T) != 0) throw IntegrityError("archive entry '" + name + "' is misaligned");
    std::vector<T> out(b.bytes.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), b.bytes.data(), b.bytes.size());
    return out;
  }
  std::string get_text(const std::string& name) const {
    const Blob& b = find(name);
    if (b.kind != BlobKind::kText) throw DataError("archive entry '" + name + "' is not text");
    return std::string(b.bytes.begin(), b.bytes.end());
  }
  std::int64_t get_int(const std::string& name) const { return scalar<std::int64_t>(name); }
  double get_real(const std::string& name) const { return scalar<double>(name); }

  const std::map<std::string, Blob>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize(std::uint32_t version = kArchiveVersion) const {
    std::vector<std::uint8_t> out(kArchiveMagic.begin(), kArchiveMagic.end());
    append(out, version);
    append(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, blob] : entries_) {
      append(out, static_cast<std::uint32_t>(name.size()));
      out.insert(out.end(), name.begin(), name.end());
      out.push_back(static_cast<std::uint8_t>(blob.kind));
      append(out, static_cast<std::uint64_t>(blob.bytes.size()));
      out.insert(out.end(), blob.bytes.begin(), blob.bytes.end());
    }
    append(out, crc32_of(out));
    return out;
  }

  static Archive deserialize(std::span<const std::uint8_t> data) {
    const std::size_t header = kArchiveMagic.size() + 8;
    if (data.size() < header + 4 || std::memcmp(data.data(), kArchiveMagic.data(), kArchiveMagic.size()) != 0)
      throw IntegrityError("not an archive or truncated header");
    std::size_t pos = kArchiveMagic.size();
    const auto version = read<std::uint32_t>(data, pos);
    if (version != kArchiveVersion)
      throw VersionError("archive format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kArchiveVersion) + ")");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, data.data() + data.size() - 4, 4);
    if (crc32_of(data.first(data.size() - 4)) != stored_crc) throw IntegrityError("archive checksum mismatch");
    const auto count = read<std::uint32_t>(data, pos);
    const std::size_t end = data.size() - 4;
    Archive a;
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = read<std::uint32_t>(data, pos, end);
      if (len > end - pos) throw IntegrityError("archive entry name overruns the file");
      std::string name(reinterpret_cast<const char*>(data.data() + pos), len);
      pos += len;
      if (pos + 1 > end) throw IntegrityError("archive entry header overruns the file");
      Blob b;
      const std::uint8_t kind = data[pos++];
      if (kind > static_cast<std::uint8_t>(BlobKind::kText)) throw IntegrityError("unknown archive entry kind");
      b.kind = static_cast<BlobKind>(kind);
      const auto size = read<std::uint64_t>(data, pos, end);
      if (size > end - pos) throw IntegrityError("archive entry payload overruns the file");
      b.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(pos),
                     data.begin() + static_cast<std::ptrdiff_t>(pos + size));
      pos += size;
      a.entries_[name] = std::move(b);
    }
    if (pos != end) throw IntegrityError("trailing bytes after the last archive entry");
    return a;
  }

  /// Writes to a temporary sibling and renames it over `path`.
  void save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw DataError("cannot open " + tmp.string() + " for writing");
      f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!f) throw DataError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static Archive load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }

 private:
  std::map<std::string, Blob> entries_;

  template <class T>
  static constexpr BlobKind kind_of() {
    if constexpr (std::is_same_v<T, float>) return BlobKind::kFloat32;
    else if constexpr (std::is_same_v<T, double>) return BlobKind::kFloat64;
    else if constexpr (std::is_same_v<T, std::int64_t>) return BlobKind::kInt64;
    else static_assert(sizeof(T) == 0, "unsupported archive element type");
  }

  const Blob& find(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw DataError("archive has no entry '" + name + "'");
    return it->second;
  }

  template <class T>
  T scalar(const std::string& name) const {
    auto v = get<T>(name);
    if (v.size() != 1) throw DataError("archive entry '" + name + "' is not a scalar");
    return v[0];
  }

  template <class T>
  static void append(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
  }

  template <class T>
  static T read(std::span<const std::uint8_t> data, std::size_t& pos, std::size_t end = 0) {
    if (end == 0) end = data.size();
    if (pos + sizeof(T) > end) throw IntegrityError("archive truncated");
    T v;
    std::memcpy(&v, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

}  // namespace ufefp
