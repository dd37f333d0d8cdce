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

// Reader and writer for the NTU RGB+D ".skeleton" text layout:
//
//   frame count
//   per frame: body count, then per body
//     one body-info line (10 values), joint count, one line per joint whose
//     first three values are camera-space x, y, z.
//
// Only the first body of each frame is kept. Frames without bodies are skipped.

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ufefp/error.hpp"
#include "ufefp/skeleton.hpp"

namespace ufefp {

inline constexpr int kNtuJoints = 25;

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  /// Next non-empty line split on whitespace.
  std::vector<std::string_view> fields() {
    for (;;) {
      if (!std::getline(in_, line_)) throw ParseError("unexpected end of file", line_no_ + 1);
      ++line_no_;
      if (!line_.empty() && line_.back() == '\r') line_.pop_back();
      split();
      if (!parts_.empty()) return parts_;
    }
  }

  long integer() {
    auto f = fields();
    if (f.size() != 1) throw ParseError("expected a single integer", line_no_);
    return to_long(f[0]);
  }

  long to_long(std::string_view s) const {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ParseError("malformed integer '" + std::string(s) + "'", line_no_);
    return v;
  }

  double to_double(std::string_view s) const {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ParseError("malformed number '" + std::string(s) + "'", line_no_);
    return v;
  }

  std::size_t line() const { return line_no_; }

  bool at_end() {
    std::string rest;
    while (std::getline(in_, rest)) {
      ++line_no_;
      if (rest.find_first_not_of(" \t\r") != std::string::npos) return false;
    }
    return true;
  }

 private:
  void split() {
    parts_.clear();
    std::string_view v(line_);
    std::size_t i = 0;
    while (i < v.size()) {
      while (i < v.size() && (v[i] == ' ' || v[i] == '\t')) ++i;
      std::size_t j = i;
      while (j < v.size() && v[j] != ' ' && v[j] != '\t') ++j;
      if (j > i) parts_.push_back(v.substr(i, j - i));
      i = j;
    }
  }

  std::istream& in_;
  std::string line_;
  std::vector<std::string_view> parts_;
  std::size_t line_no_ = 0;
};

}  // namespace detail

inline SkeletonSequence parse_ntu_skeleton(std::istream& in) {
  detail::LineReader r(in);
  const long frame_count = r.integer();
  if (frame_count < 0) throw ParseError("negative frame count", r.line());
  std::vector<double> coords;
  int kept = 0;
  for (long f = 0; f < frame_count; ++f) {
    const long bodies = r.integer();
    if (bodies < 0) throw ParseError("negative body count", r.line());
    for (long b = 0; b < bodies; ++b) {
      if (r.fields().size() != 10) throw ParseError("body info line must hold 10 values", r.line());
      const long joints = r.integer();
      if (joints != kNtuJoints)
        throw ParseError("expected " + std::to_string(kNtuJoints) + " joints, got " + std::to_string(joints),
                         r.line());
      for (long j = 0; j < joints; ++j) {
        auto f3 = r.fields();
        if (f3.size() < 3) throw ParseError("joint line needs at least x y z", r.line());
        const double x = r.to_double(f3[0]), y = r.to_double(f3[1]), z = r.to_double(f3[2]);
        for (std::size_t k = 3; k < f3.size(); ++k) r.to_double(f3[k]);
        if (b == 0) coords.insert(coords.end(), {x, y, z});
      }
    }
    if (bodies > 0) ++kept;
  }
  if (!r.at_end()) throw ParseError("trailing content after the last frame", r.line());
  if (kept == 0) throw DataError("skeleton file holds no body in any frame");
  SkeletonSequence seq(kept, kNtuJoints);
  seq.coords = std::move(coords);
  seq.validate();
  return seq;
}

inline SkeletonSequence load_ntu_skeleton(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_ntu_skeleton(in);
}

/// Writes one body per frame; non-coordinate fields are zero.
inline void write_ntu_skeleton(std::ostream& out, const SkeletonSequence& seq) {
  if (seq.joints != kNtuJoints) throw InputError("NTU writer needs 25-joint sequences");
  std::ostringstream s;
  s.precision(17);
  s << seq.frames << '\n';
  for (int f = 0; f < seq.frames; ++f) {
    s << "1\n72057594037931101 0 0 0 0 0 0 0 0 2\n" << kNtuJoints << '\n';
    for (int j = 0; j < kNtuJoints; ++j)
      s << seq.at(f, j, 0) << ' ' << seq.at(f, j, 1) << ' ' << seq.at(f, j, 2) << " 0 0 0 0 0 0 0 0 2\n";
  }
  out << s.str();
}

inline void save_ntu_skeleton(const SkeletonSequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_ntu_skeleton(out, seq);
}

}  // namespace ufefp
