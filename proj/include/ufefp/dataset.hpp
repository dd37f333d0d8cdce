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

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ufefp/augment.hpp"
#include "ufefp/container.hpp"
#include "ufefp/error.hpp"
#include "ufefp/skeleton.hpp"

namespace ufefp {

struct Dataset {
  SkeletonGraph graph;
  std::vector<SkeletonSequence> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  /// Number of classes implied by the largest label (0 when unlabeled).
  int class_count() const {
    int k = 0;
    for (const auto& s : samples)
      if (s.label) k = std::max(k, *s.label + 1);
    return k;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
      if (!s.label) throw InputError("dataset sample '" + s.meta + "' has no label");
      out.push_back(*s.label);
    }
    return out;
  }

  void validate() const {
    graph.validate();
    for (const auto& s : samples) s.validate(graph);
  }
};

/// Linearly resamples a whole sequence to exactly `frames` frames.
inline SkeletonSequence fit_frames(const SkeletonSequence& seq, int frames) {
  if (seq.frames == frames) return seq;
  return resize_frames(seq, 0, seq.frames, frames);
}

/// First `per_class` samples of every class go to `first`, the rest to `second`.
inline std::pair<Dataset, Dataset> split_per_class(const Dataset& data, int per_class) {
  Dataset first{data.graph, {}}, second{data.graph, {}};
  std::map<int, int> seen;
  for (const auto& s : data.samples) {
    const int label = s.label.value_or(-1);
    (seen[label]++ < per_class ? first : second).samples.push_back(s);
  }
  return {std::move(first), std::move(second)};
}

inline Archive dataset_to_archive(const Dataset& data) {
  Archive a;
  a.put_text("kind", "dataset");
  a.put_int("graph/joint_count", data.graph.joint_count);
  a.put_int("graph/center_joint", data.graph.center_joint);
  a.put_int("graph/partition", static_cast<std::int64_t>(data.graph.partition));
  std::vector<std::int64_t> edges;
  for (const auto& [u, v] : data.graph.edges) {
    edges.push_back(u);
    edges.push_back(v);
  }
  a.put("graph/edges", edges);
  std::vector<std::int64_t> frames, joints, labels;
  std::vector<double> coords;
  std::string meta;
  for (const auto& s : data.samples) {
    frames.push_back(s.frames);
    joints.push_back(s.joints);
    labels.push_back(s.label.value_or(-1));
    coords.insert(coords.end(), s.coords.begin(), s.coords.end());
    meta += s.meta;
    meta += '\n';
  }
  a.put("samples/frames", frames);
  a.put("samples/joints", joints);
  a.put("samples/labels", labels);
  a.put("samples/coords", coords);
  a.put_text("samples/meta", meta);
  return a;
}

inline Dataset dataset_from_archive(const Archive& a) {
  if (!a.has("kind") || a.get_text("kind") != "dataset") throw DataError("archive does not hold a dataset");
  Dataset d;
  d.graph.joint_count = static_cast<int>(a.get_int("graph/joint_count"));
  d.graph.center_joint = static_cast<int>(a.get_int("graph/center_joint"));
  d.graph.partition = static_cast<PartitionStrategy>(a.get_int("graph/partition"));
  const auto edges = a.get<std::int64_t>("graph/edges");
  if (edges.size() % 2) throw DataError("dataset edge list has odd length");
  for (std::size_t i = 0; i < edges.size(); i += 2)
    d.graph.edges.emplace_back(static_cast<int>(edges[i]), static_cast<int>(edges[i + 1]));
  const auto frames = a.get<std::int64_t>("samples/frames");
  const auto joints = a.get<std::int64_t>("samples/joints");
  const auto labels = a.get<std::int64_t>("samples/labels");
  const auto coords = a.get<double>("samples/coords");
  const std::string meta = a.get_text("samples/meta");
  if (frames.size() != joints.size() || frames.size() != labels.size())
    throw DataError("dataset sample tables disagree in length");
  std::size_t offset = 0, meta_pos = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    SkeletonSequence s(static_cast<int>(frames[i]), static_cast<int>(joints[i]));
    if (offset + s.coords.size() > coords.size()) throw DataError("dataset coordinates truncated");
    std::copy_n(coords.begin() + static_cast<std::ptrdiff_t>(offset), s.coords.size(), s.coords.begin());
    offset += s.coords.size();
    if (labels[i] >= 0) s.label = static_cast<int>(labels[i]);
    const auto nl = meta.find('\n', meta_pos);
    if (nl == std::string::npos) throw DataError("dataset metadata truncated");
    s.meta = meta.substr(meta_pos, nl - meta_pos);
    meta_pos = nl + 1;
    d.samples.push_back(std::move(s));
  }
  if (offset != coords.size()) throw DataError("dataset has trailing coordinates");
  try {
    d.validate();
  } catch (const Error& e) {
    throw DataError(std::string("invalid dataset: ") + e.what());
  }
  return d;
}

inline void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  dataset_to_archive(data).save(path);
}

inline Dataset load_dataset(const std::filesystem::path& path) { return dataset_from_archive(Archive::load(path)); }

}  // namespace ufefp
