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
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ufefp/error.hpp"

namespace ufefp {

enum class PartitionStrategy { kUniform, kDistance, kSpatial };

inline int partition_count(PartitionStrategy s) {
  switch (s) {
    case PartitionStrategy::kUniform: return 1;
    case PartitionStrategy::kDistance: return 2;
    case PartitionStrategy::kSpatial: return 3;
  }
  return 1;
}

/// Joint topology of a single skeleton.
struct SkeletonGraph {
  int joint_count = 0;
  std::vector<std::pair<int, int>> edges;
  int center_joint = 0;
  PartitionStrategy partition = PartitionStrategy::kSpatial;

  /// Throws StructuralError if the topology is not a valid connected skeleton.
  void validate() const {
    if (joint_count <= 0) throw StructuralError("skeleton graph needs at least one joint");
    if (center_joint < 0 || center_joint >= joint_count) throw StructuralError("center joint out of range");
    std::set<std::pair<int, int>> seen;
    for (auto [a, b] : edges) {
      if (a < 0 || b < 0 || a >= joint_count || b >= joint_count)
        throw StructuralError("edge endpoint out of range: (" + std::to_string(a) + "," + std::to_string(b) + ")");
      if (a == b) throw StructuralError("self-loop edge at joint " + std::to_string(a));
      if (!seen.insert(std::minmax(a, b)).second)
        throw StructuralError("duplicate edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
    }
    const auto dist = hop_distance();
    for (int d : dist)
      if (d < 0) throw StructuralError("skeleton graph is disconnected");
  }

  std::vector<std::vector<int>> neighbours() const {
    std::vector<std::vector<int>> adj(joint_count);
    for (auto [a, b] : edges) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    for (auto& n : adj) std::sort(n.begin(), n.end());
    return adj;
  }

  /// Hop distance of every joint to the center joint; -1 when unreachable.
  std::vector<int> hop_distance() const {
    std::vector<int> dist(joint_count, -1);
    const auto adj = neighbours();
    std::queue<int> frontier;
    dist[center_joint] = 0;
    frontier.push(center_joint);
    while (!frontier.empty()) {
      const int u = frontier.front();
      frontier.pop();
      for (int v : adj[u])
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          frontier.push(v);
        }
    }
    return dist;
  }

  /// Parent of every joint in the breadth-first spanning tree rooted at the
  /// center joint (lowest-index neighbour wins); the root maps to itself.
  std::vector<int> spanning_tree_parents() const {
    std::vector<int> parent(joint_count, -1);
    const auto adj = neighbours();
    std::queue<int> frontier;
    parent[center_joint] = center_joint;
    frontier.push(center_joint);
    while (!frontier.empty()) {
      const int u = frontier.front();
      frontier.pop();
      for (int v : adj[u])
        if (parent[v] < 0) {
          parent[v] = u;
          frontier.push(v);
        }
    }
    return parent;
  }
};

/// Kinect v2 / NTU RGB+D 25-joint skeleton (0-based), centered at the spine shoulder.
inline SkeletonGraph ntu25_graph() {
  SkeletonGraph g;
  g.joint_count = 25;
  g.center_joint = 20;
  const int pairs[][2] = {{1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},  {7, 6},
                          {8, 7},   {9, 21},  {10, 9},  {11, 10}, {12, 11}, {13, 1}, {14, 13},
                          {15, 14}, {16, 15}, {17, 1},  {18, 17}, {19, 18}, {20, 19}, {22, 23},
                          {23, 8},  {24, 25}, {25, 12}};
  for (auto& p : pairs) g.edges.emplace_back(p[0] - 1, p[1] - 1);
  return g;
}

/// Ten-joint humanoid used by the synthetic benchmark:
/// 0 pelvis, 1 chest, 2/3 left elbow/hand, 4/5 right elbow/hand,
/// 6/7 left knee/foot, 8/9 right knee/foot.
inline SkeletonGraph humanoid10_graph() {
  SkeletonGraph g;
  g.joint_count = 10;
  g.center_joint = 0;
  g.edges = {{0, 1}, {1, 2}, {2, 3}, {1, 4}, {4, 5}, {0, 6}, {6, 7}, {0, 8}, {8, 9}};
  return g;
}

inline SkeletonGraph chain_graph(int joints, int center = 0) {
  SkeletonGraph g;
  g.joint_count = joints;
  g.center_joint = center;
  for (int j = 1; j < joints; ++j) g.edges.emplace_back(j - 1, j);
  return g;
}

/// F frames x N joints x 3 coordinates, frame-major.
struct SkeletonSequence {
  int frames = 0;
  int joints = 0;
  std::vector<double> coords;
  std::optional<int> label;
  std::string meta;

  SkeletonSequence() = default;
  SkeletonSequence(int f, int n) : frames(f), joints(n), coords(static_cast<std::size_t>(f) * n * 3, 0.0) {}

  double& at(int f, int j, int c) { return coords[(static_cast<std::size_t>(f) * joints + j) * 3 + c]; }
  double at(int f, int j, int c) const { return coords[(static_cast<std::size_t>(f) * joints + j) * 3 + c]; }

  void validate() const {
    if (frames < 1) throw InputError("skeleton sequence needs at least one frame");
    if (coords.size() != static_cast<std::size_t>(frames) * joints * 3)
      throw StructuralError("skeleton sequence storage does not match F x N x 3");
    for (double v : coords)
      if (!std::isfinite(v)) throw InputError("skeleton sequence holds non-finite coordinates");
  }
  void validate(const SkeletonGraph& graph) const {
    validate();
    if (joints != graph.joint_count)
      throw StructuralError("sequence has " + std::to_string(joints) + " joints, graph has " +
                            std::to_string(graph.joint_count));
  }
};

/// K normalized N x N adjacency matrices (row-major); row n aggregates from column m.
struct PartitionedAdjacency {
  int joint_count = 0;
  std::vector<std::vector<double>> matrices;

  int partitions() const { return static_cast<int>(matrices.size()); }
  double at(int k, int n, int m) const { return matrices[k][static_cast<std::size_t>(n) * joint_count + m]; }

  /// Element-wise sum over partitions.
  std::vector<double> summed() const {
    std::vector<double> s(static_cast<std::size_t>(joint_count) * joint_count, 0.0);
    for (const auto& a : matrices)
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += a[i];
    return s;
  }

  /// Flattened [K, N, N] storage for the graph-aggregation op.
  template <class S>
  std::vector<S> flat() const {
    std::vector<S> out;
    out.reserve(matrices.size() * joint_count * joint_count);
    for (const auto& a : matrices)
      for (double v : a) out.push_back(static_cast<S>(v));
    return out;
  }
};

/// Symmetric normalization D^{-1/2}(A + I)D^{-1/2}, split per partition strategy.
///
/// Spatial partitioning assigns entry (n, m) to root when joints n and m are
/// equally far from the center, to centripetal when m is closer, and to
/// centrifugal when m is farther.
inline PartitionedAdjacency build_partitioned_adjacency(const SkeletonGraph& graph) {
  graph.validate();
  const int n = graph.joint_count;
  std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i) * n + i] = 1.0;
  for (auto [u, v] : graph.edges) {
    a[static_cast<std::size_t>(u) * n + v] = 1.0;
    a[static_cast<std::size_t>(v) * n + u] = 1.0;
  }
  std::vector<double> inv_sqrt_deg(n);
  for (int i = 0; i < n; ++i) {
    double d = 0.0;
    for (int j = 0; j < n; ++j) d += a[static_cast<std::size_t>(i) * n + j];
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  std::vector<double> norm(a.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      norm[static_cast<std::size_t>(i) * n + j] = inv_sqrt_deg[i] * a[static_cast<std::size_t>(i) * n + j] * inv_sqrt_deg[j];

  PartitionedAdjacency out;
  out.joint_count = n;
  const int k = partition_count(graph.partition);
  out.matrices.assign(k, std::vector<double>(a.size(), 0.0));
  const auto dist = graph.hop_distance();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      if (a[idx] == 0.0) continue;
      int part = 0;
      switch (graph.partition) {
        case PartitionStrategy::kUniform: part = 0; break;
        case PartitionStrategy::kDistance: part = i == j ? 0 : 1; break;
        case PartitionStrategy::kSpatial:
          part = dist[j] == dist[i] ? 0 : (dist[j] < dist[i] ? 1 : 2);
          break;
      }
      out.matrices[part][idx] = norm[idx];
    }
  return out;
}

/// Parent-relative joint vectors along the spanning tree rooted at the center.
inline SkeletonSequence derive_bone(const SkeletonSequence& seq, const SkeletonGraph& graph) {
  seq.validate(graph);
  graph.validate();
  const auto parent = graph.spanning_tree_parents();
  SkeletonSequence out = seq;
  for (int f = 0; f < seq.frames; ++f)
    for (int j = 0; j < seq.joints; ++j)
      for (int c = 0; c < 3; ++c) out.at(f, j, c) = seq.at(f, j, c) - seq.at(f, parent[j], c);
  return out;
}

/// Forward frame differences; the final frame is all zero.
inline SkeletonSequence derive_motion(const SkeletonSequence& seq) {
  seq.validate();
  SkeletonSequence out = seq;
  for (int f = 0; f < seq.frames; ++f)
    for (int j = 0; j < seq.joints; ++j)
      for (int c = 0; c < 3; ++c)
        out.at(f, j, c) = f + 1 < seq.frames ? seq.at(f + 1, j, c) - seq.at(f, j, c) : 0.0;
  return out;
}

inline SkeletonSequence reverse(const SkeletonSequence& seq) {
  SkeletonSequence out = seq;
  const std::size_t frame = static_cast<std::size_t>(seq.joints) * 3;
  for (int f = 0; f < seq.frames; ++f)
    std::copy_n(seq.coords.begin() + (seq.frames - 1 - f) * frame, frame, out.coords.begin() + f * frame);
  return out;
}

enum class Modality { kJoint, kBone, kMotion };

inline SkeletonSequence derive_modality(const SkeletonSequence& seq, const SkeletonGraph& graph, Modality m) {
  switch (m) {
    case Modality::kJoint: return seq;
    case Modality::kBone: return derive_bone(seq, graph);
    case Modality::kMotion: return derive_motion(seq);
  }
  return seq;
}

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::kJoint: return "joint";
    case Modality::kBone: return "bone";
    case Modality::kMotion: return "motion";
  }
  return "joint";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "joint") return Modality::kJoint;
  if (s == "bone") return Modality::kBone;
  if (s == "motion") return Modality::kMotion;
  throw ConfigError("unknown modality '" + s + "' (expected joint|bone|motion)");
}

}  // namespace ufefp
