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

// Synthetic skeleton actions: every class drives a subset of joints with
// sinusoids around a rest pose. Per-sample nuisances (heading, body scale,
// tempo, phase and sensor noise) keep the task from being trivially
// separable in raw coordinates.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ufefp/augment.hpp"
#include "ufefp/error.hpp"
#include "ufefp/skeleton.hpp"

namespace ufefp {

/// Motion of one class: joint j oscillates along amplitude[j] (zero when the
/// joint is idle) with phase offset phase[j], at `frequency` cycles per clip.
struct ClassMotion {
  double frequency = 1.0;
  std::vector<std::array<double, 3>> amplitude;
  std::vector<double> phase;
};

struct SyntheticActionSpec {
  int class_count = 5;
  int samples_per_class = 150;
  int frame_count = 64;
  SkeletonGraph graph = humanoid10_graph();
  double noise_sigma = 0.02;
  /// Heading drawn uniformly from +-rotation_max_deg about the vertical axis.
  double rotation_max_deg = 30.0;
  double scale_jitter = 0.1;
  double speed_jitter = 0.5;
  /// Start phase drawn from [0, phase_jitter) cycles.
  double phase_jitter = 1.0;
  /// Classes share one frequency by default: temporal crop-resize treats
  /// tempo as a nuisance, so tempo should not also be what tells classes apart.
  double min_frequency = 2.0;
  double max_frequency = 2.0;
  double min_amplitude = 0.1;
  double max_amplitude = 0.3;
  /// Probability that a non-center joint takes part in a class motion.
  double active_fraction = 0.5;
  /// Drives the class motions.
  std::uint64_t class_seed = 1;
  /// Drives the per-sample nuisances and noise.
  std::uint64_t seed = 7;
  /// Class motions; filled from class_seed when empty.
  std::vector<ClassMotion> motions;

  void validate() const {
    if (class_count < 2) throw ConfigError("synthetic data needs at least two classes");
    if (samples_per_class < 1 || frame_count < 2) throw ConfigError("samples_per_class >= 1 and frame_count >= 2");
    if (noise_sigma < 0.0 || scale_jitter < 0.0 || scale_jitter >= 1.0 || speed_jitter < 0.0 || speed_jitter >= 1.0 ||
        phase_jitter < 0.0)
      throw ConfigError("synthetic nuisance magnitudes out of range");
    if (!(min_frequency > 0.0 && min_frequency <= max_frequency) || !(min_amplitude <= max_amplitude))
      throw ConfigError("synthetic frequency/amplitude ranges are inverted");
    graph.validate();
  }
};

/// Rest pose for the built-in 10-joint humanoid; other graphs get a
/// deterministic pseudo-random pose.
inline std::vector<std::array<double, 3>> rest_pose(const SkeletonGraph& graph) {
  if (graph.joint_count == 10 && graph.edges == humanoid10_graph().edges) {
    return {{0.0, 1.0, 0.0},   {0.0, 1.5, 0.0},   {0.3, 1.3, 0.0}, {0.5, 1.1, 0.0},  {-0.3, 1.3, 0.0},
            {-0.5, 1.1, 0.0},  {0.15, 0.5, 0.0},  {0.15, 0.0, 0.0}, {-0.15, 0.5, 0.0}, {-0.15, 0.0, 0.0}};
  }
  Rng rng(derive_seed(0x7e57, static_cast<std::uint64_t>(graph.joint_count)));
  std::normal_distribution<double> coord(0.0, 0.3);
  std::vector<std::array<double, 3>> pose(graph.joint_count);
  for (auto& p : pose)
    for (auto& v : p) v = coord(rng);
  return pose;
}

namespace detail {

inline double motion_distance(const ClassMotion& a, const ClassMotion& b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.amplitude.size(); ++j)
    for (int c = 0; c < 3; ++c) {
      const double diff = a.amplitude[j][c] - b.amplitude[j][c];
      d += diff * diff;
    }
  return std::sqrt(d);
}

}  // namespace detail

/// Draws one motion per class, redrawing until every pair differs in
/// frequency by at least 0.2 cycles or in amplitudes by at least 0.1.
inline std::vector<ClassMotion> draw_class_motions(const SyntheticActionSpec& spec) {
  spec.validate();
  const int n = spec.graph.joint_count;
  Rng rng(derive_seed(spec.class_seed, 0xc1a55));
  std::uniform_real_distribution<double> freq(spec.min_frequency, spec.max_frequency);
  std::uniform_real_distribution<double> mag(spec.min_amplitude, spec.max_amplitude);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::bernoulli_distribution active(spec.active_fraction);
  std::normal_distribution<double> dir(0.0, 1.0);

  std::vector<ClassMotion> motions;
  int attempts = 0;
  while (static_cast<int>(motions.size()) < spec.class_count) {
    if (++attempts > 1000 * spec.class_count)
      throw ConfigError("could not draw pairwise distinct class motions; widen the parameter ranges");
    ClassMotion m;
    m.frequency = freq(rng);
    m.amplitude.assign(n, {0.0, 0.0, 0.0});
    m.phase.assign(n, 0.0);
    int moving = 0;
    for (int j = 0; j < n; ++j) {
      m.phase[j] = phase(rng);
      if (j == spec.graph.center_joint || !active(rng)) continue;
      std::array<double, 3> v{dir(rng), dir(rng), dir(rng)};
      const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) + 1e-12;
      const double a = mag(rng);
      for (auto& x : v) x *= a / len;
      m.amplitude[j] = v;
      ++moving;
    }
    if (moving < std::min(2, n - 1)) continue;
    bool distinct = true;
    for (const auto& other : motions)
      if (std::abs(other.frequency - m.frequency) < 0.2 && detail::motion_distance(other, m) < 0.1) distinct = false;
    if (distinct) motions.push_back(std::move(m));
  }
  return motions;
}

/// Labeled dataset ordered class by class; a pure function of `spec`.
inline std::vector<SkeletonSequence> generate_synthetic(const SyntheticActionSpec& spec) {
  spec.validate();
  const std::vector<ClassMotion> motions = spec.motions.empty() ? draw_class_motions(spec) : spec.motions;
  if (static_cast<int>(motions.size()) != spec.class_count)
    throw ConfigError("class motion count does not match class_count");
  const int n = spec.graph.joint_count, f = spec.frame_count;
  const auto rest = rest_pose(spec.graph);

  std::vector<SkeletonSequence> out;
  out.reserve(static_cast<std::size_t>(spec.class_count) * spec.samples_per_class);
  for (int k = 0; k < spec.class_count; ++k) {
    const ClassMotion& m = motions[k];
    if (static_cast<int>(m.amplitude.size()) != n || static_cast<int>(m.phase.size()) != n)
      throw ConfigError("class motion joint count does not match the graph");
    for (int i = 0; i < spec.samples_per_class; ++i) {
      Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i)));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double yaw = (2.0 * unit(rng) - 1.0) * spec.rotation_max_deg * M_PI / 180.0;
      const double scale = 1.0 + (2.0 * unit(rng) - 1.0) * spec.scale_jitter;
      const double speed = 1.0 + (2.0 * unit(rng) - 1.0) * spec.speed_jitter;
      const double start = unit(rng) * spec.phase_jitter * 2.0 * M_PI;
      const double c = std::cos(yaw), s = std::sin(yaw);
      std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);

      SkeletonSequence seq(f, n);
      seq.label = k;
      seq.meta = "class" + std::to_string(k) + "/sample" + std::to_string(i);
      for (int t = 0; t < f; ++t) {
        const double arg = 2.0 * M_PI * m.frequency * speed * t / f + start;
        for (int j = 0; j < n; ++j) {
          const double w = std::sin(arg + m.phase[j]);
          const double px = rest[j][0] + m.amplitude[j][0] * w;
          const double py = rest[j][1] + m.amplitude[j][1] * w;
          const double pz = rest[j][2] + m.amplitude[j][2] * w;
          seq.at(t, j, 0) = scale * (c * px + s * pz);
          seq.at(t, j, 1) = scale * py;
          seq.at(t, j, 2) = scale * (-s * px + c * pz);
        }
      }
      if (spec.noise_sigma > 0.0)
        for (auto& v : seq.coords) v += noise(rng);
      out.push_back(std::move(seq));
    }
  }
  return out;
}

}  // namespace ufefp
