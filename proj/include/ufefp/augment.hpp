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
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "ufefp/error.hpp"
#include "ufefp/skeleton.hpp"

namespace ufefp {

using Rng = std::mt19937_64;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// splitmix64 finalizer; used to derive independent per-sample seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return mix_seed(mix_seed(mix_seed(mix_seed(base) ^ a) ^ b) ^ c);
}

struct AugmentConfig {
  double rotation_max_deg = 30.0;
  double jitter_sigma = 0.05;
  double jitter_joint_fraction = 0.15;
  double shear_magnitude = 0.5;
  double crop_min_fraction = 0.5;
  int out_frames = 50;
  std::uint64_t rng_seed = 0;
  /// Apply the rotation before the spatial/temporal stages instead of last.
  bool rotate_first = false;

  void validate() const {
    if (!(crop_min_fraction > 0.0 && crop_min_fraction <= 1.0))
      throw ConfigError("crop_min_fraction must lie in (0, 1]");
    if (!(rotation_max_deg >= 0.0 && rotation_max_deg <= 180.0))
      throw ConfigError("rotation_max_deg must lie in [0, 180]");
    if (!(jitter_sigma >= 0.0)) throw ConfigError("jitter_sigma must be non-negative");
    if (!(jitter_joint_fraction >= 0.0 && jitter_joint_fraction <= 1.0))
      throw ConfigError("jitter_joint_fraction must lie in [0, 1]");
    if (!(shear_magnitude >= 0.0)) throw ConfigError("shear_magnitude must be non-negative");
    if (out_frames < 1) throw ConfigError("out_frames must be positive");
  }
};

inline Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

inline double det3(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

/// Applies p' = M p to every joint of every frame.
inline SkeletonSequence apply_linear(const SkeletonSequence& seq, const Mat3& m) {
  SkeletonSequence out = seq;
  for (int f = 0; f < seq.frames; ++f)
    for (int j = 0; j < seq.joints; ++j)
      for (int r = 0; r < 3; ++r)
        out.at(f, j, r) = m[r][0] * seq.at(f, j, 0) + m[r][1] * seq.at(f, j, 1) + m[r][2] * seq.at(f, j, 2);
  return out;
}

/// Rodrigues rotation about a unit axis.
inline Mat3 axis_angle_matrix(std::array<double, 3> axis, double radians) {
  const double c = std::cos(radians), s = std::sin(radians), t = 1.0 - c;
  const auto [x, y, z] = axis;
  return Mat3{{{c + t * x * x, t * x * y - s * z, t * x * z + s * y},
               {t * x * y + s * z, c + t * y * y, t * y * z - s * x},
               {t * x * z - s * y, t * y * z + s * x, c + t * z * z}}};
}

/// Unit-determinant shear L * U from the strictly-lower entries (m10, m20, m21)
/// and strictly-upper entries (m01, m02, m12).
inline Mat3 shear_matrix(const std::array<double, 3>& lower, const std::array<double, 3>& upper) {
  const Mat3 l{{{1.0, 0.0, 0.0}, {lower[0], 1.0, 0.0}, {lower[1], lower[2], 1.0}}};
  const Mat3 u{{{1.0, upper[0], upper[1]}, {0.0, 1.0, upper[2]}, {0.0, 0.0, 1.0}}};
  return matmul3(l, u);
}

inline SkeletonSequence rotate_random(const SkeletonSequence& seq, const AugmentConfig& cfg, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<double, 3> axis{};
  double len = 0.0;
  do {
    for (auto& a : axis) a = normal(rng);
    len = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  } while (len < 1e-12);
  for (auto& a : axis) a /= len;
  std::uniform_real_distribution<double> angle(-cfg.rotation_max_deg, cfg.rotation_max_deg);
  const double deg = cfg.rotation_max_deg > 0.0 ? angle(rng) : 0.0;
  return apply_linear(seq, axis_angle_matrix(axis, deg * M_PI / 180.0));
}

inline SkeletonSequence joint_jitter(const SkeletonSequence& seq, const AugmentConfig& cfg, Rng& rng) {
  const int count = static_cast<int>(std::ceil(cfg.jitter_joint_fraction * seq.joints - 1e-12));
  std::vector<int> order(seq.joints);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  if (count <= 0 || cfg.jitter_sigma <= 0.0) return seq;
  SkeletonSequence out = seq;
  std::normal_distribution<double> noise(0.0, cfg.jitter_sigma);
  for (int i = 0; i < std::min(count, seq.joints); ++i)
    for (int f = 0; f < seq.frames; ++f)
      for (int c = 0; c < 3; ++c) out.at(f, order[i], c) += noise(rng);
  return out;
}

inline SkeletonSequence pose_augment(const SkeletonSequence& seq, const AugmentConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> draw(-cfg.shear_magnitude, cfg.shear_magnitude);
  std::array<double, 3> lower{}, upper{};
  if (cfg.shear_magnitude > 0.0) {
    for (auto& v : lower) v = draw(rng);
    for (auto& v : upper) v = draw(rng);
  }
  return apply_linear(seq, shear_matrix(lower, upper));
}

/// Linearly resamples frames [start, start+length) to `out_frames` frames.
inline SkeletonSequence resize_frames(const SkeletonSequence& seq, int start, int length, int out_frames) {
  if (start < 0 || length < 1 || start + length > seq.frames || out_frames < 1)
    throw InputError("resize_frames: window out of range");
  SkeletonSequence out(out_frames, seq.joints);
  out.label = seq.label;
  out.meta = seq.meta;
  for (int i = 0; i < out_frames; ++i) {
    double pos = out_frames > 1 ? static_cast<double>(i) * (length - 1) / (out_frames - 1) : 0.0;
    int lo = static_cast<int>(std::floor(pos));
    double frac = pos - lo;
    if (length == 1) {
      lo = 0;
      frac = 0.0;
    } else if (lo >= length - 1) {
      lo = length - 2;
      frac = 1.0;
    }
    const int hi = length == 1 ? lo : lo + 1;
    for (int j = 0; j < seq.joints; ++j)
      for (int c = 0; c < 3; ++c)
        out.at(i, j, c) = (1.0 - frac) * seq.at(start + lo, j, c) + frac * seq.at(start + hi, j, c);
  }
  return out;
}

inline SkeletonSequence temporal_crop_resize(const SkeletonSequence& seq, const AugmentConfig& cfg, Rng& rng) {
  if (seq.frames < 2) throw InputError("temporal_crop_resize needs at least two frames");
  const int min_len =
      std::clamp(static_cast<int>(std::ceil(cfg.crop_min_fraction * seq.frames - 1e-9)), 2, seq.frames);
  const int length = std::uniform_int_distribution<int>(min_len, seq.frames)(rng);
  const int start = std::uniform_int_distribution<int>(0, seq.frames - length)(rng);
  return resize_frames(seq, start, length, cfg.out_frames);
}

/// One stochastic view: spatial choice (shear or jitter) -> crop-resize -> rotation.
inline SkeletonSequence augment_view(const SkeletonSequence& seq, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  seq.validate();
  SkeletonSequence x = cfg.rotate_first ? rotate_random(seq, cfg, rng) : seq;
  const bool use_shear = std::bernoulli_distribution(0.5)(rng);
  x = use_shear ? pose_augment(x, cfg, rng) : joint_jitter(x, cfg, rng);
  x = temporal_crop_resize(x, cfg, rng);
  if (!cfg.rotate_first) x = rotate_random(x, cfg, rng);
  return x;
}

}  // namespace ufefp
