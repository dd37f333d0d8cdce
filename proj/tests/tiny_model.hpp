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

// Double-precision miniature of the full model (5 joints, 8 frames,
// channels 4-4-4-8, hidden 8) plus a central-difference gradient checker.

#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ufefp/ufefp.hpp"

namespace tiny {

using namespace ufefp;

inline SkeletonGraph graph() {
  SkeletonGraph g;
  g.joint_count = 5;
  g.center_joint = 1;
  g.edges = {{0, 1}, {1, 2}, {2, 3}, {1, 4}};
  return g;
}

inline TrainConfig config() {
  TrainConfig c = TrainConfig::desk();
  c.frames = 8;
  c.encoder.channels = {4, 4, 4, 8};
  c.encoder.strides = {1, 1, 1, 2};
  c.encoder.hidden = 8;
  c.encoder.frames = 8;
  c.heads.projector_hidden = 16;
  c.heads.projection_dim = 8;
  c.heads.predictor_hidden = 16;
  c.decoder_width = 0;
  c.sync();
  return c;
}

struct Batch {
  std::vector<double> x, y;
  int b = 2;
};

inline Batch random_batch(std::uint64_t seed, int b = 2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Batch out;
  out.b = b;
  out.x.resize(static_cast<std::size_t>(b) * 8 * 5 * 3);
  out.y.resize(out.x.size());
  for (double& v : out.x) v = d(rng);
  for (double& v : out.y) v = d(rng);
  return out;
}

enum class Terms { kBoth, kByol, kPretext };

/// L_BYOL + L_P (or one of them) on a fixed pair of views, training-mode norms.
inline double loss(Model<double>& m, const Batch& batch, Terms terms, bool backward) {
  Tape<double> tape(backward);
  Var<double> x = tape.constant({batch.b, 8, 5, 3}, batch.x);
  Var<double> y = tape.constant({batch.b, 8, 5, 3}, batch.y);
  ByolForward<double> f = symmetric_byol_loss(tape, x, y, m.byol, NormMode::kTrain);
  Var<double> target = reverse_time(tape, x);
  Var<double> lp = pretext_loss(m.decoder.forward(tape, f.online_x.last_hidden, 8,
                                                  m.decoder.config.teacher_forcing ? std::optional(target)
                                                                                   : std::nullopt),
                                target);
  Var<double> total = terms == Terms::kBoth ? total_loss(f.loss, lp) : terms == Terms::kByol ? f.loss : lp;
  if (backward) tape.backward(total);
  return total.item();
}

struct Coordinate {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheck {
  std::vector<Coordinate> coords;
  std::size_t groups = 0;
  std::size_t groups_covered = 0;
  double max_rel_error = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose exact
/// gradient is zero (biases feeding a batch norm) from dividing rounding
/// noise by rounding noise. Central differences at h = 1e-5 on an O(1) loss
/// carry roughly 1e-10 of cancellation error, so 1e-5 caps that case at 1e-5.
inline double relative_error(double a, double n, double floor = 1e-5) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences with `step` on `per_group` random coordinates of every
/// trainable parameter (at least `minimum` coordinates overall).
inline GradCheck check_gradients(Model<double>& m, const Batch& batch, Terms terms, double step = 1e-5,
                                 int per_group = 1, std::size_t minimum = 50, std::uint64_t seed = 17) {
  ParamList<double> params = m.trainable();
  params.zero_grad();
  loss(m, batch, terms, true);
  std::vector<std::vector<double>> grads;
  for (const auto& e : params.params) grads.push_back(e.param->grad);

  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t k = 0; k < params.params.size(); ++k)
    for (int i = 0; i < per_group; ++i) picks.emplace_back(k, rng() % params.params[k].param->size());
  while (picks.size() < minimum) {
    const std::size_t k = rng() % params.params.size();
    picks.emplace_back(k, rng() % params.params[k].param->size());
  }

  GradCheck out;
  out.groups = params.params.size();
  std::vector<bool> covered(out.groups, false);
  for (auto [k, i] : picks) {
    double& p = params.params[k].param->value[i];
    const double saved = p;
    p = saved + step;
    const double up = loss(m, batch, terms, false);
    p = saved - step;
    const double down = loss(m, batch, terms, false);
    p = saved;
    Coordinate c;
    c.name = params.params[k].name;
    c.index = i;
    c.analytic = grads[k][i];
    c.numeric = (up - down) / (2.0 * step);
    c.rel_error = relative_error(c.analytic, c.numeric);
    out.max_rel_error = std::max(out.max_rel_error, c.rel_error);
    out.coords.push_back(c);
    covered[k] = true;
  }
  for (bool c : covered) out.groups_covered += c;
  return out;
}

}  // namespace tiny
