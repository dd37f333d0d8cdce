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

#include <gtest/gtest.h>

#include "tiny_model.hpp"

namespace {

using namespace ufefp;

TEST(GradCheck, TotalLossMatchesCentralDifferences) {
  Model<double> m(tiny::config(), tiny::graph());
  const auto batch = tiny::random_batch(1);
  const tiny::GradCheck r = tiny::check_gradients(m, batch, tiny::Terms::kBoth);
  EXPECT_GE(r.coords.size(), 50u);
  EXPECT_EQ(r.groups_covered, r.groups);
  for (const auto& c : r.coords)
    EXPECT_LE(c.rel_error, 1e-4) << c.name << "[" << c.index << "] analytic " << c.analytic << " numeric " << c.numeric;
}

TEST(GradCheck, TeacherForcedDecoderAndBridgedWidth) {
  TrainConfig cfg = tiny::config();
  cfg.teacher_forcing = true;
  cfg.decoder_width = 6;
  Model<double> m(cfg, tiny::graph());
  ASSERT_TRUE(m.decoder.bridged);
  const tiny::GradCheck r = tiny::check_gradients(m, tiny::random_batch(2), tiny::Terms::kBoth);
  for (const auto& c : r.coords) EXPECT_LE(c.rel_error, 1e-4) << c.name << "[" << c.index << "] analytic " << c.analytic << " numeric " << c.numeric;
}

TEST(GradCheck, TotalGradientIsSumOfTermGradients) {
  Model<double> m(tiny::config(), tiny::graph());
  const auto batch = tiny::random_batch(3);
  ParamList<double> params = m.trainable();
  auto grads_of = [&](tiny::Terms t) {
    params.zero_grad();
    tiny::loss(m, batch, t, true);
    std::vector<double> g;
    for (const auto& e : params.params) g.insert(g.end(), e.param->grad.begin(), e.param->grad.end());
    return g;
  };
  const auto both = grads_of(tiny::Terms::kBoth);
  const auto byol = grads_of(tiny::Terms::kByol);
  const auto pretext = grads_of(tiny::Terms::kPretext);
  for (std::size_t i = 0; i < both.size(); ++i) EXPECT_NEAR(both[i], byol[i] + pretext[i], 1e-10);

  // Linearity of the finite differences themselves on a few coordinates.
  auto& p = params.params[0].param->value[0];
  const double saved = p, h = 1e-5;
  auto fd = [&](tiny::Terms t) {
    p = saved + h;
    const double up = tiny::loss(m, batch, t, false);
    p = saved - h;
    const double down = tiny::loss(m, batch, t, false);
    p = saved;
    return (up - down) / (2 * h);
  };
  EXPECT_NEAR(fd(tiny::Terms::kBoth), fd(tiny::Terms::kByol) + fd(tiny::Terms::kPretext), 1e-8);
}

TEST(GradCheck, PretextLossReachesTheEncoder) {
  Model<double> m(tiny::config(), tiny::graph());
  ParamList<double> params = m.trainable();
  params.zero_grad();
  tiny::loss(m, tiny::random_batch(4), tiny::Terms::kPretext, true);
  bool encoder_moved = false;
  for (const auto& e : params.params)
    if (e.name.rfind("online.encoder.", 0) == 0)
      for (double g : e.param->grad) encoder_moved |= g != 0.0;
  EXPECT_TRUE(encoder_moved);
}

}  // namespace
