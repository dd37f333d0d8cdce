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

#include <filesystem>

#include "tiny_model.hpp"
#include "ufefp/ufefp.hpp"

namespace {

using namespace ufefp;
namespace fs = std::filesystem;

TEST(LrSchedule, PaperPresetAnchors) {
  const TrainConfig c = TrainConfig::paper();
  EXPECT_EQ(lr_schedule(0, c), 0.0);
  EXPECT_NEAR(lr_schedule(25, c), 2.0, 1e-12);
  EXPECT_NEAR(lr_schedule(1500, c), 0.001, 1e-12);
  EXPECT_NEAR(lr_schedule(12.5, c), 1.0, 1e-12);
}

TEST(LrSchedule, ContinuousAtWarmupEnd) {
  const TrainConfig c = TrainConfig::paper();
  EXPECT_LE(std::abs(lr_schedule(25.0 + 1e-9, c) - lr_schedule(25.0, c)), 1e-9);
  EXPECT_LE(std::abs(lr_schedule(25.0 - 1e-9, c) - lr_schedule(25.0, c)), 1e-9);
}

TEST(LrSchedule, MonotonePieces) {
  const TrainConfig c = TrainConfig::paper();
  for (double e = 0.0; e < 25.0; e += 0.25) EXPECT_LT(lr_schedule(e, c), lr_schedule(e + 0.25, c));
  for (double e = 25.0; e < 1500.0; e += 1.0) EXPECT_GT(lr_schedule(e, c), lr_schedule(e + 1.0, c));
}

TEST(LrSchedule, DeskPresetScalesPeak) {
  const TrainConfig c = TrainConfig::desk();
  EXPECT_NEAR(lr_schedule(25, c), 0.25, 1e-12);
  EXPECT_NEAR(lr_schedule(c.epochs, c), 0.001, 1e-12);
}

struct OneParam {
  Parameter<double> p{"w", {1}};
  ParamList<double> list;
  MomentumState<double> state;
  OneParam(double value, double grad, bool exempt = false) {
    p.value[0] = value;
    p.grad[0] = grad;
    p.exempt = exempt;
    list.add("", p);
  }
};

TEST(Lars, ZeroGradientLeavesParameter) {
  OneParam o(2.0, 0.0);
  LarsOptions opt;
  lars_step(o.list, o.state, 0.1, opt);
  EXPECT_EQ(o.p.value[0], 2.0);
}

TEST(Lars, TrustRatioByHand) {
  // eta = |p| / |g| = 2, step = lr * eta * g = 0.2.
  OneParam o(2.0, 1.0);
  LarsOptions opt;
  opt.momentum = 0.0;
  opt.eps = 0.0;
  lars_step(o.list, o.state, 0.1, opt);
  EXPECT_NEAR(o.p.value[0], 1.8, 1e-15);

  OneParam scaled(2.0, 1.0);
  opt.trust_coefficient = 1e-3;
  lars_step(scaled.list, scaled.state, 0.1, opt);
  EXPECT_NEAR(scaled.p.value[0], 2.0 - 2e-4, 1e-15);

  OneParam exempt(2.0, 1.0, true);
  opt.weight_decay = 0.5;
  lars_step(exempt.list, exempt.state, 0.1, opt);
  EXPECT_NEAR(exempt.p.value[0], 1.9, 1e-15);
}

TEST(Lars, WeightDecayEntersTrustRatio) {
  // g' = g + wd p = 1 + 0.5*2 = 2; eta = 2 / (1 + 0.5*2) = 1; step 0.1 * 1 * 2.
  OneParam o(2.0, 1.0);
  LarsOptions opt;
  opt.momentum = 0.0;
  opt.eps = 0.0;
  opt.weight_decay = 0.5;
  lars_step(o.list, o.state, 0.1, opt);
  EXPECT_NEAR(o.p.value[0], 1.8, 1e-15);
}

TEST(Lars, UnitTrustIsMomentumSgd) {
  OneParam a(1.5, -0.3), b(1.5, -0.3);
  LarsOptions opt;
  opt.unit_trust = true;
  opt.momentum = 0.9;
  for (int i = 0; i < 3; ++i) {
    lars_step(a.list, a.state, 0.05, opt);
    sgd_momentum_step(b.list, b.state, 0.05, 0.9, 0.0);
  }
  EXPECT_EQ(a.p.value[0], b.p.value[0]);
  // Hand-rolled momentum: v = 0.9 v + lr g; p -= v.
  double p = 1.5, v = 0.0;
  for (int i = 0; i < 3; ++i) {
    v = 0.9 * v + 0.05 * -0.3;
    p -= v;
  }
  EXPECT_NEAR(a.p.value[0], p, 1e-15);
}

TEST(Lars, NonFiniteGradientFaults) {
  OneParam o(1.0, std::nan(""));
  EXPECT_THROW(lars_step(o.list, o.state, 0.1, LarsOptions{}), NumericalFault);
}

Dataset tiny_data(int per_class = 4) {
  SyntheticActionSpec s;
  s.class_count = 2;
  s.samples_per_class = per_class;
  s.frame_count = 12;
  s.graph = tiny::graph();
  return Dataset{s.graph, generate_synthetic(s)};
}

TrainConfig tiny_train_config() {
  TrainConfig c = tiny::config();
  c.batch_size = 4;
  c.epochs = 4;
  c.warmup_epochs = 1;
  return c;
}

TEST(Trainer, OneEpochOnEightSamples) {
  Trainer<float> t(tiny_train_config(), tiny_data());
  EXPECT_EQ(t.steps_per_epoch(), 2);
  const EpochLog e = t.run_epoch();
  EXPECT_EQ(e.epoch, 1);
  EXPECT_EQ(t.epoch(), 1);
  EXPECT_TRUE(std::isfinite(e.loss));
  EXPECT_NEAR(e.loss, e.byol + e.pretext, 1e-5);
  EXPECT_GT(e.embedding_std, 0.0);
}

TEST(Trainer, TauZeroTargetTracksOnline) {
  TrainConfig c = tiny_train_config();
  c.tau = 0.0;
  Trainer<float> t(c, tiny_data());
  t.step();
  ParamList<float> on, ta;
  t.model().byol.online_encoder.collect(on, "");
  t.model().byol.target_encoder.collect(ta, "");
  for (std::size_t i = 0; i < on.params.size(); ++i) EXPECT_EQ(on.params[i].param->value, ta.params[i].param->value);
}

TEST(Trainer, DeterministicRerun) {
  Trainer<float> a(tiny_train_config(), tiny_data()), b(tiny_train_config(), tiny_data());
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a.step().loss, b.step().loss);
  EXPECT_EQ(a.checkpoint().serialize(), b.checkpoint().serialize());
}

TEST(Trainer, ResumeReproducesLossTrace) {
  Trainer<float> full(tiny_train_config(), tiny_data());
  std::vector<double> trace;
  for (int i = 0; i < 8; ++i) trace.push_back(full.step().loss);

  Trainer<float> first(tiny_train_config(), tiny_data());
  for (int i = 0; i < 3; ++i) first.step();
  const Archive ckpt = first.checkpoint();
  Trainer<float> resumed(checkpoint_config(ckpt), tiny_data());
  resumed.restore(ckpt);
  for (int i = 3; i < 8; ++i) EXPECT_EQ(resumed.step().loss, trace[i]) << "step " << i;
}

TEST(Trainer, ObjectivesSelectTerms) {
  TrainConfig c = tiny_train_config();
  c.objective = Objective::kByol;
  Trainer<float> byol(c, tiny_data());
  const StepLog a = byol.step();
  EXPECT_EQ(a.pretext, 0.0);
  EXPECT_EQ(a.loss, a.byol);
  c.objective = Objective::kPretext;
  Trainer<float> pretext(c, tiny_data());
  const StepLog b = pretext.step();
  EXPECT_EQ(b.byol, 0.0);
  EXPECT_EQ(b.loss, b.pretext);
}

TEST(Trainer, NumericalFaultKeepsLastGoodState) {
  Trainer<float> t(tiny_train_config(), tiny_data());
  t.run_epoch();
  ParamList<float> p = t.model().trainable();
  p.params[0].param->value[0] = std::numeric_limits<float>::quiet_NaN();
  const fs::path dir = fs::temp_directory_path() / ("ufefp_fault_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  EXPECT_THROW(pretrain(t, dir), NumericalFault);
  EXPECT_TRUE(fs::exists(dir / "last_good.ufc"));
  fs::remove_all(dir);
}

TEST(Trainer, PretrainWritesLogAndCheckpoints) {
  TrainConfig c = tiny_train_config();
  c.checkpoint_every = 2;
  Trainer<float> t(c, tiny_data());
  const fs::path dir = fs::temp_directory_path() / ("ufefp_pretrain_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const PretrainResult r = pretrain(t, dir);
  EXPECT_EQ(r.epochs.size(), 4u);
  EXPECT_TRUE(fs::exists(dir / "final.ufc"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_e0002.ufc"));
  EXPECT_TRUE(fs::exists(dir / "train_log.jsonl"));
  EXPECT_EQ(checkpoint_config(load_checkpoint(dir / "final.ufc")).epochs, 4);
  fs::remove_all(dir);
}

TEST(Trainer, RejectsEmptyData) {
  EXPECT_THROW(Trainer<float>(tiny_train_config(), Dataset{tiny::graph(), {}}), InputError);
}

}  // namespace
