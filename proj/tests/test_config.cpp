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

#include "ufefp/config.hpp"

namespace {

using namespace ufefp;

TEST(Presets, Paper) {
  const TrainConfig c = TrainConfig::paper();
  EXPECT_EQ(c.epochs, 1500);
  EXPECT_EQ(c.batch_size, 512);
  EXPECT_EQ(c.warmup_epochs, 25.0);
  EXPECT_EQ(c.peak_lr, 2.0);
  EXPECT_EQ(c.final_lr, 0.001);
  EXPECT_EQ(c.tau, 0.99);
  EXPECT_EQ(c.frames, 50);
  EXPECT_EQ(c.encoder.channels, (std::vector<int>{32, 64, 128, 512}));
  EXPECT_EQ(c.encoder.strides, (std::vector<int>{1, 1, 1, 2}));
  EXPECT_EQ(c.encoder.embedding_dim(), 256);
  EXPECT_EQ(c.heads.projector_hidden, 1024);
  EXPECT_EQ(c.heads.projection_dim, 512);
  EXPECT_NO_THROW(c.validate());
}

TEST(Presets, Desk) {
  const TrainConfig c = TrainConfig::desk();
  EXPECT_EQ(c.epochs, 200);
  EXPECT_EQ(c.batch_size, 64);
  EXPECT_DOUBLE_EQ(c.peak_lr, 0.25);
  EXPECT_EQ(c.encoder.channels, (std::vector<int>{4, 4, 8, 32}));
  EXPECT_EQ(c.encoder.hidden, 16);
  EXPECT_NO_THROW(c.validate());
}

TEST(Parse, RoundTrip) {
  for (TrainConfig c : {TrainConfig::desk(), TrainConfig::paper()}) {
    c.seed = 12345678901234ull;
    c.peak_lr = 0.1 + 0.2;
    c.modality = Modality::kMotion;
    c.objective = Objective::kPretext;
    c.augment.rotate_first = false;
    c.sync();
    const std::string text = format_config(c);
    EXPECT_EQ(format_config(parse_config_text(text)), text);
  }
}

TEST(Parse, VariantThenExplicitKeys) {
  const TrainConfig c = parse_config_text("variant = v4\nwidth_divisor = 8\nencoder.hidden = 5\n# comment\n\n");
  EXPECT_EQ(c.encoder.gru_layers, 0);
  EXPECT_EQ(c.encoder.channels, (std::vector<int>{4, 8, 16, 64}));
  EXPECT_EQ(c.encoder.hidden, 5);
}

TEST(Parse, Errors) {
  EXPECT_THROW(parse_config_text("epoch = 3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("epochs = 3\nepochs = 4\n"), ConfigError);
  EXPECT_THROW(parse_config_text("epochs 3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("epochs = three\n"), ConfigError);
  EXPECT_THROW(parse_config_text("tau = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config_text("preset = huge\n"), ConfigError);
  EXPECT_THROW(parse_config_text("modality = depth\n"), ConfigError);
  EXPECT_THROW(parse_config_text("optimizer = adam\n"), ConfigError);
  EXPECT_THROW(parse_config_text("teacher_forcing = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config_text("warmup_epochs = 300\n"), ConfigError);
  EXPECT_THROW(parse_config_text("encoder.channels = 4,4\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent.cfg"), ConfigError);
}

TEST(Files, ShippedConfigsMatchPresets) {
  const std::filesystem::path dir = std::filesystem::path(UFEFP_FIXTURE_DIR) / ".." / ".." / "configs";
  const TrainConfig desk = load_config(dir / "desk.cfg");
  EXPECT_EQ(format_config(desk), format_config(TrainConfig::desk()));
  const TrainConfig paper = load_config(dir / "paper.cfg");
  EXPECT_EQ(format_config(paper), format_config(TrainConfig::paper()));
}

}  // namespace
