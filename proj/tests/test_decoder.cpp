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

#include <random>

#include "oracles.hpp"
#include "ufefp/decoder.hpp"

namespace {

using namespace ufefp;

constexpr double kOracleTol = 1e-6;

Decoder<double> make_decoder(int hidden, int width, bool teacher_forcing, std::uint64_t seed) {
  DecoderConfig cfg;
  cfg.hidden = hidden;
  cfg.width = width;
  cfg.teacher_forcing = teacher_forcing;
  Rng rng(seed);
  return Decoder<double>(cfg, build_partitioned_adjacency(chain_graph(3)), rng);
}

std::vector<double> gaussian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

TEST(Decoder, SingleFrameShape) {
  auto d = make_decoder(4, 0, false, 1);
  std::mt19937_64 rng(1);
  Tape<double> tape(false);
  Var<double> h = tape.constant({2, 3, 4}, gaussian(24, rng));
  Var<double> out = d.forward(tape, h, 1);
  EXPECT_EQ(out.shape(), (ad::Shape{2, 1, 3, 3}));
}

TEST(Decoder, ZeroOutputWeightsGiveZeroOutput) {
  auto d = make_decoder(4, 0, false, 2);
  std::fill(d.out_weight.value.begin(), d.out_weight.value.end(), 0.0);
  std::fill(d.out_bias.value.begin(), d.out_bias.value.end(), 0.0);
  std::mt19937_64 rng(2);
  Tape<double> tape(false);
  Var<double> out = d.forward(tape, tape.constant({1, 3, 4}, gaussian(12, rng)), 5);
  for (double v : out.value()) EXPECT_EQ(v, 0.0);
}

class DecoderOracle : public ::testing::TestWithParam<std::tuple<bool, int>> {};

TEST_P(DecoderOracle, MatchesStepByStepRecurrence) {
  const auto [teacher_forcing, width] = GetParam();
  auto d = make_decoder(4, width, teacher_forcing, 3);
  std::mt19937_64 rng(4);
  oracle::randomize(d, rng);
  const int frames = 4;
  const auto last = gaussian(3 * 4, rng);
  const auto target = gaussian(static_cast<std::size_t>(frames) * 3 * 3, rng);

  Tape<double> tape(false);
  Var<double> h = tape.constant({1, 3, 4}, last);
  std::optional<Var<double>> tv;
  if (teacher_forcing) tv = tape.constant({1, frames, 3, 3}, target);
  Var<double> out = d.forward(tape, h, frames, tv);

  oracle::Map tm(frames, 3, 3);
  tm.v = target;
  const oracle::Map expect = oracle::decode(last, d, frames, teacher_forcing ? &tm : nullptr);
  EXPECT_LE(oracle::max_abs_diff(out.value(), expect.v), kOracleTol);
}

INSTANTIATE_TEST_SUITE_P(Modes, DecoderOracle,
                         ::testing::Values(std::make_tuple(false, 0), std::make_tuple(true, 0),
                                           std::make_tuple(false, 5), std::make_tuple(true, 5)));

TEST(Decoder, TeacherForcingChangesLaterStepsOnly) {
  auto free_run = make_decoder(4, 0, false, 5);
  auto forced = free_run;
  forced.config.teacher_forcing = true;
  std::mt19937_64 rng(6);
  const auto last = gaussian(12, rng);
  const auto target = gaussian(4 * 9, rng);
  Tape<double> tape(false);
  Var<double> h = tape.constant({1, 3, 4}, last);
  const auto a = free_run.forward(tape, h, 4).value();
  const auto b = forced.forward(tape, h, 4, tape.constant({1, 4, 3, 3}, target)).value();
  for (int i = 0; i < 9; ++i) EXPECT_EQ(a[i], b[i]);
  double diff = 0.0;
  for (std::size_t i = 9; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(Decoder, InputErrors) {
  auto d = make_decoder(4, 0, true, 7);
  Tape<double> tape(false);
  Var<double> h = tape.constant({1, 3, 4}, std::vector<double>(12, 0.0));
  EXPECT_THROW(d.forward(tape, h, 4), InputError);
  EXPECT_THROW(d.forward(tape, h, 4, tape.constant({1, 3, 3, 3}, std::vector<double>(27, 0.0))), InputError);
  EXPECT_THROW(d.forward(tape, h, 0), InputError);
  EXPECT_THROW(d.forward(tape, tape.constant({1, 3, 5}, std::vector<double>(15, 0.0)), 2), StructuralError);
}

TEST(PretextLoss, PerfectReconstructionIsZero) {
  std::mt19937_64 rng(8);
  const SkeletonSequence view = oracle::random_sequence(6, 4, rng);
  EXPECT_EQ(pretext_loss(reverse(view), view), 0.0);
}

TEST(PretextLoss, ConstantOffset) {
  std::mt19937_64 rng(9);
  const SkeletonSequence view = oracle::random_sequence(5, 3, rng);
  SkeletonSequence pred = reverse(view);
  for (double& v : pred.coords) v += 0.3;
  EXPECT_NEAR(pretext_loss(pred, view), 0.09, 1e-12);
}

TEST(PretextLoss, TapeFormMatchesElementwiseOracle) {
  std::mt19937_64 rng(10);
  const auto p = gaussian(2 * 4 * 3 * 3, rng), t = gaussian(2 * 4 * 3 * 3, rng);
  double expect = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) expect += (p[i] - t[i]) * (p[i] - t[i]);
  expect /= static_cast<double>(p.size());
  Tape<double> tape(false);
  Var<double> l = pretext_loss(tape.constant({2, 4, 3, 3}, p), tape.constant({2, 4, 3, 3}, t));
  EXPECT_NEAR(l.item(), expect, 1e-12);
  EXPECT_THROW(pretext_loss(tape.constant({2, 4, 3, 3}, p), tape.constant({1, 8, 3, 3}, t)), StructuralError);
}

TEST(PretextLoss, FrameMismatch) {
  SkeletonSequence a(4, 3), b(5, 3);
  EXPECT_THROW(pretext_loss(a, b), StructuralError);
}

TEST(TotalLoss, UnweightedSum) {
  EXPECT_EQ(total_loss(0.0, 0.0), 0.0);
  EXPECT_EQ(total_loss(2.0, 0.5), 2.5);
  EXPECT_THROW(total_loss(std::nan(""), 0.5), NumericalFault);
  EXPECT_THROW(total_loss(1.0, INFINITY), NumericalFault);
}

TEST(ReverseTime, MatchesSequenceReverse) {
  std::mt19937_64 rng(11);
  const SkeletonSequence s = oracle::random_sequence(7, 3, rng);
  Tape<double> tape(false);
  Var<double> r = reverse_time(tape, tape.constant({1, 7, 3, 3}, s.coords));
  EXPECT_EQ(oracle::max_abs_diff(r.value(), reverse(s).coords), 0.0);
}

}  // namespace
