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

#include "tiny_model.hpp"
#include "ufefp/ufefp.hpp"

namespace {

using namespace ufefp;
using Eigen::MatrixXd;

Features gaussian_features(int n, int d, int classes, double separation, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  MatrixXd centers(classes, d);
  for (int k = 0; k < classes; ++k)
    for (int j = 0; j < d; ++j) centers(k, j) = separation * unit(rng);
  Features f;
  f.values.resize(n, d);
  for (int i = 0; i < n; ++i) {
    const int k = i % classes;
    f.labels.push_back(k);
    for (int j = 0; j < d; ++j) f.values(i, j) = centers(k, j) + unit(rng);
  }
  return f;
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  MatrixXd l(2, 3);
  l << 1.0, 2.0, 3.0, -500.0, 0.0, 500.0;
  const MatrixXd p = softmax_rows(l);
  for (int r = 0; r < 2; ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-15);
  const MatrixXd q = softmax_rows(l.array() + 7.0);
  EXPECT_LE((p - q).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(p(0, 2), std::exp(1.0) / (std::exp(-1.0) + 1.0 + std::exp(1.0)), 1e-15);
}

TEST(Accuracy, CountsArgmaxHits) {
  MatrixXd s(4, 2);
  s << 0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7;
  EXPECT_DOUBLE_EQ(accuracy(s, {0, 1, 1, 1}), 0.75);
  EXPECT_THROW(accuracy(s, {0, 1}), StructuralError);
}

TEST(LinearProbe, MemorizesSeparableFeatures) {
  std::mt19937_64 rng(1);
  const Features f = gaussian_features(150, 8, 3, 6.0, rng);
  const LinearProbe p = train_linear_probe(f, 3, ProbeConfig{}, 0);
  EXPECT_DOUBLE_EQ(accuracy(p.probabilities(f.values), f.labels), 1.0);
}

TEST(LinearProbe, ShuffledLabelsGiveChance) {
  std::mt19937_64 rng(2);
  Features train = gaussian_features(500, 16, 5, 0.0, rng);
  Features test = gaussian_features(2000, 16, 5, 0.0, rng);
  std::shuffle(train.labels.begin(), train.labels.end(), rng);
  const LinearProbe p = train_linear_probe(train, 5, ProbeConfig{}, 0);
  EXPECT_NEAR(accuracy(p.probabilities(test.values), test.labels), 0.2, 0.05);
}

TEST(LinearProbe, Deterministic) {
  std::mt19937_64 rng(3);
  const Features f = gaussian_features(60, 4, 3, 1.0, rng);
  const LinearProbe a = train_linear_probe(f, 3, ProbeConfig{}, 9);
  const LinearProbe b = train_linear_probe(f, 3, ProbeConfig{}, 9);
  EXPECT_EQ(a.weight, b.weight);
  EXPECT_THROW(train_linear_probe(Features{}, 3, ProbeConfig{}, 0), InputError);
}

TEST(ClassCount, Validation) {
  EXPECT_EQ(checked_class_count({0, 1, 2, 1}, {2, 0}), 3);
  EXPECT_THROW(checked_class_count({0, 1}, {2}), InputError);
  EXPECT_THROW(checked_class_count({0, 0}), InputError);
  EXPECT_THROW(checked_class_count({0, -1}), InputError);
}

std::vector<int> balanced_labels(int classes, int per_class) {
  std::vector<int> y;
  for (int i = 0; i < per_class; ++i)
    for (int k = 0; k < classes; ++k) y.push_back(k);
  return y;
}

TEST(StratifiedSubset, PerClassCounts) {
  const auto y = balanced_labels(5, 100);
  for (double fraction : {0.01, 0.10}) {
    const auto s = stratified_subset(y, fraction, 4);
    std::vector<int> count(5, 0);
    for (int i : s) ++count[y[i]];
    for (int c : count) EXPECT_EQ(c, static_cast<int>(std::lround(fraction * 100)));
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(s, stratified_subset(y, fraction, 4));
  }
  EXPECT_NE(stratified_subset(y, 0.1, 4), stratified_subset(y, 0.1, 5));
}

TEST(StratifiedSubset, Errors) {
  const auto y = balanced_labels(3, 50);
  EXPECT_THROW(stratified_subset(y, 0.01, 0), InputError);
  EXPECT_THROW(stratified_subset(y, 0.0, 0), ConfigError);
  EXPECT_THROW(stratified_subset(y, 1.5, 0), ConfigError);
}

TEST(Ensemble, Properties) {
  std::mt19937_64 rng(5);
  const auto labels = balanced_labels(4, 10);
  MatrixXd perfect = MatrixXd::Constant(40, 4, 0.1);
  for (int i = 0; i < 40; ++i) perfect(i, labels[i]) = 0.7;
  const MatrixXd uniform = MatrixXd::Constant(40, 4, 0.25);

  const EvalResult one = ensemble_3s({perfect}, labels);
  EXPECT_EQ(one.probabilities, perfect);
  EXPECT_DOUBLE_EQ(one.accuracy, 1.0);

  const EvalResult same = ensemble_3s({perfect, perfect, perfect}, labels);
  EXPECT_LE((same.probabilities - perfect).cwiseAbs().maxCoeff(), 1e-15);

  const EvalResult mixed = ensemble_3s({perfect, uniform, uniform}, labels);
  EXPECT_DOUBLE_EQ(mixed.accuracy, 1.0);
  for (int r = 0; r < 40; ++r) EXPECT_NEAR(mixed.probabilities.row(r).sum(), 1.0, 1e-12);

  EXPECT_THROW(ensemble_3s({perfect, MatrixXd::Constant(40, 3, 0.3)}, labels), StructuralError);
  EXPECT_THROW(ensemble_3s({}, labels), InputError);
}

Dataset tiny_split(std::uint64_t seed, int per_class) {
  SyntheticActionSpec s;
  s.class_count = 3;
  s.samples_per_class = per_class;
  s.frame_count = 12;
  s.graph = tiny::graph();
  s.seed = seed;
  return Dataset{s.graph, generate_synthetic(s)};
}

TEST(Protocols, LinearEvalRunsAndIsDeterministic) {
  TrainConfig cfg = tiny::config();
  cfg.probe.epochs = 20;
  Model<float> m(cfg, tiny::graph());
  const Dataset train = tiny_split(1, 10), test = tiny_split(2, 5);
  const EvalResult a = linear_eval(m.byol.online_encoder, train, test, cfg);
  const EvalResult b = linear_eval(m.byol.online_encoder, train, test, cfg);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.probabilities.rows(), 15);
  EXPECT_EQ(a.probabilities.cols(), 3);
  EXPECT_GE(a.accuracy, 0.0);
  EXPECT_LE(a.accuracy, 1.0);
}

TEST(Protocols, SemiSupervisedFinetuneUpdatesEncoder) {
  TrainConfig cfg = tiny::config();
  cfg.finetune.epochs = 3;
  Model<float> m(cfg, tiny::graph());
  const Dataset train = tiny_split(3, 20), test = tiny_split(4, 4);
  ParamList<float> before_list;
  m.byol.online_encoder.collect(before_list, "");
  const std::vector<float> before = before_list.params[1].param->value;
  const EvalResult r = semi_supervised_finetune(m.byol.online_encoder, train, test, 0.10, cfg);
  EXPECT_EQ(r.probabilities.rows(), 12);
  EXPECT_NE(before_list.params[1].param->value, before);
  Model<float> fresh(cfg, tiny::graph());
  EXPECT_THROW(semi_supervised_finetune(fresh.byol.online_encoder, train, test, 0.01, cfg), InputError);
}

}  // namespace
