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

// Evaluation protocols: linear probe on frozen embeddings, supervised
// fine-tuning on a stratified labeled subset, and three-stream fusion.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "ufefp/augment.hpp"
#include "ufefp/config.hpp"
#include "ufefp/dataset.hpp"
#include "ufefp/encoder.hpp"
#include "ufefp/train.hpp"

namespace ufefp {

using Eigen::MatrixXd;

/// Pooled embeddings, one row per sample.
struct Features {
  MatrixXd values;
  std::vector<int> labels;
};

/// Runs the encoder in evaluation mode on every sample (modality derived,
/// clip resampled to `frames`).
template <class S>
Features extract_features(Encoder<S>& encoder, const Dataset& data, int frames, Modality modality,
                          int batch_size = 64) {
  Features f;
  f.values.resize(static_cast<Eigen::Index>(data.size()), encoder.embedding_dim());
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::vector<SkeletonSequence> batch;
    for (std::size_t i = begin; i < end; ++i)
      batch.push_back(fit_frames(derive_modality(data.samples[i], data.graph, modality), frames));
    Tape<S> tape(false);
    Var<S> pooled = encoder.forward(tape, batch_input<S>(tape, batch), NormMode::kEval).pooled;
    const int d = pooled.dim(1);
    for (std::size_t r = 0; r < end - begin; ++r)
      for (int c = 0; c < d; ++c)
        f.values(static_cast<Eigen::Index>(begin + r), c) = pooled.value()[r * d + c];
  }
  for (const auto& s : data.samples) f.labels.push_back(s.label.value_or(-1));
  return f;
}

inline MatrixXd softmax_rows(const MatrixXd& logits) {
  MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

inline int argmax_row(const MatrixXd& m, Eigen::Index r) {
  Eigen::Index best;
  m.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

inline double accuracy(const MatrixXd& scores, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) throw StructuralError("score/label count mismatch");
  if (labels.empty()) return 0.0;
  int hit = 0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) hit += argmax_row(scores, r) == labels[r];
  return static_cast<double>(hit) / labels.size();
}

/// Affine classifier on standardized features.
struct LinearProbe {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd inv_std;
  MatrixXd weight;  // [D, K]
  Eigen::RowVectorXd bias;

  MatrixXd standardize(const MatrixXd& x) const {
    return ((x.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  }
  MatrixXd probabilities(const MatrixXd& x) const {
    return softmax_rows((standardize(x) * weight).rowwise() + bias);
  }
};

inline int checked_class_count(const std::vector<int>& train, const std::vector<int>& test = {}) {
  int k = 0;
  for (int y : train) {
    if (y < 0) throw InputError("unlabeled sample in a supervised split");
    k = std::max(k, y + 1);
  }
  for (int y : test) {
    if (y < 0) throw InputError("unlabeled sample in a supervised split");
    if (y >= k) throw InputError("test label " + std::to_string(y) + " never appears in training labels");
  }
  if (k < 2) throw InputError("need at least two classes");
  return k;
}

/// Momentum SGD with cosine decay on the mean cross-entropy.
inline LinearProbe train_linear_probe(const Features& train, int classes, const ProbeConfig& cfg,
                                      std::uint64_t seed) {
  const Eigen::Index n = train.values.rows(), d = train.values.cols();
  if (n == 0) throw InputError("linear probe needs training samples");
  LinearProbe p;
  p.mean = train.values.colwise().mean();
  p.inv_std.resize(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double var = (train.values.col(c).array() - p.mean(c)).square().mean();
    p.inv_std(c) = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  p.weight = MatrixXd::Zero(d, classes);
  p.bias = Eigen::RowVectorXd::Zero(classes);
  const MatrixXd x = p.standardize(train.values);

  MatrixXd vw = MatrixXd::Zero(d, classes);
  Eigen::RowVectorXd vb = Eigen::RowVectorXd::Zero(classes);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x9a0be));
  const Eigen::Index steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const double total = static_cast<double>(cfg.epochs * steps_per_epoch);
  long step = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index begin = 0; begin < n; begin += cfg.batch_size, ++step) {
      const Eigen::Index end = std::min<Eigen::Index>(n, begin + cfg.batch_size);
      const Eigen::Index m = end - begin;
      MatrixXd xb(m, d);
      for (Eigen::Index i = 0; i < m; ++i) xb.row(i) = x.row(order[begin + i]);
      MatrixXd g = softmax_rows((xb * p.weight).rowwise() + p.bias);
      for (Eigen::Index i = 0; i < m; ++i) g(i, train.labels[order[begin + i]]) -= 1.0;
      g /= static_cast<double>(m);
      const double lr = 0.5 * cfg.lr * (1.0 + std::cos(M_PI * step / total));
      vw = cfg.momentum * vw + lr * (xb.transpose() * g + cfg.weight_decay * p.weight);
      vb = cfg.momentum * vb + lr * g.colwise().sum();
      p.weight -= vw;
      p.bias -= vb;
    }
  }
  return p;
}

struct EvalResult {
  double accuracy = 0.0;
  MatrixXd probabilities;  ///< test-set class probabilities
};

/// Frozen encoder, linear classifier trained on `train`, accuracy on `test`.
template <class S>
EvalResult linear_eval(Encoder<S>& encoder, const Dataset& train, const Dataset& test, const TrainConfig& cfg) {
  const Features ftrain = extract_features(encoder, train, cfg.frames, cfg.modality);
  const Features ftest = extract_features(encoder, test, cfg.frames, cfg.modality);
  const int k = checked_class_count(ftrain.labels, ftest.labels);
  const LinearProbe probe = train_linear_probe(ftrain, k, cfg.probe, cfg.seed);
  EvalResult r;
  r.probabilities = probe.probabilities(ftest.values);
  r.accuracy = accuracy(r.probabilities, ftest.labels);
  return r;
}

/// Indices of floor(fraction * n_c) samples of every class c, drawn with a
/// seeded shuffle. Throws InputError when a class would get no sample.
inline std::vector<int> stratified_subset(const std::vector<int>& labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("labeled fraction must lie in (0, 1]");
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw InputError("unlabeled sample in a supervised split");
    by_class[labels[i]].push_back(static_cast<int>(i));
  }
  std::vector<int> out;
  for (auto& [label, idx] : by_class) {
    const int take = static_cast<int>(std::floor(fraction * idx.size() + 1e-9));
    if (take < 1)
      throw InputError("labeled fraction " + detail::format_real(fraction) + " leaves class " + std::to_string(label) +
                       " without a sample");
    Rng rng(derive_seed(seed, 0x57a7, static_cast<std::uint64_t>(label)));
    std::shuffle(idx.begin(), idx.end(), rng);
    out.insert(out.end(), idx.begin(), idx.begin() + take);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Fine-tunes every encoder parameter together with a new linear head on a
/// stratified `fraction` of `train`, then reports accuracy on `test`.
/// The head sees the pooled embedding through a parameter-free batch norm,
/// the fine-tuning counterpart of the probe's standardization: BYOL fixes
/// embedding directions but not their scale. `encoder` is modified in place.
template <class S>
EvalResult semi_supervised_finetune(Encoder<S>& encoder, const Dataset& train, const Dataset& test, double fraction,
                                    const TrainConfig& cfg) {
  const std::vector<int> train_labels = train.labels();
  const int k = checked_class_count(train_labels, test.labels());
  const std::vector<int> subset = stratified_subset(train_labels, fraction, cfg.seed);
  std::vector<SkeletonSequence> clips;
  for (int i : subset) clips.push_back(derive_modality(train.samples[i], train.graph, cfg.modality));

  const int d = encoder.embedding_dim();
  Rng init(derive_seed(cfg.seed, 0x4ead));
  Parameter<S> w("head.weight", {d, k});
  Parameter<S> b("head.bias", {k}, true);
  init_fan_in(w, d, init);

  ad::NormStats<S> head_stats{{"head.running_mean", std::vector<S>(d, S(0))},
                              {"head.running_var", std::vector<S>(d, S(1))}};
  auto head = [&](Tape<S>& tape, const Var<S>& pooled, NormMode mode) {
    Var<S> z = ad::batch_norm(pooled, tape.constant({d}, std::vector<S>(d, S(1))),
                              tape.constant({d}, std::vector<S>(d, S(0))), head_stats, mode);
    return ad::add_bias(ad::linear(z, tape.param(w)), tape.param(b));
  };

  ParamList<S> params;
  encoder.collect(params, "encoder.");
  params.add("", w);
  params.add("", b);
  MomentumState<S> momentum;
  const FinetuneConfig& fc = cfg.finetune;
  const int n = static_cast<int>(clips.size());
  const int steps_per_epoch = (n + fc.batch_size - 1) / fc.batch_size;
  const double total = static_cast<double>(fc.epochs) * steps_per_epoch;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(derive_seed(cfg.seed, 0xf1e7));
  long step = 0;
  for (int e = 0; e < fc.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), shuffle);
    for (int begin = 0; begin < n; begin += fc.batch_size, ++step) {
      const int end = std::min(n, begin + fc.batch_size);
      std::vector<SkeletonSequence> batch;
      std::vector<int> labels;
      for (int i = begin; i < end; ++i) {
        const SkeletonSequence& s = clips[order[i]];
        if (fc.augment) {
          Rng rng(derive_seed(cfg.seed, 0xa06, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(order[i])));
          batch.push_back(augment_view(s, cfg.augment, rng));
        } else {
          batch.push_back(fit_frames(s, cfg.frames));
        }
        labels.push_back(*s.label);
      }
      params.zero_grad();
      Tape<S> tape;
      Var<S> logits = head(tape, encoder.forward(tape, batch_input<S>(tape, batch), NormMode::kTrain).pooled,
                           NormMode::kTrain);
      Var<S> loss = ad::softmax_cross_entropy(logits, std::span<const int>(labels));
      if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericalFault("non-finite fine-tuning loss");
      tape.backward(loss);
      const double lr = 0.5 * fc.lr * (1.0 + std::cos(M_PI * step / total));
      sgd_momentum_step(params, momentum, lr, fc.momentum, fc.weight_decay);
    }
  }

  EvalResult r;
  r.probabilities.resize(static_cast<Eigen::Index>(test.size()), k);
  for (std::size_t begin = 0; begin < test.size(); begin += 64) {
    const std::size_t end = std::min(test.size(), begin + 64);
    std::vector<SkeletonSequence> batch;
    for (std::size_t i = begin; i < end; ++i)
      batch.push_back(fit_frames(derive_modality(test.samples[i], test.graph, cfg.modality), cfg.frames));
    Tape<S> tape(false);
    Var<S> logits =
        head(tape, encoder.forward(tape, batch_input<S>(tape, batch), NormMode::kEval).pooled, NormMode::kEval);
    MatrixXd l(static_cast<Eigen::Index>(end - begin), k);
    for (std::size_t r2 = 0; r2 < end - begin; ++r2)
      for (int c = 0; c < k; ++c) l(static_cast<Eigen::Index>(r2), c) = logits.value()[r2 * k + c];
    r.probabilities.middleRows(static_cast<Eigen::Index>(begin), l.rows()) = softmax_rows(l);
  }
  r.accuracy = accuracy(r.probabilities, test.labels());
  return r;
}

/// Equal-weight average of per-stream class probabilities, scored by argmax.
inline EvalResult ensemble_3s(const std::vector<MatrixXd>& stream_probabilities, const std::vector<int>& labels) {
  if (stream_probabilities.empty()) throw InputError("ensemble needs at least one stream");
  EvalResult r;
  r.probabilities = MatrixXd::Zero(stream_probabilities[0].rows(), stream_probabilities[0].cols());
  for (const auto& p : stream_probabilities) {
    if (p.rows() != r.probabilities.rows() || p.cols() != r.probabilities.cols())
      throw StructuralError("ensemble streams disagree in sample or class count");
    r.probabilities += p;
  }
  r.probabilities /= static_cast<double>(stream_probabilities.size());
  r.accuracy = accuracy(r.probabilities, labels);
  return r;
}

}  // namespace ufefp
