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

// Pretraining: learning-rate schedule, LARS / momentum SGD, the joint
// BYOL + reversed-prediction training loop and checkpointing.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ufefp/augment.hpp"
#include "ufefp/byol.hpp"
#include "ufefp/config.hpp"
#include "ufefp/container.hpp"
#include "ufefp/dataset.hpp"
#include "ufefp/decoder.hpp"
#include "ufefp/encoder.hpp"

namespace ufefp {

/// Linear warmup from 0 to peak_lr, then cosine decay to final_lr at `epochs`.
inline double lr_schedule(double epoch, const TrainConfig& cfg) {
  const double w = cfg.warmup_epochs;
  if (epoch <= w) return w > 0.0 ? cfg.peak_lr * epoch / w : cfg.peak_lr;
  const double progress = std::min(1.0, (epoch - w) / (cfg.epochs - w));
  return cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + std::cos(M_PI * progress));
}

struct LarsOptions {
  double weight_decay = 0.0;
  double momentum = 0.9;
  double eps = 1e-9;
  double trust_coefficient = 1.0;
  /// Forces the trust ratio to 1, which turns the update into momentum SGD.
  bool unit_trust = false;
};

/// Per-parameter momentum buffers, aligned with a ParamList.
template <class S>
struct MomentumState {
  std::vector<std::vector<S>> velocity;

  void ensure(const ParamList<S>& params) {
    if (velocity.size() == params.params.size()) return;
    velocity.clear();
    for (const auto& e : params.params) velocity.emplace_back(e.param->size(), S(0));
  }
};

/// Throws NumericalFault naming the first parameter with a non-finite gradient.
template <class S>
void check_gradients(const ParamList<S>& params) {
  for (const auto& e : params.params)
    for (std::size_t i = 0; i < e.param->grad.size(); ++i)
      if (!std::isfinite(static_cast<double>(e.param->grad[i])))
        throw NumericalFault("non-finite gradient in " + e.name + " at index " + std::to_string(i));
}

/// v <- m v + lr * eta * (g + wd p); p <- p - v, with
/// eta = trust * |p| / (|g| + wd |p| + eps) (1 when either norm is zero).
/// Exempt parameters use eta = 1 and no weight decay.
template <class S>
void lars_step(ParamList<S>& params, MomentumState<S>& state, double lr, const LarsOptions& opt) {
  check_gradients(params);
  state.ensure(params);
  for (std::size_t k = 0; k < params.params.size(); ++k) {
    Parameter<S>& p = *params.params[k].param;
    auto& v = state.velocity[k];
    const double wd = p.exempt ? 0.0 : opt.weight_decay;
    double eta = 1.0;
    if (!p.exempt && !opt.unit_trust) {
      double pn = 0.0, gn = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        pn += static_cast<double>(p.value[i]) * p.value[i];
        gn += static_cast<double>(p.grad[i]) * p.grad[i];
      }
      pn = std::sqrt(pn);
      gn = std::sqrt(gn);
      if (pn > 0.0 && gn > 0.0) eta = opt.trust_coefficient * pn / (gn + wd * pn + opt.eps);
    }
    const double rate = lr * eta;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]) + wd * p.value[i];
      v[i] = static_cast<S>(opt.momentum * v[i] + rate * g);
      p.value[i] -= v[i];
    }
  }
}

template <class S>
void sgd_momentum_step(ParamList<S>& params, MomentumState<S>& state, double lr, double momentum,
                       double weight_decay) {
  LarsOptions opt;
  opt.momentum = momentum;
  opt.weight_decay = weight_decay;
  opt.unit_trust = true;
  lars_step(params, state, lr, opt);
}

/// Every trainable and shadow module of a pretraining run.
template <class S>
struct Model {
  ByolState<S> byol;
  Decoder<S> decoder;

  Model() = default;
  Model(const TrainConfig& cfg, const SkeletonGraph& graph) {
    Rng rng(derive_seed(cfg.seed, 0x1417));
    byol = ByolState<S>(cfg.encoder, cfg.heads, graph, rng);
    DecoderConfig dc;
    dc.hidden = cfg.encoder.embedding_dim();
    dc.width = cfg.decoder_width;
    dc.teacher_forcing = cfg.teacher_forcing;
    decoder = Decoder<S>(dc, byol.online_encoder.adjacency(), rng);
  }

  /// Parameters updated by the optimizer: online branch and decoder.
  ParamList<S> trainable() {
    ParamList<S> out;
    byol.collect_online(out);
    decoder.collect(out, "decoder.");
    return out;
  }

  /// Everything that a checkpoint carries.
  ParamList<S> everything() {
    ParamList<S> out = trainable();
    byol.collect_target(out);
    return out;
  }
};

struct StepLog {
  int epoch = 0;
  int batch = 0;
  long long global_step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double byol = 0.0;
  double pretext = 0.0;
};

struct EpochLog {
  int epoch = 0;  ///< 1-based count of completed epochs
  double lr = 0.0;
  double loss = 0.0;
  double byol = 0.0;
  double pretext = 0.0;
  double embedding_std = 0.0;
  double seconds = 0.0;
};

/// Mean over embedding dimensions of the across-sample standard deviation.
inline double mean_dimension_std(const std::vector<float>& pooled, int rows, int dims) {
  double total = 0.0;
  for (int d = 0; d < dims; ++d) {
    double m = 0.0;
    for (int r = 0; r < rows; ++r) m += pooled[static_cast<std::size_t>(r) * dims + d];
    m /= rows;
    double v = 0.0;
    for (int r = 0; r < rows; ++r) {
      const double x = pooled[static_cast<std::size_t>(r) * dims + d] - m;
      v += x * x;
    }
    total += std::sqrt(v / rows);
  }
  return total / dims;
}

inline constexpr int kMonitorBatch = 64;

template <class S = float>
class Trainer {
 public:
  Trainer(TrainConfig cfg, Dataset data) : cfg_(std::move(cfg)), graph_(data.graph) {
    cfg_.sync();
    cfg_.validate();
    if (data.empty()) throw InputError("pretraining needs a non-empty dataset");
    data.validate();
    for (auto& s : data.samples) samples_.push_back(derive_modality(s, graph_, cfg_.modality));
    model_ = Model<S>(cfg_, graph_);
    model_.byol.tau = cfg_.tau;
    const int monitor = std::min<int>(kMonitorBatch, static_cast<int>(samples_.size()));
    for (int i = 0; i < monitor; ++i)
      monitor_.push_back(fit_frames(samples_[static_cast<std::size_t>(i) * samples_.size() / monitor], cfg_.frames));
  }

  const TrainConfig& config() const { return cfg_; }
  Model<S>& model() { return model_; }
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }
  long long global_step() const { return global_step_; }
  bool finished() const { return epoch_ >= cfg_.epochs; }
  int steps_per_epoch() const {
    return static_cast<int>((samples_.size() + cfg_.batch_size - 1) / cfg_.batch_size);
  }

  /// Sample order of one epoch; a pure function of (seed, epoch).
  std::vector<int> epoch_order(int epoch) const {
    std::vector<int> order(samples_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg_.seed, 0x0dde, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  /// One optimizer step on the next batch.
  StepLog step() {
    if (finished()) throw InputError("training already finished");
    const auto order = epoch_order(epoch_);
    const int begin = batch_ * cfg_.batch_size;
    const int end = std::min<int>(begin + cfg_.batch_size, static_cast<int>(order.size()));
    std::vector<SkeletonSequence> xs, ys;
    for (int i = begin; i < end; ++i) {
      const auto idx = static_cast<std::uint64_t>(order[i]);
      Rng rx(derive_seed(cfg_.seed, static_cast<std::uint64_t>(epoch_), idx, 1));
      Rng ry(derive_seed(cfg_.seed, static_cast<std::uint64_t>(epoch_), idx, 2));
      xs.push_back(augment_view(samples_[order[i]], cfg_.augment, rx));
      ys.push_back(augment_view(samples_[order[i]], cfg_.augment, ry));
    }

    StepLog log;
    log.epoch = epoch_;
    log.batch = batch_;
    log.global_step = global_step_;
    log.lr = lr_schedule(epoch_ + static_cast<double>(batch_) / steps_per_epoch(), cfg_);

    ParamList<S> params = model_.trainable();
    params.zero_grad();
    Tape<S> tape;
    Var<S> x = batch_input<S>(tape, xs);
    Var<S> loss;
    Var<S> online_last;
    if (cfg_.objective != Objective::kPretext) {
      Var<S> y = batch_input<S>(tape, ys);
      ByolForward<S> f = symmetric_byol_loss(tape, x, y, model_.byol, NormMode::kTrain);
      log.byol = f.loss.item();
      loss = f.loss;
      online_last = f.online_x.last_hidden;
    }
    if (cfg_.objective != Objective::kByol) {
      if (!online_last.valid()) online_last = model_.byol.online_encoder.forward(tape, x, NormMode::kTrain).last_hidden;
      Var<S> target = reverse_time(tape, x);
      Var<S> predicted =
          model_.decoder.forward(tape, online_last, cfg_.frames, cfg_.teacher_forcing ? std::optional(target) : std::nullopt);
      Var<S> lp = pretext_loss(predicted, target);
      log.pretext = lp.item();
      loss = loss.valid() ? total_loss(loss, lp) : lp;
    }
    log.loss = loss.item();
    if (!std::isfinite(log.loss))
      throw NumericalFault("non-finite loss at epoch " + std::to_string(epoch_) + " batch " + std::to_string(batch_) +
                           " (byol " + detail::format_real(log.byol) + ", pretext " +
                           detail::format_real(log.pretext) + ")");
    tape.backward(loss);

    LarsOptions opt;
    opt.weight_decay = cfg_.weight_decay;
    opt.momentum = cfg_.momentum;
    opt.eps = cfg_.lars_eps;
    opt.trust_coefficient = cfg_.trust_coefficient;
    opt.unit_trust = cfg_.optimizer == OptimizerKind::kSgdMomentum;
    lars_step(params, momentum_, log.lr, opt);
    ema_update(model_.byol);

    ++global_step_;
    if (++batch_ >= steps_per_epoch()) {
      batch_ = 0;
      ++epoch_;
    }
    return log;
  }

  /// Runs the remaining steps of the current epoch and the collapse monitor.
  EpochLog run_epoch() {
    const auto start = std::chrono::steady_clock::now();
    const int e = epoch_;
    EpochLog out;
    int steps = 0;
    while (!finished() && epoch_ == e) {
      StepLog s = step();
      out.loss += s.loss;
      out.byol += s.byol;
      out.pretext += s.pretext;
      out.lr = s.lr;
      ++steps;
    }
    if (steps > 0) {
      out.loss /= steps;
      out.byol /= steps;
      out.pretext /= steps;
    }
    out.epoch = e + 1;
    out.embedding_std = embedding_std();
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
  }

  /// Collapse monitor on a fixed batch of un-augmented training clips.
  double embedding_std() {
    Tape<S> tape(false);
    Var<S> x = batch_input<S>(tape, monitor_);
    Var<S> pooled = model_.byol.online_encoder.forward(tape, x, NormMode::kEval).pooled;
    std::vector<float> v(pooled.value().begin(), pooled.value().end());
    return mean_dimension_std(v, pooled.dim(0), pooled.dim(1));
  }

  Archive checkpoint() {
    Archive a;
    a.put_text("kind", "checkpoint");
    a.put_text("meta/config", format_config(cfg_));
    a.put_int("meta/epoch", epoch_);
    a.put_int("meta/batch", batch_);
    a.put_int("meta/global_step", global_step_);
    a.put_real("meta/tau", model_.byol.tau);
    a.put_int("meta/rng_seed", static_cast<std::int64_t>(cfg_.seed));
    ParamList<S> all = model_.everything();
    for (const auto& e : all.params) a.put("param/" + e.name, e.param->value);
    for (const auto& e : all.buffers) a.put("buffer/" + e.name, e.buffer->value);
    ParamList<S> train = model_.trainable();
    momentum_.ensure(train);
    for (std::size_t i = 0; i < train.params.size(); ++i) a.put("momentum/" + train.params[i].name, momentum_.velocity[i]);
    return a;
  }

  void restore(const Archive& a) {
    if (!a.has("kind") || a.get_text("kind") != "checkpoint") throw DataError("archive does not hold a checkpoint");
    epoch_ = static_cast<int>(a.get_int("meta/epoch"));
    batch_ = static_cast<int>(a.get_int("meta/batch"));
    global_step_ = a.get_int("meta/global_step");
    model_.byol.tau = a.get_real("meta/tau");
    load_parameters(model_, a);
    ParamList<S> train = model_.trainable();
    momentum_.velocity.clear();
    for (const auto& e : train.params) {
      auto v = a.get<S>("momentum/" + e.name);
      if (v.size() != e.param->size()) throw DataError("momentum buffer size mismatch for " + e.name);
      momentum_.velocity.push_back(std::move(v));
    }
  }

  static void load_parameters(Model<S>& model, const Archive& a) {
    ParamList<S> all = model.everything();
    for (const auto& e : all.params) {
      auto v = a.get<S>("param/" + e.name);
      if (v.size() != e.param->size()) throw DataError("parameter size mismatch for " + e.name);
      e.param->value = std::move(v);
    }
    for (const auto& e : all.buffers) {
      auto v = a.get<S>("buffer/" + e.name);
      if (v.size() != e.buffer->value.size()) throw DataError("buffer size mismatch for " + e.name);
      e.buffer->value = std::move(v);
    }
  }

 private:
  TrainConfig cfg_;
  SkeletonGraph graph_;
  std::vector<SkeletonSequence> samples_;
  std::vector<SkeletonSequence> monitor_;
  Model<S> model_;
  MomentumState<S> momentum_;
  int epoch_ = 0;
  int batch_ = 0;
  long long global_step_ = 0;
};

/// Configuration stored in a checkpoint.
inline TrainConfig checkpoint_config(const Archive& a) {
  if (!a.has("kind") || a.get_text("kind") != "checkpoint") throw DataError("archive does not hold a checkpoint");
  return parse_config_text(a.get_text("meta/config"));
}

/// Rebuilds the model stored in a checkpoint.
template <class S = float>
Model<S> load_model(const Archive& a, const SkeletonGraph& graph) {
  const TrainConfig cfg = checkpoint_config(a);
  Model<S> m(cfg, graph);
  Trainer<S>::load_parameters(m, a);
  m.byol.tau = a.get_real("meta/tau");
  return m;
}

inline void save_checkpoint(const Archive& ckpt, const std::filesystem::path& path) { ckpt.save(path); }
inline Archive load_checkpoint(const std::filesystem::path& path) {
  Archive a = Archive::load(path);
  checkpoint_config(a);
  return a;
}

inline std::string epoch_log_json(const EpochLog& e) {
  using detail::format_real;
  return "{\"epoch\":" + std::to_string(e.epoch) + ",\"lr\":" + format_real(e.lr) + ",\"loss\":" +
         format_real(e.loss) + ",\"loss_byol\":" + format_real(e.byol) + ",\"loss_pretext\":" +
         format_real(e.pretext) + ",\"embedding_std\":" + format_real(e.embedding_std) +
         ",\"wall_seconds\":" + format_real(e.seconds) + "}";
}

struct PretrainResult {
  std::vector<EpochLog> epochs;
  double min_embedding_std = 0.0;
};

/// Full pretraining run. Writes train_log.jsonl, periodic
/// checkpoint_eNNNN.ufc files and final.ufc into `out_dir` (when non-empty).
/// On a numerical fault the last good state is saved as last_good.ufc and
/// the fault is rethrown.
template <class S = float>
PretrainResult pretrain(Trainer<S>& trainer, const std::filesystem::path& out_dir,
                        const std::function<void(const EpochLog&)>& on_epoch = {}) {
  PretrainResult result;
  result.min_embedding_std = std::numeric_limits<double>::infinity();
  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir / "train_log.jsonl", std::ios::app);
    if (!log) throw DataError("cannot open training log in " + out_dir.string());
  }
  const int every = trainer.config().checkpoint_every;
  while (!trainer.finished()) {
    Archive last_good = trainer.checkpoint();
    EpochLog e;
    try {
      e = trainer.run_epoch();
    } catch (const NumericalFault&) {
      if (!out_dir.empty()) last_good.save(out_dir / "last_good.ufc");
      throw;
    }
    result.epochs.push_back(e);
    result.min_embedding_std = std::min(result.min_embedding_std, e.embedding_std);
    if (log) log << epoch_log_json(e) << '\n' << std::flush;
    if (on_epoch) on_epoch(e);
    if (!out_dir.empty() && every > 0 && e.epoch % every == 0 && !trainer.finished()) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_e%04d.ufc", e.epoch);
      trainer.checkpoint().save(out_dir / name);
    }
  }
  if (!out_dir.empty()) trainer.checkpoint().save(out_dir / "final.ufc");
  return result;
}

}  // namespace ufefp
