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

// Feature-enrichment branch: projector/predictor heads, the normalized
// regression loss between online predictions and target projections, and
// the exponential-moving-average target update.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ufefp/autodiff.hpp"
#include "ufefp/encoder.hpp"
#include "ufefp/error.hpp"

namespace ufefp {

/// ||q/|q| - g/|g| ||^2 for plain vectors.
inline double byol_loss(std::span<const double> q, std::span<const double> g, double eps = 1e-12) {
  if (q.size() != g.size()) throw StructuralError("byol_loss: dimension mismatch");
  double qq = 0.0, gg = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    qq += q[i] * q[i];
    gg += g[i] * g[i];
  }
  const double qn = std::sqrt(qq) + eps, gn = std::sqrt(gg) + eps;
  double loss = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double d = q[i] / qn - g[i] / gn;
    loss += d * d;
  }
  return loss;
}

/// The equivalent 2 - 2 cos(q, g) form.
inline double byol_loss_cosine(std::span<const double> q, std::span<const double> g) {
  if (q.size() != g.size()) throw StructuralError("byol_loss_cosine: dimension mismatch");
  double qq = 0.0, gg = 0.0, qg = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    qq += q[i] * q[i];
    gg += g[i] * g[i];
    qg += q[i] * g[i];
  }
  return 2.0 - 2.0 * qg / (std::sqrt(qq) * std::sqrt(gg));
}

struct HeadConfig {
  int in = 256;
  int hidden = 1024;
  int out = 512;
};

/// Two fully connected layers: in -> hidden (BN, ReLU) -> out.
template <class S>
struct MLPHead {
  HeadConfig config;
  Parameter<S> w1, b1;
  BatchNormLayer<S> bn;
  Parameter<S> w2, b2;

  MLPHead() = default;
  MLPHead(const HeadConfig& cfg, Rng& rng)
      : config(cfg),
        w1("w1", {cfg.in, cfg.hidden}),
        b1("b1", {cfg.hidden}, true),
        bn(cfg.hidden),
        w2("w2", {cfg.hidden, cfg.out}),
        b2("b2", {cfg.out}, true) {
    init_fan_in(w1, cfg.in, rng);
    init_fan_in(w2, cfg.hidden, rng);
  }

  /// Weights that make the head compute x / sqrt(1 + eps) under running
  /// statistics (mean 0, var 1): hidden = [x, -x], out = relu(x) - relu(-x).
  static MLPHead identity(int width) {
    HeadConfig cfg{width, 2 * width, width};
    Rng rng(0);
    MLPHead h(cfg, rng);
    std::fill(h.w1.value.begin(), h.w1.value.end(), S(0));
    std::fill(h.w2.value.begin(), h.w2.value.end(), S(0));
    for (int i = 0; i < width; ++i) {
      h.w1.value[static_cast<std::size_t>(i) * 2 * width + i] = S(1);
      h.w1.value[static_cast<std::size_t>(i) * 2 * width + width + i] = S(-1);
      h.w2.value[static_cast<std::size_t>(i) * width + i] = S(1);
      h.w2.value[static_cast<std::size_t>(width + i) * width + i] = S(-1);
    }
    return h;
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x, NormMode mode) {
    Var<S> h = ad::add_bias(ad::linear(x, tape.param(w1)), tape.param(b1));
    h = ad::relu(bn.forward(tape, h, mode));
    return ad::add_bias(ad::linear(h, tape.param(w2)), tape.param(b2));
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    out.add(prefix, w1);
    out.add(prefix, b1);
    bn.collect(out, prefix + "bn.");
    out.add(prefix, w2);
    out.add(prefix, b2);
  }
};

struct ByolConfig {
  int projector_hidden = 1024;
  int projection_dim = 512;
  int predictor_hidden = 1024;
  double tau = 0.99;

  void validate() const {
    if (projector_hidden < 1 || projection_dim < 1 || predictor_hidden < 1)
      throw ConfigError("head widths must be positive");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  }
};

/// Online (encoder, projector, predictor) and target (encoder, projector).
template <class S>
struct ByolState {
  Encoder<S> online_encoder;
  MLPHead<S> online_projector;
  MLPHead<S> predictor;
  Encoder<S> target_encoder;
  MLPHead<S> target_projector;
  double tau = 0.99;

  ByolState() = default;
  /// The target starts as a copy of the online branch.
  ByolState(const EncoderConfig& enc, const ByolConfig& cfg, const SkeletonGraph& graph, Rng& rng)
      : online_encoder(enc, graph, rng),
        online_projector(HeadConfig{enc.embedding_dim(), cfg.projector_hidden, cfg.projection_dim}, rng),
        predictor(HeadConfig{cfg.projection_dim, cfg.predictor_hidden, cfg.projection_dim}, rng),
        target_encoder(online_encoder),
        target_projector(online_projector),
        tau(cfg.tau) {
    cfg.validate();
  }

  /// Parameters updated by gradient descent.
  void collect_online(ParamList<S>& out) {
    online_encoder.collect(out, "online.encoder.");
    online_projector.collect(out, "online.projector.");
    predictor.collect(out, "online.predictor.");
  }
  void collect_target(ParamList<S>& out) {
    target_encoder.collect(out, "target.encoder.");
    target_projector.collect(out, "target.projector.");
  }
};

template <class S>
struct ByolForward {
  Var<S> loss;               ///< batch mean of the symmetric loss
  EncoderOutput<S> online_x;  ///< online encoding of view x (feeds the decoder)
  EncoderOutput<S> online_y;
};

namespace detail {

template <class S>
Var<S> target_projection(Tape<S>& tape, ByolState<S>& state, const Var<S>& view, NormMode mode) {
  return state.target_projector.forward(tape, state.target_encoder.forward(tape, view, mode).pooled, mode);
}

}  // namespace detail

/// L = l(q(g(f(x))), sg(g'(f'(y)))) + l(q(g(f(y))), sg(g'(f'(x)))), averaged over the batch.
///
/// `mode` drives the online branch; the target branch uses batch statistics
/// without touching its running statistics during training. With
/// `stop_gradient` false the target branch is recorded on `tape` so its
/// parameters receive gradients (only meaningful as a negative control).
template <class S>
ByolForward<S> symmetric_byol_loss(Tape<S>& tape, const Var<S>& x, const Var<S>& y, ByolState<S>& state,
                                   NormMode mode, bool stop_gradient = true) {
  ByolForward<S> out;
  out.online_x = state.online_encoder.forward(tape, x, mode);
  out.online_y = state.online_encoder.forward(tape, y, mode);
  Var<S> qx = state.predictor.forward(tape, state.online_projector.forward(tape, out.online_x.pooled, mode), mode);
  Var<S> qy = state.predictor.forward(tape, state.online_projector.forward(tape, out.online_y.pooled, mode), mode);

  const NormMode target_mode = mode == NormMode::kEval ? NormMode::kEval : NormMode::kTrainFrozen;
  Var<S> gx, gy;
  if (stop_gradient) {
    Tape<S> frozen(false);
    Var<S> fx = detail::target_projection(frozen, state, frozen.constant(x.shape(), x.value()), target_mode);
    Var<S> fy = detail::target_projection(frozen, state, frozen.constant(y.shape(), y.value()), target_mode);
    gx = tape.constant(fx.shape(), fx.value());
    gy = tape.constant(fy.shape(), fy.value());
  } else {
    gx = detail::target_projection(tape, state, x, target_mode);
    gy = detail::target_projection(tape, state, y, target_mode);
  }
  Var<S> per_sample = ad::add(ad::normalized_sq_distance(qx, gy), ad::normalized_sq_distance(qy, gx));
  out.loss = ad::mean_all(per_sample);
  return out;
}

/// target <- tau * target + (1 - tau) * online, element-wise over every
/// parameter and running statistic of the encoder and projector.
template <class S>
void ema_update(ByolState<S>& state) {
  if (!(state.tau >= 0.0 && state.tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  ParamList<S> online, target;
  state.online_encoder.collect(online, "encoder.");
  state.online_projector.collect(online, "projector.");
  state.target_encoder.collect(target, "encoder.");
  state.target_projector.collect(target, "projector.");
  if (online.params.size() != target.params.size() || online.buffers.size() != target.buffers.size())
    throw StructuralError("ema_update: online and target layouts differ");
  const S tau = static_cast<S>(state.tau);
  const S rest = static_cast<S>(1.0 - state.tau);
  auto blend = [&](std::vector<S>& dst, const std::vector<S>& src, const std::string& name) {
    if (dst.size() != src.size()) throw StructuralError("ema_update: shape mismatch at " + name);
    if (state.tau == 1.0) return;
    if (state.tau == 0.0) {
      dst = src;
      return;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = tau * dst[i] + rest * src[i];
  };
  for (std::size_t i = 0; i < online.params.size(); ++i) {
    if (online.params[i].name != target.params[i].name)
      throw StructuralError("ema_update: parameter order differs at " + online.params[i].name);
    blend(target.params[i].param->value, online.params[i].param->value, online.params[i].name);
  }
  for (std::size_t i = 0; i < online.buffers.size(); ++i)
    blend(target.buffers[i].buffer->value, online.buffers[i].buffer->value, online.buffers[i].name);
}

/// True iff every target parameter gradient is exactly zero.
template <class S>
bool stop_gradient_check(ByolState<S>& state) {
  ParamList<S> target;
  state.collect_target(target);
  for (const auto& e : target.params)
    for (S g : e.param->grad)
      if (g != S(0)) return false;
  return true;
}

}  // namespace ufefp
