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

// Fidelity-preservation branch. The decoder starts from the online
// encoder's final recurrent state and regresses the view in reverse frame
// order, one skeleton per step.

#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ufefp/autodiff.hpp"
#include "ufefp/encoder.hpp"
#include "ufefp/skeleton.hpp"

namespace ufefp {

struct DecoderConfig {
  /// Width of the encoder state handed over (must match the encoder).
  int hidden = 256;
  /// Decoder GRU width; 0 means `hidden`. Any other value adds a learned
  /// hidden -> width bridge on the initial state.
  int width = 0;
  bool teacher_forcing = false;

  int effective_width() const { return width > 0 ? width : hidden; }
};

template <class S>
struct Decoder {
  DecoderConfig config;
  int joints = 0;
  GraphConv<S> input_gcn;  // 3 -> W
  GConvGRU<S> gru;         // W -> W, includes the per-step output graph conv
  Parameter<S> out_weight; // [W, 3]
  Parameter<S> out_bias;   // [3]
  Parameter<S> seed;       // [N, 3] first-step input skeleton
  bool bridged = false;
  Parameter<S> bridge;     // [hidden, W]

  Decoder() = default;
  Decoder(const DecoderConfig& cfg, const PartitionedAdjacency& adj, Rng& rng)
      : config(cfg),
        joints(adj.joint_count),
        input_gcn(3, cfg.effective_width(), adj, false, rng),
        gru(cfg.effective_width(), cfg.effective_width(), adj, rng),
        out_weight("out_weight", {cfg.effective_width(), 3}),
        out_bias("out_bias", {3}, true),
        seed("seed", {adj.joint_count, 3}) {
    init_fan_in(out_weight, cfg.effective_width(), rng);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& v : seed.value) v = static_cast<S>(unit(rng));
    if (cfg.effective_width() != cfg.hidden) {
      bridged = true;
      bridge = Parameter<S>("bridge", {cfg.hidden, cfg.effective_width()});
      init_fan_in(bridge, cfg.hidden, rng);
    }
  }

  /// One decoder step: (h_prev, previous skeleton [B, N, 3]) -> (h, skeleton).
  std::pair<Var<S>, Var<S>> step(Tape<S>& tape, const Var<S>& h_prev, const Var<S>& previous) {
    Var<S> d = input_gcn.forward(tape, previous);
    Var<S> h = gru.step_from_input(tape, d, h_prev);
    Var<S> feature = gru.output_gcn.forward(tape, h);
    Var<S> skeleton = ad::add_bias(ad::linear(feature, tape.param(out_weight)), tape.param(out_bias));
    return {h, skeleton};
  }

  /// last_hidden [B, N, hidden] -> predicted reversed sequence [B, frames, N, 3].
  /// `reversed_target` ([B, frames, N, 3]) is required with teacher forcing.
  Var<S> forward(Tape<S>& tape, const Var<S>& last_hidden, int frames,
                 std::optional<Var<S>> reversed_target = std::nullopt) {
    if (frames < 1) throw InputError("decoder needs at least one frame");
    if (last_hidden.rank() != 3 || last_hidden.dim(1) != joints || last_hidden.dim(2) != config.hidden)
      throw StructuralError("decoder state must be [B, " + std::to_string(joints) + ", " +
                            std::to_string(config.hidden) + "], got " + ad::to_string(last_hidden.shape()));
    const int b = last_hidden.dim(0);
    if (reversed_target) {
      const auto& s = reversed_target->shape();
      if (s.size() != 4 || s[0] != b || s[1] != frames || s[2] != joints || s[3] != 3)
        throw InputError("decoder target must be [B, " + std::to_string(frames) + ", N, 3], got " +
                         ad::to_string(s));
    }
    if (config.teacher_forcing && !reversed_target) throw InputError("teacher forcing requires the target sequence");

    Var<S> h = bridged ? ad::linear(last_hidden, tape.param(bridge)) : last_hidden;
    Var<S> previous = ad::broadcast_batch(tape.param(seed), b);
    std::vector<Var<S>> outputs;
    outputs.reserve(frames);
    for (int t = 0; t < frames; ++t) {
      auto [next_h, skeleton] = step(tape, h, previous);
      h = next_h;
      outputs.push_back(skeleton);
      previous = config.teacher_forcing ? ad::select_time(*reversed_target, t) : skeleton;
    }
    return ad::stack_time(outputs);
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    input_gcn.collect(out, prefix + "input_gcn.");
    gru.collect(out, prefix + "gru.");
    out.add(prefix, out_weight);
    out.add(prefix, out_bias);
    out.add(prefix, seed);
    if (bridged) out.add(prefix, bridge);
  }
};

/// Mean squared error between the prediction and the reversed view, [B, F, N, 3] each.
template <class S>
Var<S> pretext_loss(const Var<S>& predicted, const Var<S>& reversed_view) {
  if (predicted.shape() != reversed_view.shape())
    throw StructuralError("pretext_loss: shape mismatch " + ad::to_string(predicted.shape()) + " vs " +
                          ad::to_string(reversed_view.shape()));
  return ad::mse(predicted, reversed_view);
}

/// Plain-sequence form of the pretext loss: MSE(x', reverse(x)).
inline double pretext_loss(const SkeletonSequence& predicted, const SkeletonSequence& view) {
  const SkeletonSequence target = reverse(view);
  if (predicted.frames != target.frames || predicted.joints != target.joints)
    throw StructuralError("pretext_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < target.coords.size(); ++i) {
    const double d = predicted.coords[i] - target.coords[i];
    s += d * d;
  }
  return s / static_cast<double>(target.coords.size());
}

/// L = L_BYOL + L_P, unweighted.
inline double total_loss(double byol, double pretext) {
  if (!std::isfinite(byol) || !std::isfinite(pretext)) throw NumericalFault("non-finite loss component");
  return byol + pretext;
}

template <class S>
Var<S> total_loss(const Var<S>& byol, const Var<S>& pretext) {
  return ad::add(byol, pretext);
}

/// Reverses the frame axis of a [B, F, ...] batch leaf.
template <class S>
Var<S> reverse_time(Tape<S>& tape, const Var<S>& x) {
  const int b = x.dim(0), f = x.dim(1);
  const std::size_t inner = x.numel() / (static_cast<std::size_t>(b) * f);
  std::vector<S> values(x.numel());
  for (int bb = 0; bb < b; ++bb)
    for (int t = 0; t < f; ++t)
      std::copy_n(x.value().data() + (static_cast<std::size_t>(bb) * f + t) * inner, inner,
                  values.data() + (static_cast<std::size_t>(bb) * f + (f - 1 - t)) * inner);
  return tape.constant(x.shape(), std::move(values));
}

}  // namespace ufefp
