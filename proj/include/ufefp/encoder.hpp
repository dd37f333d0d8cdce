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

// Spatial-temporal feature transformation network: an input batch norm,
// a stack of ST-GCN blocks and a graph-convolutional GRU whose hidden
// states are pooled into the embedding.
//
// Feature maps are laid out [B, T, N, C] row-major throughout.

#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ufefp/augment.hpp"
#include "ufefp/autodiff.hpp"
#include "ufefp/error.hpp"
#include "ufefp/skeleton.hpp"

namespace ufefp {

using ad::NormMode;
using ad::ParamList;
using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Fan-in scaled uniform initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class S>
void init_fan_in(Parameter<S>& p, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : p.value) v = static_cast<S>(u(rng));
}

template <class S>
struct BatchNormLayer {
  Parameter<S> gamma;
  Parameter<S> beta;
  ad::NormStats<S> stats;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int channels)
      : gamma("gamma", {channels}, true),
        beta("beta", {channels}, true),
        stats{{"running_mean", std::vector<S>(channels, S(0))}, {"running_var", std::vector<S>(channels, S(1))}} {
    std::fill(gamma.value.begin(), gamma.value.end(), S(1));
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x, NormMode mode) {
    return ad::batch_norm(x, tape.param(gamma), tape.param(beta), stats, mode);
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    out.add(prefix, gamma);
    out.add(prefix, beta);
    out.add(prefix, stats.mean);
    out.add(prefix, stats.var);
  }
};

/// y = sum_k (A_k (.) M_k) x W_k + b over the joint axis of x [..., N, Cin].
template <class S>
struct GraphConv {
  int in_channels = 0;
  int out_channels = 0;
  int partitions = 1;
  int joints = 0;
  bool edge_importance = false;
  std::vector<S> adjacency;  // [K, N, N]
  Parameter<S> weight;       // [Cin, K*Cout], partition-major columns
  Parameter<S> bias;         // [Cout]
  Parameter<S> importance;   // [K, N, N], only when edge_importance

  GraphConv() = default;
  GraphConv(int cin, int cout, const PartitionedAdjacency& adj, bool learn_importance, Rng& rng)
      : in_channels(cin),
        out_channels(cout),
        partitions(adj.partitions()),
        joints(adj.joint_count),
        edge_importance(learn_importance),
        adjacency(adj.flat<S>()),
        weight("weight", {cin, adj.partitions() * cout}),
        bias("bias", {cout}, true) {
    init_fan_in(weight, cin, rng);
    if (edge_importance) {
      importance = Parameter<S>("edge_importance", {partitions, joints, joints});
      std::fill(importance.value.begin(), importance.value.end(), S(1));
    }
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x) {
    if (x.dim(-1) != in_channels || x.dim(-2) != joints)
      throw StructuralError("graph conv expects [..., " + std::to_string(joints) + ", " +
                            std::to_string(in_channels) + "], got " + ad::to_string(x.shape()));
    Var<S> adj = tape.constant({partitions, joints, joints}, adjacency);
    if (edge_importance) adj = ad::mul(adj, tape.param(importance));
    Var<S> z = ad::linear(x, tape.param(weight));
    return ad::add_bias(ad::graph_aggregate(z, adj), tape.param(bias));
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    out.add(prefix, weight);
    out.add(prefix, bias);
    if (edge_importance) out.add(prefix, importance);
  }
};

enum class ResidualMode { kAuto, kNone };

struct BlockConfig {
  int in_channels = 3;
  int out_channels = 32;
  int stride = 1;
  int kernel = 9;
  bool batch_norm = true;
  bool edge_importance = true;
  ResidualMode residual = ResidualMode::kAuto;
};

/// One spatial graph convolution followed by one temporal convolution:
/// y = ReLU(BN(TConv(ReLU(BN(GraphConv(x))))) + Residual(x)).
template <class S>
struct STGCNBlock {
  BlockConfig config;
  GraphConv<S> gcn;
  BatchNormLayer<S> bn_spatial;
  Parameter<S> tconv_weight;  // [kt*Cout, Cout]
  Parameter<S> tconv_bias;
  BatchNormLayer<S> bn_temporal;
  bool projection = false;
  bool identity = false;
  Parameter<S> res_weight;
  Parameter<S> res_bias;
  BatchNormLayer<S> res_bn;

  STGCNBlock() = default;
  STGCNBlock(const BlockConfig& cfg, const PartitionedAdjacency& adj, Rng& rng)
      : config(cfg),
        gcn(cfg.in_channels, cfg.out_channels, adj, cfg.edge_importance, rng),
        bn_spatial(cfg.out_channels),
        tconv_weight("tconv_weight", {cfg.kernel * cfg.out_channels, cfg.out_channels}),
        tconv_bias("tconv_bias", {cfg.out_channels}, true),
        bn_temporal(cfg.out_channels) {
    if (cfg.stride < 1 || cfg.kernel < 1) throw ConfigError("block stride and kernel must be positive");
    init_fan_in(tconv_weight, cfg.kernel * cfg.out_channels, rng);
    if (cfg.residual == ResidualMode::kAuto) {
      if (cfg.in_channels != cfg.out_channels || cfg.stride != 1) {
        projection = true;
        res_weight = Parameter<S>("res_weight", {cfg.in_channels, cfg.out_channels});
        res_bias = Parameter<S>("res_bias", {cfg.out_channels}, true);
        res_bn = BatchNormLayer<S>(cfg.out_channels);
        init_fan_in(res_weight, cfg.in_channels, rng);
      } else {
        identity = true;
      }
    }
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x, NormMode mode) {
    if (x.rank() != 4 || x.dim(3) != config.in_channels)
      throw StructuralError("ST-GCN block expects " + std::to_string(config.in_channels) + " channels, got " +
                            ad::to_string(x.shape()));
    Var<S> h = gcn.forward(tape, x);
    if (config.batch_norm) h = bn_spatial.forward(tape, h, mode);
    h = ad::relu(h);
    h = ad::add_bias(ad::temporal_conv(h, tape.param(tconv_weight), config.kernel, config.stride),
                     tape.param(tconv_bias));
    if (config.batch_norm) h = bn_temporal.forward(tape, h, mode);
    if (identity) {
      h = ad::add(h, x);
    } else if (projection) {
      Var<S> r = config.stride > 1 ? ad::time_subsample(x, config.stride) : x;
      r = ad::add_bias(ad::linear(r, tape.param(res_weight)), tape.param(res_bias));
      if (config.batch_norm) r = res_bn.forward(tape, r, mode);
      h = ad::add(h, r);
    }
    return ad::relu(h);
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    gcn.collect(out, prefix + "gcn.");
    if (config.batch_norm) bn_spatial.collect(out, prefix + "bn_spatial.");
    out.add(prefix, tconv_weight);
    out.add(prefix, tconv_bias);
    if (config.batch_norm) bn_temporal.collect(out, prefix + "bn_temporal.");
    if (projection) {
      out.add(prefix, res_weight);
      out.add(prefix, res_bias);
      if (config.batch_norm) res_bn.collect(out, prefix + "res_bn.");
    }
  }
};

template <class S>
struct GRUOutput {
  Var<S> hidden_seq;   ///< [B, T, N, H] after the output graph convolution
  Var<S> last_hidden;  ///< [B, N, H] recurrent state at the final step
};

/// GRU whose gates are per-joint 1x1 convolutions; the hidden sequence is
/// refined by a graph convolution applied independently at every step.
template <class S>
struct GConvGRU {
  int in_channels = 0;
  int hidden = 0;
  Parameter<S> input_weight;   // [Cin, 3H] columns: update | reset | candidate
  Parameter<S> hidden_gates;   // [H, 2H]   columns: update | reset
  Parameter<S> hidden_cand;    // [H, H]
  Parameter<S> gate_bias;      // [3H]
  GraphConv<S> output_gcn;

  GConvGRU() = default;
  GConvGRU(int cin, int h, const PartitionedAdjacency& adj, Rng& rng)
      : in_channels(cin),
        hidden(h),
        input_weight("input_weight", {cin, 3 * h}),
        hidden_gates("hidden_gates", {h, 2 * h}),
        hidden_cand("hidden_cand", {h, h}),
        gate_bias("gate_bias", {3 * h}, true),
        output_gcn(h, h, adj, false, rng) {
    init_fan_in(input_weight, cin, rng);
    init_fan_in(hidden_gates, h, rng);
    init_fan_in(hidden_cand, h, rng);
  }

  /// U x + b for every position of x [..., Cin] -> [..., 3H].
  Var<S> project_input(Tape<S>& tape, const Var<S>& x) {
    if (x.dim(-1) != in_channels) throw StructuralError("GRU input width mismatch: " + ad::to_string(x.shape()));
    return ad::add_bias(ad::linear(x, tape.param(input_weight)), tape.param(gate_bias));
  }

  /// One recurrence given the projected input [B, N, 3H] and h_prev [B, N, H].
  Var<S> step(Tape<S>& tape, const Var<S>& projected, const Var<S>& h_prev) {
    const int h = hidden;
    Var<S> gates = ad::add(ad::slice_last(projected, 0, 2 * h), ad::linear(h_prev, tape.param(hidden_gates)));
    Var<S> z = ad::sigmoid(ad::slice_last(gates, 0, h));
    Var<S> r = ad::sigmoid(ad::slice_last(gates, h, h));
    Var<S> cand = ad::tanh(
        ad::add(ad::slice_last(projected, 2 * h, h), ad::linear(ad::mul(r, h_prev), tape.param(hidden_cand))));
    Var<S> keep = ad::add_scalar(ad::scale(z, S(-1)), S(1));
    return ad::add(ad::mul(keep, h_prev), ad::mul(z, cand));
  }

  Var<S> step_from_input(Tape<S>& tape, const Var<S>& x_t, const Var<S>& h_prev) {
    return step(tape, project_input(tape, x_t), h_prev);
  }

  /// Scans features [B, T, N, Cin] from h_0 (zero when not supplied).
  GRUOutput<S> forward(Tape<S>& tape, const Var<S>& features, std::optional<Var<S>> h0 = std::nullopt) {
    const int b = features.dim(0), t = features.dim(1), n = features.dim(2);
    Var<S> projected = project_input(tape, features);
    Var<S> h = h0 ? *h0 : tape.constant({b, n, hidden}, std::vector<S>(static_cast<std::size_t>(b) * n * hidden));
    std::vector<Var<S>> states;
    states.reserve(t);
    for (int step_index = 0; step_index < t; ++step_index) {
      h = step(tape, ad::select_time(projected, step_index), h);
      states.push_back(h);
    }
    return {output_gcn.forward(tape, ad::stack_time(states)), h};
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    out.add(prefix, input_weight);
    out.add(prefix, hidden_gates);
    out.add(prefix, hidden_cand);
    out.add(prefix, gate_bias);
    output_gcn.collect(out, prefix + "output_gcn.");
  }
};

struct EncoderConfig {
  std::vector<int> channels{32, 64, 128, 512};
  std::vector<int> strides{1, 1, 1, 2};
  int kernel = 9;
  int gru_layers = 1;
  int hidden = 256;
  /// Expected input frame count; 0 disables the check.
  int frames = 50;
  bool batch_norm = true;
  bool edge_importance = true;

  void validate() const {
    if (channels.empty() || channels.size() != strides.size())
      throw ConfigError("encoder channels and strides must be non-empty and equally long");
    for (int c : channels)
      if (c < 1) throw ConfigError("encoder channel counts must be positive");
    for (int s : strides)
      if (s < 1) throw ConfigError("encoder strides must be positive");
    if (kernel < 1 || gru_layers < 0 || hidden < 1) throw ConfigError("invalid encoder kernel/gru/hidden");
  }

  /// Width of the pooled embedding and of the decoder-facing state.
  int embedding_dim() const { return gru_layers > 0 ? hidden : channels.back(); }

  int output_steps(int t) const {
    for (int s : strides) t = (t + s - 1) / s;
    return t;
  }
};

enum class EncoderVariant { kV1, kV2, kV3, kV4, kV5, kProposed };

inline EncoderVariant parse_encoder_variant(const std::string& s) {
  if (s == "v1") return EncoderVariant::kV1;
  if (s == "v2") return EncoderVariant::kV2;
  if (s == "v3") return EncoderVariant::kV3;
  if (s == "v4") return EncoderVariant::kV4;
  if (s == "v5") return EncoderVariant::kV5;
  if (s == "proposed") return EncoderVariant::kProposed;
  throw ConfigError("unknown encoder variant '" + s + "' (expected v1..v5 or proposed)");
}

/// Layer-count templates of the encoder ablation family. Deeper stacks keep
/// the 32/64/128/512 progression and halve time at the first 512-wide block.
inline EncoderConfig make_encoder_variant(EncoderVariant v) {
  EncoderConfig c;
  switch (v) {
    case EncoderVariant::kProposed: break;
    case EncoderVariant::kV1:
      c.channels = {32, 32, 64, 64, 128, 128, 512, 512};
      c.strides = {1, 1, 1, 1, 1, 1, 2, 1};
      break;
    case EncoderVariant::kV2:
      c.channels = {32, 64, 64, 128, 128, 512};
      c.strides = {1, 1, 1, 1, 1, 2};
      break;
    case EncoderVariant::kV3:
      c.channels = {64, 512};
      c.strides = {1, 2};
      break;
    case EncoderVariant::kV4: c.gru_layers = 0; break;
    case EncoderVariant::kV5: c.gru_layers = 2; break;
  }
  return c;
}

template <class S>
struct EncoderOutput {
  Var<S> hidden_seq;   ///< [B, T', N, C_h]
  Var<S> last_hidden;  ///< [B, N, C_h]
  Var<S> pooled;       ///< [B, C_h]
};

template <class S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, const SkeletonGraph& graph, Rng& rng)
      : config_(cfg), adjacency_(build_partitioned_adjacency(graph)), joints_(graph.joint_count) {
    cfg.validate();
    input_bn_ = BatchNormLayer<S>(graph.joint_count * 3);
    int cin = 3;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      BlockConfig bc;
      bc.in_channels = cin;
      bc.out_channels = cfg.channels[i];
      bc.stride = cfg.strides[i];
      bc.kernel = cfg.kernel;
      bc.batch_norm = cfg.batch_norm;
      bc.edge_importance = cfg.edge_importance;
      blocks_.emplace_back(bc, adjacency_, rng);
      cin = cfg.channels[i];
    }
    for (int l = 0; l < cfg.gru_layers; ++l) {
      grus_.emplace_back(cin, cfg.hidden, adjacency_, rng);
      cin = cfg.hidden;
    }
  }

  const EncoderConfig& config() const { return config_; }
  const PartitionedAdjacency& adjacency() const { return adjacency_; }
  int joints() const { return joints_; }
  int embedding_dim() const { return config_.embedding_dim(); }
  BatchNormLayer<S>& input_bn() { return input_bn_; }
  std::vector<STGCNBlock<S>>& blocks() { return blocks_; }
  std::vector<GConvGRU<S>>& grus() { return grus_; }

  /// input: [B, T, N, 3].
  EncoderOutput<S> forward(Tape<S>& tape, const Var<S>& input, NormMode mode) {
    if (input.rank() != 4 || input.dim(2) != joints_ || input.dim(3) != 3)
      throw StructuralError("encoder expects [B, T, " + std::to_string(joints_) + ", 3], got " +
                            ad::to_string(input.shape()));
    const int b = input.dim(0), t = input.dim(1);
    if (config_.frames > 0 && t != config_.frames)
      throw InputError("encoder configured for " + std::to_string(config_.frames) + " frames, got " +
                       std::to_string(t));
    Var<S> x = ad::reshape(input, {b * t, joints_ * 3});
    if (config_.batch_norm) x = input_bn_.forward(tape, x, mode);
    x = ad::reshape(x, {b, t, joints_, 3});
    for (auto& block : blocks_) x = block.forward(tape, x, mode);

    EncoderOutput<S> out;
    if (grus_.empty()) {
      const int steps = x.dim(1), c = x.dim(3);
      out.hidden_seq = x;
      out.last_hidden = ad::reshape(ad::mean_pool(ad::reshape(x, {b, steps, joints_ * c})), {b, joints_, c});
    } else {
      for (auto& gru : grus_) {
        GRUOutput<S> g = gru.forward(tape, x);
        x = g.hidden_seq;
        out.last_hidden = g.last_hidden;
      }
      out.hidden_seq = x;
    }
    out.pooled = ad::mean_pool(out.hidden_seq);
    return out;
  }

  void collect(ParamList<S>& out, const std::string& prefix) {
    if (config_.batch_norm) input_bn_.collect(out, prefix + "input_bn.");
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + "block" + std::to_string(i) + ".");
    for (std::size_t i = 0; i < grus_.size(); ++i) grus_[i].collect(out, prefix + "gru" + std::to_string(i) + ".");
  }

 private:
  EncoderConfig config_;
  PartitionedAdjacency adjacency_;
  int joints_ = 0;
  BatchNormLayer<S> input_bn_;
  std::vector<STGCNBlock<S>> blocks_;
  std::vector<GConvGRU<S>> grus_;
};

/// Packs equally shaped sequences into a [B, T, N, 3] leaf.
template <class S>
Var<S> batch_input(Tape<S>& tape, std::span<const SkeletonSequence> seqs) {
  if (seqs.empty()) throw InputError("empty batch");
  const int t = seqs.front().frames, n = seqs.front().joints;
  std::vector<S> values;
  values.reserve(seqs.size() * static_cast<std::size_t>(t) * n * 3);
  for (const auto& s : seqs) {
    if (s.frames != t || s.joints != n) throw InputError("batch sequences differ in shape");
    for (double v : s.coords) values.push_back(static_cast<S>(v));
  }
  return tape.constant({static_cast<int>(seqs.size()), t, n, 3}, std::move(values));
}

}  // namespace ufefp
