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

// Run configuration and its "key = value" text form.

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ufefp/augment.hpp"
#include "ufefp/byol.hpp"
#include "ufefp/decoder.hpp"
#include "ufefp/encoder.hpp"
#include "ufefp/error.hpp"
#include "ufefp/skeleton.hpp"

namespace ufefp {

enum class OptimizerKind { kLars, kSgdMomentum };
enum class Objective { kCombined, kByol, kPretext };

inline const char* to_string(OptimizerKind o) { return o == OptimizerKind::kLars ? "lars" : "sgd_momentum"; }
inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::kCombined: return "combined";
    case Objective::kByol: return "byol";
    case Objective::kPretext: return "pretext";
  }
  return "combined";
}
inline const char* to_string(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::kV1: return "v1";
    case EncoderVariant::kV2: return "v2";
    case EncoderVariant::kV3: return "v3";
    case EncoderVariant::kV4: return "v4";
    case EncoderVariant::kV5: return "v5";
    case EncoderVariant::kProposed: return "proposed";
  }
  return "proposed";
}

/// Divides every encoder width (block channels and GRU hidden) by `divisor`,
/// keeping at least four channels.
inline EncoderConfig scale_encoder_widths(EncoderConfig c, int divisor) {
  if (divisor < 1) throw ConfigError("width_divisor must be positive");
  for (auto& ch : c.channels) ch = std::max(4, ch / divisor);
  c.hidden = std::max(4, c.hidden / divisor);
  return c;
}

/// Linear-probe hyper-parameters (momentum SGD with cosine decay).
struct ProbeConfig {
  int epochs = 100;
  int batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// Supervised fine-tuning hyper-parameters for the semi-supervised protocol.
struct FinetuneConfig {
  int epochs = 100;
  int batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Draw augmented views during fine-tuning instead of plain resized clips.
  bool augment = false;
};

struct TrainConfig {
  std::string preset = "desk";
  int epochs = 200;
  int batch_size = 64;
  double warmup_epochs = 25.0;
  double peak_lr = 2.0 * 64 / 512;
  double final_lr = 0.001;
  double tau = 0.99;
  OptimizerKind optimizer = OptimizerKind::kLars;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  double lars_eps = 1e-9;
  /// Multiplies the LARS trust ratio.
  double trust_coefficient = 1e-3;
  std::uint64_t seed = 0;
  int frames = 50;
  EncoderVariant variant = EncoderVariant::kProposed;
  int width_divisor = 16;
  EncoderConfig encoder = scale_encoder_widths(make_encoder_variant(EncoderVariant::kProposed), 16);
  ByolConfig heads{1024 / 16, 512 / 16, 1024 / 16, 0.99};
  int decoder_width = 0;
  AugmentConfig augment;
  bool teacher_forcing = false;
  Objective objective = Objective::kCombined;
  Modality modality = Modality::kJoint;
  /// Save a checkpoint every this many epochs (0: only at the end).
  int checkpoint_every = 50;
  ProbeConfig probe;
  FinetuneConfig finetune;

  /// 200 epochs, batch 64, learning rate scaled by batch/512, widths / 16.
  static TrainConfig desk() { return TrainConfig{}; }

  /// 1500 epochs, batch 512, peak learning rate 2.0, full widths.
  static TrainConfig paper() {
    TrainConfig c;
    c.preset = "paper";
    c.epochs = 1500;
    c.batch_size = 512;
    c.peak_lr = 2.0;
    c.width_divisor = 1;
    c.encoder = make_encoder_variant(EncoderVariant::kProposed);
    c.heads = ByolConfig{1024, 512, 1024, 0.99};
    return c;
  }

  void set_variant(EncoderVariant v) {
    variant = v;
    const int frames_check = encoder.frames;
    encoder = scale_encoder_widths(make_encoder_variant(v), width_divisor);
    encoder.frames = frames_check;
  }

  void sync() {
    encoder.frames = frames;
    augment.out_frames = frames;
    heads.tau = tau;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(warmup_epochs >= 0.0 && warmup_epochs < epochs)) throw ConfigError("warmup_epochs must lie in [0, epochs)");
    if (!(final_lr > 0.0 && final_lr <= peak_lr)) throw ConfigError("need 0 < final_lr <= peak_lr");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
    if (weight_decay < 0.0 || momentum < 0.0 || momentum >= 1.0 || lars_eps < 0.0 || trust_coefficient <= 0.0)
      throw ConfigError("optimizer hyper-parameters out of range");
    if (frames < 2) throw ConfigError("frames must be at least 2");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    if (probe.epochs < 1 || probe.batch_size < 1 || probe.lr <= 0.0) throw ConfigError("invalid probe settings");
    if (finetune.epochs < 1 || finetune.batch_size < 1 || finetune.lr <= 0.0)
      throw ConfigError("invalid fine-tuning settings");
    encoder.validate();
    heads.validate();
    augment.validate();
    if (encoder.frames != frames || augment.out_frames != frames)
      throw ConfigError("encoder and augmentation frame counts must equal frames");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(key, trim(item))));
  if (out.empty()) throw ConfigError("'" + key + "' expects a comma-separated list");
  return out;
}

inline std::string format_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct ConfigField {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define UFEFP_REAL(key, member)                                                                        \
  {key,                                                                                                \
   {[](TrainConfig& c, const std::string& v) { c.member = parse_real(key, v); },                      \
    [](const TrainConfig& c) { return format_real(c.member); }}}
#define UFEFP_INT(key, member)                                                                         \
  {key,                                                                                                \
   {[](TrainConfig& c, const std::string& v) { c.member = static_cast<int>(parse_int(key, v)); },     \
    [](const TrainConfig& c) { return std::to_string(c.member); }}}
#define UFEFP_BOOL(key, member)                                                                        \
  {key,                                                                                                \
   {[](TrainConfig& c, const std::string& v) { c.member = parse_bool(key, v); },                      \
    [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }}}

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = {
      UFEFP_INT("epochs", epochs),
      UFEFP_INT("batch_size", batch_size),
      UFEFP_REAL("warmup_epochs", warmup_epochs),
      UFEFP_REAL("peak_lr", peak_lr),
      UFEFP_REAL("final_lr", final_lr),
      UFEFP_REAL("tau", tau),
      {"optimizer",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "lars") c.optimizer = OptimizerKind::kLars;
          else if (v == "sgd_momentum") c.optimizer = OptimizerKind::kSgdMomentum;
          else throw ConfigError("unknown optimizer '" + v + "' (expected lars|sgd_momentum)");
        },
        [](const TrainConfig& c) { return std::string(to_string(c.optimizer)); }}},
      UFEFP_REAL("weight_decay", weight_decay),
      UFEFP_REAL("momentum", momentum),
      UFEFP_REAL("lars_eps", lars_eps),
      UFEFP_REAL("trust_coefficient", trust_coefficient),
      {"seed",
       {[](TrainConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); },
        [](const TrainConfig& c) { return std::to_string(c.seed); }}},
      UFEFP_INT("frames", frames),
      {"encoder.channels",
       {[](TrainConfig& c, const std::string& v) { c.encoder.channels = parse_int_list("encoder.channels", v); },
        [](const TrainConfig& c) { return format_int_list(c.encoder.channels); }}},
      {"encoder.strides",
       {[](TrainConfig& c, const std::string& v) { c.encoder.strides = parse_int_list("encoder.strides", v); },
        [](const TrainConfig& c) { return format_int_list(c.encoder.strides); }}},
      UFEFP_INT("encoder.kernel", encoder.kernel),
      UFEFP_INT("encoder.gru_layers", encoder.gru_layers),
      UFEFP_INT("encoder.hidden", encoder.hidden),
      UFEFP_BOOL("encoder.batch_norm", encoder.batch_norm),
      UFEFP_BOOL("encoder.edge_importance", encoder.edge_importance),
      UFEFP_INT("heads.projector_hidden", heads.projector_hidden),
      UFEFP_INT("heads.projection_dim", heads.projection_dim),
      UFEFP_INT("heads.predictor_hidden", heads.predictor_hidden),
      UFEFP_INT("decoder_width", decoder_width),
      UFEFP_REAL("augment.rotation_max_deg", augment.rotation_max_deg),
      UFEFP_REAL("augment.jitter_sigma", augment.jitter_sigma),
      UFEFP_REAL("augment.jitter_joint_fraction", augment.jitter_joint_fraction),
      UFEFP_REAL("augment.shear_magnitude", augment.shear_magnitude),
      UFEFP_REAL("augment.crop_min_fraction", augment.crop_min_fraction),
      UFEFP_BOOL("augment.rotate_first", augment.rotate_first),
      UFEFP_BOOL("teacher_forcing", teacher_forcing),
      {"objective",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "combined") c.objective = Objective::kCombined;
          else if (v == "byol") c.objective = Objective::kByol;
          else if (v == "pretext") c.objective = Objective::kPretext;
          else throw ConfigError("unknown objective '" + v + "' (expected combined|byol|pretext)");
        },
        [](const TrainConfig& c) { return std::string(to_string(c.objective)); }}},
      {"modality",
       {[](TrainConfig& c, const std::string& v) { c.modality = parse_modality(v); },
        [](const TrainConfig& c) { return std::string(to_string(c.modality)); }}},
      UFEFP_INT("checkpoint_every", checkpoint_every),
      UFEFP_INT("probe.epochs", probe.epochs),
      UFEFP_INT("probe.batch_size", probe.batch_size),
      UFEFP_REAL("probe.lr", probe.lr),
      UFEFP_REAL("probe.momentum", probe.momentum),
      UFEFP_REAL("probe.weight_decay", probe.weight_decay),
      UFEFP_INT("finetune.epochs", finetune.epochs),
      UFEFP_INT("finetune.batch_size", finetune.batch_size),
      UFEFP_REAL("finetune.lr", finetune.lr),
      UFEFP_REAL("finetune.momentum", finetune.momentum),
      UFEFP_REAL("finetune.weight_decay", finetune.weight_decay),
      UFEFP_BOOL("finetune.augment", finetune.augment),
  };
  return fields;
}

#undef UFEFP_REAL
#undef UFEFP_INT
#undef UFEFP_BOOL

}  // namespace detail

/// Parses "key = value" lines ('#' starts a comment). `preset`, then
/// `width_divisor`, then `variant` are applied before every other key so
/// that explicit widths override the variant template.
inline TrainConfig parse_config(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::map<std::string, std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!seen.emplace(key, value).second) throw ConfigError("duplicate key '" + key + "'");
    entries.emplace_back(std::move(key), std::move(value));
  }

  TrainConfig c;
  if (auto it = seen.find("preset"); it != seen.end()) {
    if (it->second == "paper") c = TrainConfig::paper();
    else if (it->second != "desk") throw ConfigError("unknown preset '" + it->second + "' (expected desk|paper)");
  }
  if (auto it = seen.find("width_divisor"); it != seen.end()) {
    c.width_divisor = static_cast<int>(detail::parse_int("width_divisor", it->second));
    c.set_variant(c.variant);
  }
  if (auto it = seen.find("variant"); it != seen.end()) c.set_variant(parse_encoder_variant(it->second));

  const auto& fields = detail::config_fields();
  for (const auto& [key, value] : entries) {
    if (key == "preset" || key == "variant" || key == "width_divisor") continue;
    auto f = fields.find(key);
    if (f == fields.end()) throw ConfigError("unknown configuration key '" + key + "'");
    f->second.set(c, value);
  }
  c.sync();
  c.validate();
  return c;
}

inline TrainConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file " + path.string());
  return parse_config(in);
}

/// Full "key = value" dump; parse_config(format_config(c)) reproduces c.
inline std::string format_config(const TrainConfig& c) {
  std::string out = "preset = " + c.preset + "\n";
  out += "width_divisor = " + std::to_string(c.width_divisor) + "\n";
  out += "variant = " + std::string(to_string(c.variant)) + "\n";
  for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.get(c) + "\n";
  return out;
}

}  // namespace ufefp
