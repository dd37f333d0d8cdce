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

// Command-line front end: data generation, pretraining, evaluation
// protocols, embedding export and the learning-rate audit table.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical fault.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "ufefp/ufefp.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ufefp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> checkpoints;
  std::string data;
  std::optional<double> fraction;
  std::optional<std::string> modality;
  // gen-data
  int classes = 5;
  int per_class = 150;
  int train_per_class = 100;
  int frames = 64;
  std::string ntu_dir;
  // semi-eval
  bool random_init = false;
  // lr-table
  int every = 1;
};

TrainConfig base_config(const Options& o) {
  TrainConfig cfg = o.config.empty() ? TrainConfig::desk() : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.modality) cfg.modality = parse_modality(*o.modality);
  cfg.sync();
  cfg.validate();
  return cfg;
}

/// A dataset path is either a single archive or a directory holding
/// train.ufd and test.ufd.
Dataset load_split(const std::string& data, const char* which) {
  if (data.empty()) throw ConfigError("--data is required");
  const fs::path p(data);
  if (fs::is_directory(p)) return load_dataset(p / (std::string(which) + ".ufd"));
  return load_dataset(p);
}

Dataset load_any(const std::string& data) {
  if (data.empty()) throw ConfigError("--data is required");
  const fs::path p(data);
  if (!fs::is_directory(p)) return load_dataset(p);
  Dataset all = load_dataset(p / "train.ufd");
  Dataset test = load_dataset(p / "test.ufd");
  all.samples.insert(all.samples.end(), test.samples.begin(), test.samples.end());
  return all;
}

void emit(const json& j, const std::string& out) {
  std::cout << j.dump() << '\n';
  if (out.empty()) return;
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw DataError("cannot write " + out);
  f << j.dump(2) << '\n';
}

const Archive& single_checkpoint(const Options& o, std::vector<Archive>& store) {
  if (o.checkpoints.size() != 1) throw ConfigError("exactly one --checkpoint is required");
  store.push_back(load_checkpoint(o.checkpoints[0]));
  return store.back();
}

/// Checkpoint configuration with the command-line overrides applied.
TrainConfig eval_config(const Archive& ckpt, const Options& o) {
  TrainConfig cfg = checkpoint_config(ckpt);
  if (!o.config.empty()) {
    const TrainConfig file = load_config(o.config);
    cfg.probe = file.probe;
    cfg.finetune = file.finetune;
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.modality && parse_modality(*o.modality) != cfg.modality)
    throw ConfigError("checkpoint was trained on the " + std::string(to_string(cfg.modality)) +
                      " stream, not " + *o.modality);
  return cfg;
}

int cmd_gen_data(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  Dataset all;
  if (!o.ntu_dir.empty()) {
    all.graph = ntu25_graph();
    const std::regex action("A(\\d{3})");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(o.ntu_dir))
      if (e.path().extension() == ".skeleton") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      SkeletonSequence s = load_ntu_skeleton(f);
      std::smatch m;
      const std::string stem = f.stem().string();
      if (std::regex_search(stem, m, action)) s.label = std::stoi(m[1]) - 1;
      s.meta = stem;
      all.samples.push_back(std::move(s));
    }
    if (all.empty()) throw DataError("no .skeleton files in " + o.ntu_dir);
  } else {
    SyntheticActionSpec spec;
    spec.class_count = o.classes;
    spec.samples_per_class = o.per_class;
    spec.frame_count = o.frames;
    if (o.seed) spec.seed = *o.seed;
    all.graph = spec.graph;
    all.samples = generate_synthetic(spec);
  }
  auto [train, test] = split_per_class(all, o.train_per_class);
  fs::create_directories(o.out);
  save_dataset(train, fs::path(o.out) / "train.ufd");
  save_dataset(test, fs::path(o.out) / "test.ufd");
  emit({{"train", train.size()}, {"test", test.size()}, {"classes", all.class_count()}, {"out", o.out}}, "");
  return 0;
}

int cmd_pretrain(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  const Dataset train = load_split(o.data, "train");
  std::optional<Archive> resume;
  TrainConfig cfg;
  if (!o.checkpoints.empty()) {
    if (o.checkpoints.size() != 1) throw ConfigError("pretrain resumes from a single --checkpoint");
    resume = load_checkpoint(o.checkpoints[0]);
    cfg = checkpoint_config(*resume);
  } else {
    cfg = base_config(o);
  }
  Trainer<float> trainer(cfg, train);
  if (resume) trainer.restore(*resume);
  fs::create_directories(o.out);
  {
    std::ofstream f(fs::path(o.out) / "config.cfg");
    f << format_config(trainer.config());
  }
  const PretrainResult r = pretrain<float>(trainer, o.out, [&](const EpochLog& e) {
    std::fprintf(stderr, "epoch %d/%d loss %.5f (byol %.5f, pretext %.5f) std %.4g %.1fs\n", e.epoch,
                 trainer.config().epochs, e.loss, e.byol, e.pretext, e.embedding_std, e.seconds);
  });
  emit({{"epochs", trainer.epoch()},
        {"final_loss", r.epochs.empty() ? 0.0 : r.epochs.back().loss},
        {"min_embedding_std", r.epochs.empty() ? 0.0 : r.min_embedding_std},
        {"checkpoint", (fs::path(o.out) / "final.ufc").string()}},
       "");
  return 0;
}

int cmd_linear_eval(const Options& o) {
  std::vector<Archive> store;
  const Archive& ckpt = single_checkpoint(o, store);
  const TrainConfig cfg = eval_config(ckpt, o);
  const Dataset train = load_split(o.data, "train");
  const Dataset test = load_split(o.data, "test");
  Model<float> model = load_model<float>(ckpt, train.graph);
  const EvalResult r = linear_eval(model.byol.online_encoder, train, test, cfg);
  emit({{"protocol", "linear"}, {"modality", to_string(cfg.modality)}, {"accuracy", r.accuracy}}, o.out);
  return 0;
}

int cmd_semi_eval(const Options& o) {
  if (!o.fraction) throw ConfigError("--fraction is required");
  const Dataset train = load_split(o.data, "train");
  const Dataset test = load_split(o.data, "test");
  TrainConfig cfg;
  Model<float> model;
  if (o.random_init) {
    cfg = base_config(o);
    model = Model<float>(cfg, train.graph);
  } else {
    std::vector<Archive> store;
    const Archive& ckpt = single_checkpoint(o, store);
    cfg = eval_config(ckpt, o);
    model = load_model<float>(ckpt, train.graph);
  }
  const EvalResult r = semi_supervised_finetune(model.byol.online_encoder, train, test, *o.fraction, cfg);
  emit({{"protocol", "semi"},
        {"fraction", *o.fraction},
        {"init", o.random_init ? "random" : "pretrained"},
        {"accuracy", r.accuracy}},
       o.out);
  return 0;
}

int cmd_ensemble(const Options& o) {
  if (o.checkpoints.size() != 3) throw ConfigError("ensemble-3s needs three --checkpoint values (joint, bone, motion)");
  const Dataset train = load_split(o.data, "train");
  const Dataset test = load_split(o.data, "test");
  const Modality expected[3] = {Modality::kJoint, Modality::kBone, Modality::kMotion};
  std::vector<Eigen::MatrixXd> probs;
  json streams = json::array();
  for (int i = 0; i < 3; ++i) {
    const Archive ckpt = load_checkpoint(o.checkpoints[i]);
    TrainConfig cfg = checkpoint_config(ckpt);
    if (cfg.modality != expected[i])
      throw ConfigError("checkpoint " + o.checkpoints[i] + " holds the " + to_string(cfg.modality) +
                        " stream, expected " + to_string(expected[i]));
    if (o.seed) cfg.seed = *o.seed;
    Model<float> model = load_model<float>(ckpt, train.graph);
    const EvalResult r = linear_eval(model.byol.online_encoder, train, test, cfg);
    probs.push_back(r.probabilities);
    streams.push_back({{"modality", to_string(cfg.modality)}, {"accuracy", r.accuracy}});
  }
  const EvalResult fused = ensemble_3s(probs, test.labels());
  emit({{"protocol", "ensemble-3s"}, {"streams", streams}, {"accuracy", fused.accuracy}}, o.out);
  return 0;
}

int cmd_export(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  std::vector<Archive> store;
  const Archive& ckpt = single_checkpoint(o, store);
  const TrainConfig cfg = eval_config(ckpt, o);
  const Dataset data = load_any(o.data);
  Model<float> model = load_model<float>(ckpt, data.graph);
  const std::size_t rows = export_embeddings(model.byol.online_encoder, data, cfg.frames, cfg.modality, o.out);
  emit({{"rows", rows}, {"out", o.out}}, "");
  return 0;
}

int cmd_lr_table(const Options& o) {
  const TrainConfig cfg = base_config(o);
  if (o.every < 1) throw ConfigError("--every must be positive");
  std::cout << "epoch,lr\n";
  for (int e = 0; e <= cfg.epochs; e += o.every) std::cout << e << ',' << detail::format_real(lr_schedule(e, cfg)) << '\n';
  if (cfg.epochs % o.every != 0)
    std::cout << cfg.epochs << ',' << detail::format_real(lr_schedule(cfg.epochs, cfg)) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Skeleton action representation learning toolkit"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key = value configuration file")->check(CLI::ExistingFile);
    c->add_option("--seed", o.seed, "override the run seed");
    c->add_option("--out", o.out, "output directory or file");
    c->add_option("--data", o.data, "dataset archive or directory with train.ufd/test.ufd");
  };
  auto modality = [&](CLI::App* c) {
    c->add_option("--modality", o.modality, "input stream")->check(CLI::IsMember({"joint", "bone", "motion"}));
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark or ingest NTU files");
  common(gen);
  gen->add_option("--classes", o.classes, "number of classes");
  gen->add_option("--per-class", o.per_class, "samples per class");
  gen->add_option("--train-per-class", o.train_per_class, "samples per class in the training split");
  gen->add_option("--frames", o.frames, "frames per synthetic clip");
  gen->add_option("--ntu-dir", o.ntu_dir, "directory of .skeleton files instead of synthetic data")
      ->check(CLI::ExistingDirectory);

  CLI::App* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  common(pre);
  modality(pre);
  pre->add_option("--checkpoint", o.checkpoints, "resume from this checkpoint")->expected(1);

  CLI::App* lin = app.add_subcommand("linear-eval", "frozen encoder + linear classifier");
  common(lin);
  modality(lin);
  lin->add_option("--checkpoint", o.checkpoints)->required()->expected(1);

  CLI::App* semi = app.add_subcommand("semi-eval", "fine-tune on a labeled fraction");
  common(semi);
  modality(semi);
  semi->add_option("--checkpoint", o.checkpoints)->expected(1);
  semi->add_option("--fraction", o.fraction)->required()->check(CLI::IsMember({0.01, 0.10}));
  semi->add_flag("--random-init", o.random_init, "start from a randomly initialized encoder");

  CLI::App* ens = app.add_subcommand("ensemble-3s", "fuse joint, bone and motion streams");
  common(ens);
  ens->add_option("--checkpoint", o.checkpoints, "joint, bone and motion checkpoints in that order")
      ->required()
      ->expected(3);

  CLI::App* exp = app.add_subcommand("export-embeddings", "write pooled embeddings as CSV");
  common(exp);
  modality(exp);
  exp->add_option("--checkpoint", o.checkpoints)->required()->expected(1);

  CLI::App* lr = app.add_subcommand("lr-table", "print the learning-rate schedule");
  common(lr);
  lr->add_option("--every", o.every, "epoch stride");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (pre->parsed()) return cmd_pretrain(o);
    if (lin->parsed()) return cmd_linear_eval(o);
    if (semi->parsed()) return cmd_semi_eval(o);
    if (ens->parsed()) return cmd_ensemble(o);
    if (exp->parsed()) return cmd_export(o);
    if (lr->parsed()) return cmd_lr_table(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalFault& e) {
    std::cerr << "numerical fault: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
