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

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>

#include "ufefp/dataset.hpp"
#include "ufefp/encoder.hpp"
#include "ufefp/error.hpp"
#include "ufefp/eval.hpp"

namespace ufefp {

/// CSV with header "id,label,e0,...,e{D-1}" and one row per sample. The id
/// is the sample's metadata string when it is CSV-safe, else its index.
/// Unlabeled samples get label -1. Values use shortest round-trip formatting.
inline std::string embeddings_csv(const Features& f, const Dataset& data) {
  std::string out = "id,label";
  for (Eigen::Index c = 0; c < f.values.cols(); ++c) out += ",e" + std::to_string(c);
  out += '\n';
  char buf[64];
  for (Eigen::Index r = 0; r < f.values.rows(); ++r) {
    const std::string& meta = data.samples[r].meta;
    const bool safe = !meta.empty() && meta.find_first_of(",\"\n\r") == std::string::npos;
    out += safe ? meta : std::to_string(r);
    out += ',' + std::to_string(f.labels[r]);
    for (Eigen::Index c = 0; c < f.values.cols(); ++c) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<float>(f.values(r, c)));
      out += ',';
      out.append(buf, p);
    }
    out += '\n';
  }
  return out;
}

/// Writes the evaluation-mode embeddings of `data`; returns the row count.
template <class S>
std::size_t export_embeddings(Encoder<S>& encoder, const Dataset& data, int frames, Modality modality,
                              const std::filesystem::path& path) {
  Features f;
  if (data.empty()) {
    f.values.resize(0, encoder.embedding_dim());
  } else {
    f = extract_features(encoder, data, frames, modality);
  }
  const std::string text = embeddings_csv(f, data);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
  return static_cast<std::size_t>(f.values.rows());
}

}  // namespace ufefp
