// Copyright 2026 The tilestream Authors
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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tilestream/meta.hpp"
#include "tilestream/sim.hpp"

namespace tilestream {

// Experiment configuration: a flat key-value text file with [sections].
//
//   # comment
//   [session]
//   grid_rows = 10
//   ladder = 1, 2.5, 5, 8, 16, 40
//
// Keys are addressed as section.key (for example session.lambda) by
// overrides. Relative paths resolve against the directory of the file that
// set them; overrides resolve against the working directory.
struct ExperimentConfig {
  // [experiment]
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  std::size_t workers = 1;

  // [session]
  SessionConfig session = default_session();

  // [sessions] viewing sessions: planted synthetic ones or head/saliency files.
  std::string sessions_source = "synthetic";  // synthetic | files
  std::size_t synthetic_sessions = 2;
  double synthetic_duration_s = 30.0;
  std::vector<std::filesystem::path> head_traces;
  std::vector<std::filesystem::path> saliency_dirs;

  // [bandwidth] entries are file paths or the word "synthetic".
  std::vector<std::string> traces = {"synthetic"};
  double bandwidth_scale = 1.0;
  double synthetic_mean_mbps = 300.0;
  double synthetic_volatility = 0.2;

  // [sweep]
  std::vector<std::string> predictors = {"lr", "oracle"};
  std::vector<AbrKind> abrs = {AbrKind::kCba, AbrKind::kPba};

  // [convlstm] map shape comes from the session grid and ratio.
  std::size_t cells = 1;
  std::size_t hidden = 4;
  std::size_t kernel = 3;
  std::size_t se_reduction = 2;
  std::filesystem::path convlstm_checkpoint;

  // [train]
  std::size_t train_epochs = 10;
  std::size_t train_batch = 8;
  double train_learning_rate = 1e-2;
  double train_holdout = 0.2;
  double train_duration_s = 120.0;

  // [meta]
  MetaConfig meta = default_meta();
  std::filesystem::path meta_tasks;  // empty: synthetic task family
  std::size_t meta_videos = 16;
  std::size_t meta_frames = 40;
  std::size_t meta_height = 8;
  std::size_t meta_width = 16;
  std::filesystem::path meta_checkpoint;  // empty: <output>/meta.ckpt
  std::filesystem::path meta_resume;

  // [finetune]
  std::filesystem::path finetune_init;  // empty: random initialization
  std::size_t finetune_epochs = 10;
  std::size_t finetune_support = 5;
  double finetune_learning_rate = 0.2;
  std::size_t finetune_video = 0;

  // [plan]
  std::filesystem::path plan_measurements;
  std::vector<double> plan_sf_grid = {1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 30};
  double plan_ratio = 144.0;
  double plan_reference_sf = 1.0;

  static SessionConfig default_session();
  static MetaConfig default_meta();

  /// Range and consistency checks; throws ConfigError.
  void validate() const;

  ConvLstmConfig convlstm_config() const;
};

struct ConfigEntry {
  std::string key;       // section.key
  std::string value;
  std::string origin;    // "file:line" or "--set"
  std::filesystem::path base_dir;
};

/// Parses the text form; ConfigError messages start with "origin:line:".
std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& origin,
                                           const std::filesystem::path& base_dir);

/// "section.key=value"; throws ConfigError when malformed.
ConfigEntry parse_override(const std::string& assignment);

/// Applies entries in order (later ones win). Unknown keys and bad values
/// throw ConfigError naming the entry's origin.
void apply_entries(ExperimentConfig& config, const std::vector<ConfigEntry>& entries);

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Every key with its current value, in the documented section order.
std::string format_config(const ExperimentConfig& config);

/// All known keys as section.key.
std::vector<std::string> config_keys();

}  // namespace tilestream
