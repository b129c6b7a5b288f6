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

#include "tilestream/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "tilestream/binary_io.hpp"
#include "tilestream/error.hpp"

namespace tilestream {

namespace fs = std::filesystem;

SessionConfig ExperimentConfig::default_session() {
  SessionConfig s;
  s.ratio = 1;
  s.window = 3;
  return s;
}

MetaConfig ExperimentConfig::default_meta() {
  MetaConfig m;
  m.alpha = 0.2;
  m.beta = 0.05;
  return m;
}

ConvLstmConfig ExperimentConfig::convlstm_config() const {
  const auto [h, w] = downsampled_shape(session.grid, session.ratio);
  ConvLstmConfig c;
  c.grid = session.grid;
  c.map_height = h;
  c.map_width = w;
  c.cells = cells;
  c.hidden = hidden;
  c.kernel = kernel;
  c.se_reduction = se_reduction;
  c.window = session.window;
  return c;
}

void ExperimentConfig::validate() const {
  try {
    session.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("session: ") + e.what());
  }
  if (workers == 0) throw ConfigError("experiment.workers must be >= 1");
  if (sessions_source == "synthetic") {
    if (synthetic_sessions == 0) throw ConfigError("sessions.count must be >= 1");
    if (!(synthetic_duration_s >= 2.0 * session.chunk_length_s))
      throw ConfigError("sessions.duration must cover at least two chunks");
  } else if (sessions_source == "files") {
    if (head_traces.empty()) throw ConfigError("sessions.heads is empty");
    if (head_traces.size() != saliency_dirs.size())
      throw ConfigError("sessions.heads and sessions.saliency must have the same length");
  } else {
    throw ConfigError("sessions.source must be synthetic or files");
  }
  if (traces.empty()) throw ConfigError("bandwidth.traces is empty");
  if (!(bandwidth_scale > 0.0)) throw ConfigError("bandwidth.scale must be > 0");
  if (!(synthetic_mean_mbps > 0.0)) throw ConfigError("bandwidth.synthetic_mean must be > 0");
  if (!(synthetic_volatility >= 0.0)) throw ConfigError("bandwidth.synthetic_volatility must be >= 0");
  if (predictors.empty()) throw ConfigError("sweep.predictors is empty");
  for (const auto& p : predictors)
    if (p != "lr" && p != "convlstm" && p != "oracle" && p != "zero")
      throw ConfigError("sweep.predictors: unknown predictor '" + p + "' (expected lr, convlstm, oracle or zero)");
  if (abrs.empty()) throw ConfigError("sweep.abrs is empty");
  try {
    convlstm_config().validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("convlstm: ") + e.what());
  }
  if (train_epochs == 0 || train_batch == 0) throw ConfigError("train.epochs and train.batch_size must be >= 1");
  if (!(train_learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(train_holdout >= 0.0 && train_holdout < 1.0)) throw ConfigError("train.holdout must lie in [0,1)");
  if (!(train_duration_s >= 4.0 * session.chunk_length_s)) throw ConfigError("train.duration is too short");
  try {
    meta.validate();
    SaliencyNetConfig{1, meta_height, meta_width}.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("meta: ") + e.what());
  }
  if (meta_videos == 0) throw ConfigError("meta.videos must be >= 1");
  if (meta_frames < kSupportSize + kQuerySize)
    throw ConfigError("meta.frames must be >= " + std::to_string(kSupportSize + kQuerySize));
  if (finetune_epochs == 0) throw ConfigError("finetune.epochs must be >= 1");
  if (finetune_support == 0 || finetune_support >= meta_frames)
    throw ConfigError("finetune.support must lie in [1, meta.frames)");
  if (!(finetune_learning_rate > 0.0)) throw ConfigError("finetune.learning_rate must be > 0");
  if (finetune_video >= meta_videos) throw ConfigError("finetune.video must be < meta.videos");
  if (plan_sf_grid.empty()) throw ConfigError("plan.sf_grid is empty");
  for (std::size_t i = 0; i < plan_sf_grid.size(); ++i)
    if (!(plan_sf_grid[i] > 0.0) || (i > 0 && !(plan_sf_grid[i] > plan_sf_grid[i - 1])))
      throw ConfigError("plan.sf_grid must be positive and strictly ascending");
  if (!(plan_ratio > 0.0) || !(plan_reference_sf > 0.0)) throw ConfigError("plan.ratio and plan.reference_sf must be > 0");
}

namespace {

// Value codecs. Parsers throw std::invalid_argument with a short reason; the
// caller adds the entry's origin.
struct Bad : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw Bad("expected a number, got '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) throw Bad("expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw Bad("expected a non-negative integer, got '" + s + "'");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw Bad("integer out of range: '" + s + "'");
  }
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

std::vector<std::string> to_list(const std::string& s) {
  std::vector<std::string> out;
  if (io::trim(s).empty()) return out;
  for (auto& item : io::split(s, ',')) {
    if (item.empty()) throw Bad("empty list item in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

fs::path to_path(const std::string& s, const fs::path& base) {
  if (s.empty()) return {};
  fs::path p(s);
  return (p.is_absolute() || base.empty() ? p : base / p).lexically_normal();
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename Range, typename F>
std::string join(const Range& items, F&& f) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += ", ";
    out += f(item);
  }
  return out;
}

struct KeyDef {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&, const fs::path&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define TS_DOUBLE(name, field)                                                            \
  KeyDef {                                                                                \
    name, [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.field = to_double(v); }, \
        [](const ExperimentConfig& c) { return fmt(c.field); }                            \
  }
#define TS_SIZE(name, field)                                                              \
  KeyDef {                                                                                \
    name, [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.field = to_size(v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                 \
  }
#define TS_PATH(name, field)                                                                          \
  KeyDef {                                                                                            \
    name, [](ExperimentConfig& c, const std::string& v, const fs::path& b) { c.field = to_path(v, b); }, \
        [](const ExperimentConfig& c) { return c.field.string(); }                                    \
  }

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"experiment.seed", [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.seed = to_u64(v); },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      TS_PATH("experiment.output", output_dir),
      TS_SIZE("experiment.workers", workers),

      TS_DOUBLE("session.chunk_length", session.chunk_length_s),
      {"session.grid_rows",
       [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.session.grid.rows = to_size(v); },
       [](const ExperimentConfig& c) { return std::to_string(c.session.grid.rows); }},
      {"session.grid_cols",
       [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.session.grid.cols = to_size(v); },
       [](const ExperimentConfig& c) { return std::to_string(c.session.grid.cols); }},
      {"session.ladder",
       [](ExperimentConfig& c, const std::string& v, const fs::path&) {
         std::vector<double> rates;
         for (const auto& item : to_list(v)) rates.push_back(to_double(item));
         try {
           c.session.ladder = BitrateLadder(rates);
         } catch (const InvalidArgument& e) {
           throw Bad(e.what());
         }
       },
       [](const ExperimentConfig& c) { return join(c.session.ladder.rates(), fmt); }},
      TS_DOUBLE("session.lambda", session.lambda),
      TS_DOUBLE("session.fov_h", session.fov.h_deg),
      TS_DOUBLE("session.fov_v", session.fov.v_deg),
      TS_DOUBLE("session.sf", session.sf),
      TS_SIZE("session.ratio", session.ratio),
      TS_SIZE("session.window", session.window),
      TS_DOUBLE("session.p_vp", session.p_vp),
      TS_DOUBLE("session.initial_estimate", session.initial_estimate_mbps),
      TS_DOUBLE("session.confidence_c0", session.confidence.c0),
      TS_DOUBLE("session.confidence_c1", session.confidence.c1),
      TS_DOUBLE("session.confidence_sf0", session.confidence.sf0),
      TS_DOUBLE("session.confidence_s", session.confidence.s),
      TS_SIZE("session.chunks", session.chunks),

      {"sessions.source",
       [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.sessions_source = v; },
       [](const ExperimentConfig& c) { return c.sessions_source; }},
      TS_SIZE("sessions.count", synthetic_sessions),
      TS_DOUBLE("sessions.duration", synthetic_duration_s),
      {"sessions.heads",
       [](ExperimentConfig& c, const std::string& v, const fs::path& b) {
         c.head_traces.clear();
         for (const auto& item : to_list(v)) c.head_traces.push_back(to_path(item, b));
       },
       [](const ExperimentConfig& c) { return join(c.head_traces, [](const fs::path& p) { return p.string(); }); }},
      {"sessions.saliency",
       [](ExperimentConfig& c, const std::string& v, const fs::path& b) {
         c.saliency_dirs.clear();
         for (const auto& item : to_list(v)) c.saliency_dirs.push_back(to_path(item, b));
       },
       [](const ExperimentConfig& c) { return join(c.saliency_dirs, [](const fs::path& p) { return p.string(); }); }},

      {"bandwidth.traces",
       [](ExperimentConfig& c, const std::string& v, const fs::path& b) {
         c.traces.clear();
         for (const auto& item : to_list(v)) c.traces.push_back(item == "synthetic" ? item : to_path(item, b).string());
       },
       [](const ExperimentConfig& c) { return join(c.traces, [](const std::string& s) { return s; }); }},
      TS_DOUBLE("bandwidth.scale", bandwidth_scale),
      TS_DOUBLE("bandwidth.synthetic_mean", synthetic_mean_mbps),
      TS_DOUBLE("bandwidth.synthetic_volatility", synthetic_volatility),

      {"sweep.predictors",
       [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.predictors = to_list(v); },
       [](const ExperimentConfig& c) { return join(c.predictors, [](const std::string& s) { return s; }); }},
      {"sweep.abrs",
       [](ExperimentConfig& c, const std::string& v, const fs::path&) {
         c.abrs.clear();
         for (const auto& item : to_list(v)) {
           try {
             c.abrs.push_back(parse_abr(item));
           } catch (const ConfigError& e) {
             throw Bad(e.what());
           }
         }
       },
       [](const ExperimentConfig& c) { return join(c.abrs, abr_name); }},

      TS_SIZE("convlstm.cells", cells),
      TS_SIZE("convlstm.hidden", hidden),
      TS_SIZE("convlstm.kernel", kernel),
      TS_SIZE("convlstm.se_reduction", se_reduction),
      TS_PATH("convlstm.checkpoint", convlstm_checkpoint),

      TS_SIZE("train.epochs", train_epochs),
      TS_SIZE("train.batch_size", train_batch),
      TS_DOUBLE("train.learning_rate", train_learning_rate),
      TS_DOUBLE("train.holdout", train_holdout),
      TS_DOUBLE("train.duration", train_duration_s),

      TS_DOUBLE("meta.alpha", meta.alpha),
      TS_DOUBLE("meta.beta", meta.beta),
      TS_SIZE("meta.inner_steps", meta.inner_steps),
      TS_SIZE("meta.task_batch", meta.task_batch),
      TS_SIZE("meta.iterations", meta.meta_iterations),
      TS_PATH("meta.tasks", meta_tasks),
      TS_SIZE("meta.videos", meta_videos),
      TS_SIZE("meta.frames", meta_frames),
      TS_SIZE("meta.height", meta_height),
      TS_SIZE("meta.width", meta_width),
      TS_PATH("meta.checkpoint", meta_checkpoint),
      TS_PATH("meta.resume", meta_resume),

      TS_PATH("finetune.init", finetune_init),
      TS_SIZE("finetune.epochs", finetune_epochs),
      TS_SIZE("finetune.support", finetune_support),
      TS_DOUBLE("finetune.learning_rate", finetune_learning_rate),
      TS_SIZE("finetune.video", finetune_video),

      TS_PATH("plan.measurements", plan_measurements),
      {"plan.sf_grid",
       [](ExperimentConfig& c, const std::string& v, const fs::path&) {
         c.plan_sf_grid.clear();
         for (const auto& item : to_list(v)) c.plan_sf_grid.push_back(to_double(item));
       },
       [](const ExperimentConfig& c) { return join(c.plan_sf_grid, fmt); }},
      TS_DOUBLE("plan.ratio", plan_ratio),
      TS_DOUBLE("plan.reference_sf", plan_reference_sf),
  };
  return table;
}

#undef TS_DOUBLE
#undef TS_SIZE
#undef TS_PATH

const KeyDef* find_key(const std::string& key) {
  for (const auto& k : key_table())
    if (key == k.key) return &k;
  return nullptr;
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_')) return false;
  return true;
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& origin,
                                           const fs::path& base_dir) {
  std::vector<ConfigEntry> out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = origin + ":" + std::to_string(number);
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = io::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = io::trim(line.substr(1, line.size() - 2));
      if (!valid_name(section)) throw ConfigError(where + ": bad section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = io::trim(line.substr(0, eq));
    if (!valid_name(key)) throw ConfigError(where + ": bad key '" + key + "'");
    if (section.empty()) throw ConfigError(where + ": key '" + key + "' outside any section");
    out.push_back({section + "." + key, io::trim(line.substr(eq + 1)), where, base_dir});
  }
  return out;
}

ConfigEntry parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("--set " + assignment + ": expected section.key=value");
  const std::string key = io::trim(assignment.substr(0, eq));
  const auto dot = key.find('.');
  if (dot == std::string::npos || !valid_name(key.substr(0, dot)) || !valid_name(key.substr(dot + 1)))
    throw ConfigError("--set " + assignment + ": key must look like section.key");
  return {key, io::trim(assignment.substr(eq + 1)), "--set " + key, fs::path()};
}

void apply_entries(ExperimentConfig& config, const std::vector<ConfigEntry>& entries) {
  for (const auto& e : entries) {
    const KeyDef* def = find_key(e.key);
    if (!def) throw ConfigError(e.origin + ": unknown key '" + e.key + "'");
    try {
      def->set(config, e.value, e.base_dir);
    } catch (const std::invalid_argument& err) {
      throw ConfigError(e.origin + ": " + e.key + ": " + err.what());
    }
  }
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = io::read_text_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  auto entries = parse_config_text(text, path.string(), path.parent_path());
  for (const auto& o : overrides) entries.push_back(parse_override(o));
  ExperimentConfig config;
  apply_entries(config, entries);
  config.validate();
  return config;
}

std::string format_config(const ExperimentConfig& config) {
  std::string out, section;
  for (const auto& k : key_table()) {
    const std::string key = k.key;
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      section = key.substr(0, dot);
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += key.substr(dot + 1) + " = " + k.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.emplace_back(k.key);
  return out;
}

}  // namespace tilestream
