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

#include <filesystem>
#include <string>
#include <vector>

#include "tilestream/config.hpp"

namespace tilestream {

// Experiment commands. Each validates its inputs up front, writes its
// artifacts under the configured output directory and returns a short
// human-readable report. Failures surface as ConfigError (bad or missing
// inputs), DataError (malformed data) or InfeasibleError (planner).
struct CommandResult {
  std::string report;
  std::vector<std::filesystem::path> artifacts;
};

inline constexpr char kPlotSchema[] = "# schema=tilestream.plot/1";
inline constexpr char kCurveSchema[] = "# schema=tilestream.curve/1";
inline constexpr char kMetricsSchema[] = "# schema=tilestream.metrics/1";
inline constexpr char kPlanSchema[] = "# schema=tilestream.plan/1";
inline constexpr char kTraceSchema[] = "# schema=tilestream.trace/1";

/// Sweeps sessions x traces x predictors x ABRs. Writes one chunk CSV per
/// run under sessions/, summary.csv and plot_data.csv.
CommandResult cmd_simulate(const ExperimentConfig& config);

/// Trains the ConvLSTM predictor; writes convlstm.ckpt (or
/// convlstm.checkpoint when set) and train_curve.csv.
CommandResult cmd_train(const ExperimentConfig& config);

/// FOMAML on the saliency task family; writes the meta checkpoint, its
/// companion <checkpoint>.curve.csv and meta_curve.csv. Resumes from
/// meta.resume when set.
CommandResult cmd_meta_train(const ExperimentConfig& config);

/// Fine-tunes from finetune.init (or a random init) on one task; writes
/// finetune.ckpt and finetune_curve.csv with one row per epoch.
CommandResult cmd_finetune(const ExperimentConfig& config);

/// Per-(predictor, session) prediction metrics plus one aggregate row per
/// predictor; writes metrics.csv.
CommandResult cmd_eval_predictor(const ExperimentConfig& config);

/// Fits the time model from plan.measurements and picks the largest
/// feasible sampling frequency; writes plan.csv.
CommandResult cmd_plan(const ExperimentConfig& config);

/// Rewrites any supported bandwidth trace as t_s,mbps after scaling.
CommandResult cmd_convert_trace(const std::filesystem::path& input, const std::filesystem::path& output,
                                double scale);

/// Names accepted by run_command.
std::vector<std::string> command_names();
CommandResult run_command(const std::string& name, const ExperimentConfig& config);

}  // namespace tilestream
