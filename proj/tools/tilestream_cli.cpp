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

// tilestream command-line front end. Talks to the library only through the
// C API.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tilestream/tilestream.h"

namespace {

constexpr int kExitInternal = 4;

int exit_code(ts_status s) {
  switch (s) {
    case TS_OK: return 0;
    case TS_ERR_CONFIG: return 1;
    case TS_ERR_DATA: return 2;
    case TS_ERR_INFEASIBLE: return 3;
    // Precondition failures that survive config validation come from the inputs.
    case TS_ERR_INVALID_ARGUMENT: return 2;
    case TS_ERR_INTERNAL: break;
  }
  return kExitInternal;
}

int report_failure(ts_status s) {
  std::fprintf(stderr, "error: %s\n", ts_last_error());
  return exit_code(s);
}

struct ContextGuard {
  ts_context* ctx = nullptr;
  ~ContextGuard() { ts_context_destroy(ctx); }
};

struct RunOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string output;
  std::string seed;
  std::string workers;
};

void add_run_options(CLI::App* cmd, RunOptions& o, bool with_workers) {
  cmd->add_option("-c,--config", o.config, "Experiment config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "Override a key: section.key=value (repeatable)");
  cmd->add_option("-o,--output", o.output, "Output directory (experiment.output)");
  cmd->add_option("--seed", o.seed, "Seed (experiment.seed)");
  if (with_workers) cmd->add_option("-j,--workers", o.workers, "Worker threads (experiment.workers)");
}

int run(const std::string& command, const RunOptions& o, bool print_only) {
  ContextGuard g;
  ts_status s = ts_context_create(&g.ctx);
  if (s != TS_OK) return report_failure(s);
  if (!o.config.empty() && (s = ts_context_load_config(g.ctx, o.config.c_str())) != TS_OK) return report_failure(s);
  std::vector<std::string> sets = o.sets;
  if (!o.output.empty()) sets.push_back("experiment.output=" + o.output);
  if (!o.seed.empty()) sets.push_back("experiment.seed=" + o.seed);
  if (!o.workers.empty()) sets.push_back("experiment.workers=" + o.workers);
  for (const auto& a : sets)
    if ((s = ts_context_set(g.ctx, a.c_str())) != TS_OK) return report_failure(s);

  const char* effective = nullptr;
  if ((s = ts_context_effective_config(g.ctx, &effective)) != TS_OK) return report_failure(s);
  std::fputs(effective, stdout);
  if (print_only) return 0;
  std::fputs("\n", stdout);
  std::fflush(stdout);

  if ((s = ts_context_run(g.ctx, command.c_str())) != TS_OK) return report_failure(s);
  std::fputs(ts_context_report(g.ctx), stdout);
  for (size_t i = 0; i < ts_context_artifact_count(g.ctx); ++i) std::printf("wrote %s\n", ts_context_artifact(g.ctx, i));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tile-based 360 video streaming experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ts_version()));

  struct Command {
    const char* name;
    const char* help;
    bool workers;
  };
  const Command commands[] = {
      {"simulate", "Replay sessions over bandwidth traces for each predictor and ABR", true},
      {"train", "Train the ConvLSTM viewport predictor", false},
      {"meta-train", "Meta-train the saliency network (resumable)", false},
      {"finetune", "Fine-tune a saliency network on a few support samples", false},
      {"eval-predictor", "Prediction accuracy and F1 per predictor and session", true},
      {"plan", "Fit the prediction time model and choose the sampling frequency", false},
      {"config", "Print the effective configuration and exit", false},
  };
  std::vector<RunOptions> options(std::size(commands));
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    subs.push_back(app.add_subcommand(commands[i].name, commands[i].help));
    add_run_options(subs.back(), options[i], commands[i].workers);
  }

  std::string input, output;
  double scale = 1.0;
  CLI::App* convert = app.add_subcommand("convert-trace", "Rewrite a bandwidth trace as t_s,mbps");
  convert->add_option("input", input, "Trace CSV (t_ms,bytes,ms_since_last or t_s,mbps)")->required();
  convert->add_option("output", output, "Destination CSV")->required();
  convert->add_option("--scale", scale, "Multiply every rate by this factor")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (convert->parsed()) {
    const ts_status s = ts_convert_trace(input.c_str(), output.c_str(), scale);
    if (s != TS_OK) return report_failure(s);
    std::printf("wrote %s\n", output.c_str());
    return 0;
  }
  for (std::size_t i = 0; i < subs.size(); ++i)
    if (subs[i]->parsed()) {
      const std::string name = commands[i].name;
      return run(name, options[i], name == "config");
    }
  return 1;
}
