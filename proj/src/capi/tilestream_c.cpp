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

#include "tilestream/tilestream.h"

#include <exception>
#include <new>
#include <string>
#include <vector>

#include "tilestream/binary_io.hpp"
#include "tilestream/commands.hpp"
#include "tilestream/config.hpp"
#include "tilestream/error.hpp"

struct ts_context {
  std::vector<tilestream::ConfigEntry> file_entries;
  std::vector<tilestream::ConfigEntry> overrides;
  std::string effective;
  tilestream::CommandResult last;
  std::vector<std::string> artifacts;
};

namespace {

thread_local std::string g_last_error;

ts_status fail(ts_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs `body`, translating exceptions into status codes.
template <typename F>
ts_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return TS_OK;
  } catch (const tilestream::Error& e) {
    switch (e.code()) {
      case tilestream::ErrorCode::kConfig: return fail(TS_ERR_CONFIG, e.what());
      case tilestream::ErrorCode::kData: return fail(TS_ERR_DATA, e.what());
      case tilestream::ErrorCode::kInfeasible: return fail(TS_ERR_INFEASIBLE, e.what());
      case tilestream::ErrorCode::kInvalidArgument: return fail(TS_ERR_INVALID_ARGUMENT, e.what());
      case tilestream::ErrorCode::kInternal: break;
    }
    return fail(TS_ERR_INTERNAL, e.what());
  } catch (const std::bad_alloc&) {
    return fail(TS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(TS_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(TS_ERR_INTERNAL, "unknown error");
  }
}

tilestream::ExperimentConfig build(const ts_context& ctx) {
  tilestream::ExperimentConfig config;
  tilestream::apply_entries(config, ctx.file_entries);
  tilestream::apply_entries(config, ctx.overrides);
  config.validate();
  return config;
}

}  // namespace

extern "C" {

const char* ts_version(void) { return "0.1.0"; }

const char* ts_last_error(void) { return g_last_error.c_str(); }

ts_status ts_context_create(ts_context** out) {
  if (!out) return fail(TS_ERR_INVALID_ARGUMENT, "ts_context_create: null output pointer");
  return guarded([&] { *out = new ts_context(); });
}

void ts_context_destroy(ts_context* ctx) { delete ctx; }

ts_status ts_context_load_config(ts_context* ctx, const char* path) {
  if (!ctx || !path) return fail(TS_ERR_INVALID_ARGUMENT, "ts_context_load_config: null argument");
  return guarded([&] {
    std::string text;
    try {
      text = tilestream::io::read_text_file(path);
    } catch (const tilestream::Error& e) {
      throw tilestream::ConfigError(std::string("cannot read config: ") + e.what());
    }
    const std::filesystem::path p(path);
    auto entries = tilestream::parse_config_text(text, p.string(), p.parent_path());
    // Unknown keys and bad values surface here rather than at run time.
    tilestream::ExperimentConfig probe;
    tilestream::apply_entries(probe, entries);
    ctx->file_entries = std::move(entries);
  });
}

ts_status ts_context_set(ts_context* ctx, const char* assignment) {
  if (!ctx || !assignment) return fail(TS_ERR_INVALID_ARGUMENT, "ts_context_set: null argument");
  return guarded([&] {
    auto entry = tilestream::parse_override(assignment);
    tilestream::ExperimentConfig probe;
    tilestream::apply_entries(probe, {entry});
    ctx->overrides.push_back(std::move(entry));
  });
}

ts_status ts_context_effective_config(ts_context* ctx, const char** text) {
  if (!ctx || !text) return fail(TS_ERR_INVALID_ARGUMENT, "ts_context_effective_config: null argument");
  return guarded([&] {
    ctx->effective = tilestream::format_config(build(*ctx));
    *text = ctx->effective.c_str();
  });
}

ts_status ts_context_run(ts_context* ctx, const char* command) {
  if (!ctx || !command) return fail(TS_ERR_INVALID_ARGUMENT, "ts_context_run: null argument");
  return guarded([&] {
    ctx->last = {};
    ctx->artifacts.clear();
    ctx->last = tilestream::run_command(command, build(*ctx));
    for (const auto& a : ctx->last.artifacts) ctx->artifacts.push_back(a.string());
  });
}

const char* ts_context_report(const ts_context* ctx) { return ctx ? ctx->last.report.c_str() : ""; }

size_t ts_context_artifact_count(const ts_context* ctx) { return ctx ? ctx->artifacts.size() : 0; }

const char* ts_context_artifact(const ts_context* ctx, size_t index) {
  if (!ctx || index >= ctx->artifacts.size()) return nullptr;
  return ctx->artifacts[index].c_str();
}

ts_status ts_convert_trace(const char* input, const char* output, double scale) {
  if (!input || !output) return fail(TS_ERR_INVALID_ARGUMENT, "ts_convert_trace: null argument");
  return guarded([&] { tilestream::cmd_convert_trace(input, output, scale); });
}

}  // extern "C"
