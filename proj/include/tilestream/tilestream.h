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

#ifndef TILESTREAM_TILESTREAM_H_
#define TILESTREAM_TILESTREAM_H_

#include <stddef.h>

#if defined(_WIN32)
#define TS_API __declspec(dllexport)
#else
#define TS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. The first four double as process exit codes. */
typedef enum ts_status {
  TS_OK = 0,
  TS_ERR_CONFIG = 1,
  TS_ERR_DATA = 2,
  TS_ERR_INFEASIBLE = 3,
  TS_ERR_INVALID_ARGUMENT = 4,
  TS_ERR_INTERNAL = 5
} ts_status;

/* An experiment context: configuration entries plus the outcome of the last
 * command. Not safe for concurrent use; separate contexts are independent. */
typedef struct ts_context ts_context;

TS_API const char* ts_version(void);

/* Message for the most recent failure on the calling thread, or "". */
TS_API const char* ts_last_error(void);

TS_API ts_status ts_context_create(ts_context** out);
TS_API void ts_context_destroy(ts_context* ctx);

/* Replaces the file-level entries with those of `path`. Overrides set with
 * ts_context_set are kept and still win. */
TS_API ts_status ts_context_load_config(ts_context* ctx, const char* path);

/* "section.key=value"; applied after the config file, in call order. */
TS_API ts_status ts_context_set(ts_context* ctx, const char* assignment);

/* Validated effective configuration with every default materialized. The
 * string lives until the next call on `ctx`. */
TS_API ts_status ts_context_effective_config(ts_context* ctx, const char** text);

/* Runs simulate, train, meta-train, finetune, eval-predictor or plan. */
TS_API ts_status ts_context_run(ts_context* ctx, const char* command);

/* Outcome of the last successful run; valid until the next run. */
TS_API const char* ts_context_report(const ts_context* ctx);
TS_API size_t ts_context_artifact_count(const ts_context* ctx);
TS_API const char* ts_context_artifact(const ts_context* ctx, size_t index);

/* Rewrites a bandwidth trace (either supported format) as t_s,mbps. */
TS_API ts_status ts_convert_trace(const char* input, const char* output, double scale);

#ifdef __cplusplus
}
#endif

#endif /* TILESTREAM_TILESTREAM_H_ */
