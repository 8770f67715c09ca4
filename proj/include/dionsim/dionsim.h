/* Copyright 2025 The dionsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

/* C interface to the dionsim core. All stateful entry points take an opaque
 * context (which carries the last error message) and produce opaque report
 * handles. Configuration goes in as JSON text; results come back as a pass
 * flag plus a JSON summary, with any data files written to the paths named
 * in the configuration. Relative output paths honor $DION_OUT_DIR.
 */
#ifndef DIONSIM_DIONSIM_H_
#define DIONSIM_DIONSIM_H_

#if defined(_WIN32)
#define DIONSIM_API __declspec(dllexport)
#else
#define DIONSIM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dionsim_status {
  DIONSIM_OK = 0,
  DIONSIM_ERROR_INVALID_ARGUMENT = 1,
  DIONSIM_ERROR_CONFIG = 2,
  DIONSIM_ERROR_NUMERICAL = 3,
  DIONSIM_ERROR_IO = 4,
  DIONSIM_ERROR_INTERNAL = 5,
} dionsim_status;

typedef struct dionsim_context dionsim_context;
typedef struct dionsim_report dionsim_report;

DIONSIM_API dionsim_context* dionsim_context_create(void);
DIONSIM_API void dionsim_context_destroy(dionsim_context* ctx);

/* Message for the most recent failing call on this context; empty string if
 * the last call succeeded. The pointer stays valid until the next call. */
DIONSIM_API const char* dionsim_last_error(const dionsim_context* ctx);

/* Deterministic end-to-end drivers. On DIONSIM_OK, *out_report owns the
 * result and must be released with dionsim_report_destroy. */
DIONSIM_API dionsim_status dionsim_run_task(dionsim_context* ctx,
                                            const char* config_json,
                                            dionsim_report** out_report);
DIONSIM_API dionsim_status dionsim_verify_equivalence(
    dionsim_context* ctx, const char* config_json, dionsim_report** out_report);
DIONSIM_API dionsim_status dionsim_run_ablation(dionsim_context* ctx,
                                                const char* config_json,
                                                dionsim_report** out_report);
DIONSIM_API dionsim_status dionsim_report_costs(dionsim_context* ctx,
                                                const char* config_json,
                                                dionsim_report** out_report);

/* 1 when every invariant checked by the command held, else 0. */
DIONSIM_API int dionsim_report_passed(const dionsim_report* report);
/* JSON summary, owned by the report handle. */
DIONSIM_API const char* dionsim_report_json(const dionsim_report* report);
DIONSIM_API void dionsim_report_destroy(dionsim_report* report);

typedef enum dionsim_param_kind {
  DIONSIM_PARAM_WEIGHT = 0,
  DIONSIM_PARAM_BIAS = 1,
  DIONSIM_PARAM_EMBEDDING = 2,
  DIONSIM_PARAM_UNEMBEDDING = 3,
  DIONSIM_PARAM_NORMALIZATION = 4,
} dionsim_param_kind;

/* Closed-form models, stateless. */
DIONSIM_API double dionsim_lr_scale_factor(dionsim_param_kind kind,
                                           long long d_out, long long d_in);
DIONSIM_API double dionsim_predict_dion_flops(long long m, long long n,
                                              long long r, int fs, int tp);
DIONSIM_API double dionsim_predict_muon_flops(long long m, long long n);
DIONSIM_API double dionsim_estimate_replicated_overhead_seconds(
    double per_matrix_seconds, double matrices_per_stage, double steps);

DIONSIM_API const char* dionsim_version(void);

#ifdef __cplusplus
}
#endif

#endif /* DIONSIM_DIONSIM_H_ */
