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
#include "dionsim/dionsim.h"

#include <string>

#include <json.hpp>

#include "accounting.hpp"
#include "runner.hpp"

struct dionsim_context {
  std::string last_error;
};

struct dionsim_report {
  bool passed = false;
  std::string json;
};

namespace {

dionsim_status status_from(dion::ErrorCode code) {
  switch (code) {
    case dion::ErrorCode::kConfig:
      return DIONSIM_ERROR_CONFIG;
    case dion::ErrorCode::kIo:
      return DIONSIM_ERROR_IO;
    case dion::ErrorCode::kInvalidArgument:
    case dion::ErrorCode::kDimensionMismatch:
      return DIONSIM_ERROR_INVALID_ARGUMENT;
    case dion::ErrorCode::kRankDeficient:
    case dion::ErrorCode::kNotPositiveDefinite:
    case dion::ErrorCode::kSingularTriangular:
    case dion::ErrorCode::kNoConvergence:
    case dion::ErrorCode::kDeterminism:
      return DIONSIM_ERROR_NUMERICAL;
  }
  return DIONSIM_ERROR_INTERNAL;
}

template <typename Fn>
dionsim_status guarded(dionsim_context* ctx, const char* config_json,
                       dionsim_report** out_report, Fn&& fn) {
  if (ctx == nullptr) return DIONSIM_ERROR_INVALID_ARGUMENT;
  ctx->last_error.clear();
  if (config_json == nullptr || out_report == nullptr) {
    ctx->last_error = "null argument";
    return DIONSIM_ERROR_INVALID_ARGUMENT;
  }
  *out_report = nullptr;
  try {
    nlohmann::json config;
    try {
      config = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
      throw dion::Error(dion::ErrorCode::kConfig,
                        std::string("config is not valid JSON: ") + e.what());
    }
    auto report = new dionsim_report(fn(config));
    *out_report = report;
    return DIONSIM_OK;
  } catch (const dion::Error& e) {
    ctx->last_error = e.what();
    return status_from(e.code());
  } catch (const std::exception& e) {
    ctx->last_error = e.what();
    return DIONSIM_ERROR_INTERNAL;
  }
}

}  // namespace

extern "C" {

dionsim_context* dionsim_context_create(void) { return new dionsim_context; }

void dionsim_context_destroy(dionsim_context* ctx) { delete ctx; }

const char* dionsim_last_error(const dionsim_context* ctx) {
  return ctx == nullptr ? "" : ctx->last_error.c_str();
}

dionsim_status dionsim_run_task(dionsim_context* ctx, const char* config_json,
                                dionsim_report** out_report) {
  return guarded(ctx, config_json, out_report, [](const nlohmann::json& j) {
    const dion::RunReport report = dion::run_task(dion::parse_run_config(j));
    return dionsim_report{report.pass, report.to_json().dump(2)};
  });
}

dionsim_status dionsim_verify_equivalence(dionsim_context* ctx,
                                          const char* config_json,
                                          dionsim_report** out_report) {
  return guarded(ctx, config_json, out_report, [](const nlohmann::json& j) {
    const dion::EquivalenceReport report =
        dion::verify_equivalence(dion::parse_equivalence_config(j));
    return dionsim_report{report.pass, report.to_json().dump(2)};
  });
}

dionsim_status dionsim_run_ablation(dionsim_context* ctx,
                                    const char* config_json,
                                    dionsim_report** out_report) {
  return guarded(ctx, config_json, out_report, [](const nlohmann::json& j) {
    const dion::AblationReport report =
        dion::run_ablation(dion::parse_ablation_config(j));
    return dionsim_report{report.pass, report.to_json().dump(2)};
  });
}

dionsim_status dionsim_report_costs(dionsim_context* ctx,
                                    const char* config_json,
                                    dionsim_report** out_report) {
  return guarded(ctx, config_json, out_report, [](const nlohmann::json& j) {
    const dion::CostReport report =
        dion::report_costs(dion::parse_cost_report_config(j));
    return dionsim_report{report.pass, report.body.dump(2)};
  });
}

int dionsim_report_passed(const dionsim_report* report) {
  return (report != nullptr && report->passed) ? 1 : 0;
}

const char* dionsim_report_json(const dionsim_report* report) {
  return report == nullptr ? "" : report->json.c_str();
}

void dionsim_report_destroy(dionsim_report* report) { delete report; }

double dionsim_lr_scale_factor(dionsim_param_kind kind, long long d_out,
                               long long d_in) {
  dion::ParamSpec spec;
  switch (kind) {
    case DIONSIM_PARAM_WEIGHT:
      spec.kind = dion::ParamKind::kWeight;
      break;
    case DIONSIM_PARAM_BIAS:
      spec.kind = dion::ParamKind::kBias;
      break;
    case DIONSIM_PARAM_EMBEDDING:
      spec.kind = dion::ParamKind::kEmbedding;
      break;
    case DIONSIM_PARAM_UNEMBEDDING:
      spec.kind = dion::ParamKind::kUnembedding;
      break;
    case DIONSIM_PARAM_NORMALIZATION:
      spec.kind = dion::ParamKind::kNormalization;
      break;
  }
  spec.d_out = d_out;
  spec.d_in = d_in;
  return dion::lr_scale_factor(spec);
}

double dionsim_predict_dion_flops(long long m, long long n, long long r,
                                  int fs, int tp) {
  return dion::predict_dion_flops({m, n, r, 1, fs, tp, 1.25});
}

double dionsim_predict_muon_flops(long long m, long long n) {
  return dion::predict_muon_flops(m, n);
}

double dionsim_estimate_replicated_overhead_seconds(double per_matrix_seconds,
                                                    double matrices_per_stage,
                                                    double steps) {
  return dion::estimate_replicated_overhead_seconds(per_matrix_seconds,
                                                    matrices_per_stage, steps);
}

const char* dionsim_version(void) { return "0.1.0"; }

}  // extern "C"
