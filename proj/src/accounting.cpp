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
#include "accounting.hpp"

#include <algorithm>

#include "dist.hpp"

namespace dion {

double predict_dion_flops(const CostModelInput& input) {
  const double m = static_cast<double>(input.m);
  const double n = static_cast<double>(input.n);
  const double r = static_cast<double>(input.r);
  const double fs = static_cast<double>(input.fs);
  const double tp = static_cast<double>(input.tp);
  return 8.0 * m * n * r / (fs * tp) + 6.5 * m * r * r / tp +
         (13.0 / 6.0) * r * r * r;
}

double predict_muon_flops(index_t m, index_t n) {
  if (m < n) std::swap(m, n);
  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  return 20.0 * md * nd * nd + 10.0 * nd * nd * nd;
}

CostPrediction predict_comm(const CostModelInput& input) {
  const std::int64_t m = input.m;
  const std::int64_t n = input.n;
  const std::int64_t r = input.r;
  const std::int64_t k = dion_sketch_size(r, input.oversampling_factor);
  const bool dp_active = input.dp > 1;
  const bool fs_active = input.fs > 1;
  const bool tp_active = input.tp > 1;

  CostPrediction out;
  out.dion.dp_elements = dp_active ? (m + n) * r : 0;
  out.dion.fs_elements = fs_active ? (m + 1) * r : 0;
  out.dion.tp_elements = tp_active ? 2 * n * r + k * r + r * r : 0;
  out.dion_tp_elements_idealized =
      tp_active ? 2.0 * static_cast<double>(n * r) +
                      2.25 * static_cast<double>(r * r)
                : 0.0;

  out.muon.dp_elements = dp_active ? m * n : 0;
  out.muon.fs_elements = fs_active ? m * n : 0;
  out.muon.tp_elements = tp_active ? m * n : 0;

  out.adam.dp_elements = dp_active ? m * n : 0;
  out.adam.fs_elements = 0;
  out.adam.tp_elements = 0;

  out.dion_memory_elements = m * n + n * r;
  out.muon_memory_elements = m * n;
  out.adam_memory_elements = 2 * m * n;

  out.dion_flops_per_device = predict_dion_flops(input);
  out.muon_flops = predict_muon_flops(input.m, input.n);
  return out;
}

double estimate_replicated_overhead_seconds(double per_matrix_seconds,
                                            double matrices_per_stage,
                                            double steps) {
  if (per_matrix_seconds < 0.0 || matrices_per_stage < 0.0 || steps < 0.0) {
    throw Error(ErrorCode::kInvalidArgument,
                "estimate_replicated_overhead_seconds: inputs must be "
                "nonnegative");
  }
  return matrices_per_stage * per_matrix_seconds * steps;
}

double matrices_per_stage(index_t blocks, index_t matrices_per_block,
                          index_t pipeline_stages) {
  if (blocks < 0 || matrices_per_block < 0 || pipeline_stages <= 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "matrices_per_stage: invalid inputs");
  }
  return static_cast<double>(blocks * matrices_per_block) /
         static_cast<double>(pipeline_stages);
}

}  // namespace dion
