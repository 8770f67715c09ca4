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
#ifndef DIONSIM_ACCOUNTING_HPP_
#define DIONSIM_ACCOUNTING_HPP_

#include <cstdint>

#include "dense.hpp"

namespace dion {

struct CostModelInput {
  index_t m = 1;
  index_t n = 1;
  index_t r = 1;
  int dp = 1;
  int fs = 1;
  int tp = 1;
  double oversampling_factor = 1.25;
};

struct CommPrediction {
  std::int64_t dp_elements = 0;
  std::int64_t fs_elements = 0;
  std::int64_t tp_elements = 0;
};

struct CostPrediction {
  double dion_flops_per_device = 0.0;
  double muon_flops = 0.0;
  CommPrediction dion;
  CommPrediction muon;
  CommPrediction adam;
  std::int64_t dion_memory_elements = 0;  // mn + nr
  std::int64_t muon_memory_elements = 0;  // mn
  std::int64_t adam_memory_elements = 0;  // 2mn
  // Idealized TP volume with k = 1.25r taken literally (2nr + 2.25r^2),
  // reported alongside the integer-k prediction.
  double dion_tp_elements_idealized = 0.0;
};

// Per-device Dion step cost: 8mnr/(fs*tp) + 6.5*m*r^2/tp + (13/6)*r^3,
// element-wise work excluded.
double predict_dion_flops(const CostModelInput& input);

// Five Newton-Schulz iterations: 20mn^2 + 10n^3, independent of sharding.
// Wide matrices are transposed first.
double predict_muon_flops(index_t m, index_t n);

// Per-parameter per-step logical communication volumes. An axis of size 1
// predicts zero so that measured ledgers match exactly on degenerate meshes.
// Dion: DP (m+n)r, FS (m+1)r, TP 2nr + kr + r^2 with k = ceil(1.25r).
// Muon: mn on every sharded axis. Adam: DP mn only.
CostPrediction predict_comm(const CostModelInput& input);

// seconds = matrices_per_stage * per_matrix_seconds * steps.
double estimate_replicated_overhead_seconds(double per_matrix_seconds,
                                            double matrices_per_stage,
                                            double steps);

// Matrices each pipeline stage must orthogonalize per step.
double matrices_per_stage(index_t blocks, index_t matrices_per_block,
                          index_t pipeline_stages);

inline double seconds_to_days(double seconds) { return seconds / 86400.0; }

}  // namespace dion

#endif  // DIONSIM_ACCOUNTING_HPP_
