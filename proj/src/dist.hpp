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
#ifndef DIONSIM_DIST_HPP_
#define DIONSIM_DIST_HPP_

#include <cstdint>

#include "mesh.hpp"
#include "optim.hpp"

namespace dion {

// k = ceil(oversampling_factor * rank).
index_t dion_sketch_size(index_t rank, double oversampling_factor);

// A k x m sketching matrix of iid N(0, 1/sqrt(k)) entries, defined by a
// counter-based stream so that any column slice can be regenerated locally:
// concatenating per-shard slices reproduces the full matrix exactly.
struct SketchMatrix {
  std::uint64_t key = 0;
  index_t k = 0;
  index_t m = 0;

  double entry(index_t row, index_t col) const;
  DenseMatrix columns(index_t col0, index_t count) const;
  DenseMatrix full() const { return columns(0, m); }
};

SketchMatrix make_sketch(std::uint64_t seed, std::string_view tag,
                         std::uint64_t step, index_t k, index_t m);

// Centralized randomized Cholesky QR: sketch, small QR for R1, whitening
// solve, Gram + Cholesky for R2. Returns P R1^{-1} R2^{-1} with orthonormal
// columns. A failed Cholesky is retried once with a relative ridge
// 1e-12 * trace(H)/r on the diagonal.
DenseMatrix randomized_cholesky_qr(const DenseMatrix& p,
                                   const SketchMatrix& sketch,
                                   CostLedger* ledger = nullptr);

// Sharded equivalent of randomized_cholesky_qr: the input rows are sharded
// along spec().row_axis (TP in the Dion steps), each shard uses its slice of
// the shared sketch, and only k x r and r x r matrices are all-reduced.
// Shard-for-shard equal to the centralized call on the assembled input.
ShardedMatrix distributed_orthogonalize(const ShardedMatrix& p,
                                        const SketchMatrix& sketch,
                                        CostLedger* ledger = nullptr);

// ---------------------------------------------------------------------------
// 3D-parallel Dion.
// ---------------------------------------------------------------------------

enum class DionPlacement {
  kStandard,    // X: rows over TP, cols over FS; Q: n x r, rows FS, cols TP
  kTransposed,  // X: rows over FS, cols over TP; Q: m x r, rows FS, cols TP
};

// Weights are DP-replicated, momentum is per-DP-replica (decoupled), and the
// warm-start basis is DP-replicated.
struct DistDionState {
  DionPlacement placement = DionPlacement::kStandard;
  ShardedMatrix x;
  ShardedMatrix m_local;
  ShardedMatrix q;
};

DistDionState dist_dion_init(const DenseMatrix& x0, const DionConfig& cfg,
                             std::uint64_t seed, const DeviceMesh& mesh,
                             DionPlacement placement = DionPlacement::kStandard);

// One step of 3D-parallel Dion on DP-varying gradient shards. Falls back to
// the shared re-randomize/skip policy on degenerate power iterations, and
// fails hard if weight replicas diverge across DP.
DistDionState dion_step_distributed(const DistDionState& state,
                                    const ShardedMatrix& grads,
                                    const DionConfig& cfg,
                                    const StepContext& ctx,
                                    CostLedger* ledger = nullptr);

// The transposed variant (power iteration on B^T, update Q P^T). The state
// must use kTransposed placement.
DistDionState dion_step_transposed(const DistDionState& state,
                                   const ShardedMatrix& grads,
                                   const DionConfig& cfg,
                                   const StepContext& ctx,
                                   CostLedger* ledger = nullptr);

// ---------------------------------------------------------------------------
// Double Dion: two-stage variant for extreme update sparsity.
// ---------------------------------------------------------------------------

struct DoubleDionConfig {
  double learning_rate = 0.01;
  double mu1 = 0.999;
  double mu2 = 0.95;
  index_t r1 = 1;
  index_t r2 = 1;
  bool delayed = false;  // stage 2 consumes the previous step's (P1, R1)
  double oversampling_factor = 1.25;
  double epsilon_col = 1e-30;
  double weight_decay = 0.0;
};

// Stage 1 keeps a DP-local momentum and produces DP-synchronized rank-r1
// factors; stage 2 state is fully DP-synchronous and needs no DP collectives.
struct DoubleDionState {
  ShardedMatrix x;
  ShardedMatrix m1_local;  // may differ across DP
  ShardedMatrix m2;        // byte-identical across DP
  ShardedMatrix q1;
  ShardedMatrix q2;
  ShardedMatrix prev_p1;  // valid when has_prev
  ShardedMatrix prev_r1;
  bool has_prev = false;
};

DoubleDionState double_dion_init(const DenseMatrix& x0,
                                 const DoubleDionConfig& cfg,
                                 std::uint64_t seed, const DeviceMesh& mesh);

DoubleDionState double_dion_step(const DoubleDionState& state,
                                 const ShardedMatrix& grads,
                                 const DoubleDionConfig& cfg,
                                 const StepContext& ctx,
                                 CostLedger* ledger = nullptr);

// ---------------------------------------------------------------------------
// Sharded baselines, used to measure their communication/FLOP footprints.
// ---------------------------------------------------------------------------

struct DistMuonState {
  ShardedMatrix x;  // rows over TP, cols over FS
  ShardedMatrix m_buf;
};

DistMuonState dist_muon_init(const DenseMatrix& x0, const DeviceMesh& mesh);

// DP mean-reduce of the gradient, FS/TP all-gathers of the momentum, then a
// replicated Newton-Schulz on every device; each device applies its slice.
DistMuonState muon_step_distributed(const DistMuonState& state,
                                    const ShardedMatrix& grads,
                                    const MuonConfig& cfg,
                                    CostLedger* ledger = nullptr);

struct DistAdamState {
  ShardedMatrix x;
  ShardedMatrix m1;
  ShardedMatrix m2;
  long long t = 0;
};

DistAdamState dist_adam_init(const DenseMatrix& x0, const DeviceMesh& mesh);

// DP mean-reduce of the gradient, then a purely local element-wise update.
DistAdamState adamw_step_distributed(const DistAdamState& state,
                                     const ShardedMatrix& grads,
                                     const ScalarOptimConfig& cfg,
                                     const ParamSpec& spec,
                                     CostLedger* ledger = nullptr);

}  // namespace dion

#endif  // DIONSIM_DIST_HPP_
