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
#ifndef DIONSIM_OPTIM_HPP_
#define DIONSIM_OPTIM_HPP_

#include <cstdint>

#include "dense.hpp"
#include "ledger.hpp"

namespace dion {

// ---------------------------------------------------------------------------
// Parameter kinds and per-kind learning-rate scale factors.
// ---------------------------------------------------------------------------

enum class ParamKind { kWeight, kBias, kEmbedding, kUnembedding, kNormalization };

struct ParamSpec {
  ParamKind kind = ParamKind::kWeight;
  index_t d_out = 1;
  index_t d_in = 1;
};

// Weight -> sqrt(d_out/d_in), Bias/Embedding/Normalization -> 1,
// Unembedding -> 1/sqrt(d_in). Multiplies a shared base learning rate so one
// rate transfers across parameter types and model widths.
double lr_scale_factor(const ParamSpec& spec);

// ---------------------------------------------------------------------------
// Dion (centralized).
// ---------------------------------------------------------------------------

struct DionConfig {
  double learning_rate = 0.01;
  double momentum_decay = 0.95;  // mu
  index_t rank = 1;
  double oversampling_factor = 1.25;
  double epsilon_col = 1e-30;
  double weight_decay = 0.0;
};

// Weights X (m x n), momentum M (m x n), warm-start basis Q (n x r).
// Optimizer state (M and Q) holds mn + nr elements.
struct DionState {
  DenseMatrix x;
  DenseMatrix m_buf;
  DenseMatrix q;
};

struct PowerIterResult {
  DenseMatrix p;      // m x r, orthonormal columns
  DenseMatrix r_mat;  // n x r
};

// Identifies the seeded stream used for Q re-randomization so the
// centralized and distributed paths draw identical values.
struct StepContext {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

// Single warm-started power iteration: p = qr(b q_prev).q, r_mat = b^T p.
PowerIterResult power_iter1(const DenseMatrix& b, const DenseMatrix& q_prev,
                            CostLedger* ledger = nullptr);

// Column j divided by max(norm(column j), epsilon); zero columns stay zero.
DenseMatrix column_normalize(const DenseMatrix& r_mat, double epsilon);

// Seeded unit-column starting basis Q0.
DenseMatrix dion_initial_q(index_t n, index_t rank, std::uint64_t seed,
                           double epsilon);
// Replacement basis drawn when the power iteration degenerates; both the
// centralized and distributed paths must use this exact stream.
DenseMatrix dion_rerandomized_q(index_t n, index_t rank, std::uint64_t seed,
                                std::uint64_t step, double epsilon);

DionState dion_init(DenseMatrix x0, const DionConfig& cfg, std::uint64_t seed);

// One step of centralized Dion:
//   B = M + G, (P, R) = power_iter1(B, Q), M' = B - (1-mu) P R^T,
//   Q' = column_normalize(R), X' = (1 - lr*wd) X - lr sqrt(m/n) P Q'^T.
// On a rank-deficient power iteration the basis is re-randomized once from
// the seeded stream; if still degenerate the matrix update is skipped
// (M' = B, Q' = Q, X' decays only).
DionState dion_step_centralized(const DionState& state, const DenseMatrix& grad,
                                const DionConfig& cfg, const StepContext& ctx,
                                CostLedger* ledger = nullptr);

// Transposed bookkeeping (warm start on the m-side basis):
//   P = qr(B^T Q).q (n x r), R = B P (m x r), M' = B - (1-mu) R P^T,
//   Q' = column_normalize(R), X' = (1 - lr*wd) X - lr sqrt(m/n) Q' P^T.
DionState dion_step_centralized_transposed(const DionState& state,
                                           const DenseMatrix& grad,
                                           const DionConfig& cfg,
                                           const StepContext& ctx,
                                           CostLedger* ledger = nullptr);

// Optimizer state element count (momentum + basis), mn + nr.
index_t dion_state_elements(const DionState& state);

// ---------------------------------------------------------------------------
// Muon baseline.
// ---------------------------------------------------------------------------

struct MuonConfig {
  double learning_rate = 0.01;
  double momentum_decay = 0.95;
  double weight_decay = 0.0;
  int ns_iterations = kDefaultNewtonSchulzIterations;
  NewtonSchulzCoefficients ns_coefficients;
};

struct MuonState {
  DenseMatrix x;
  DenseMatrix m_buf;
};

// M' = mu M + G, X' = (1 - lr*wd) X - lr sqrt(m/n) newton_schulz(M').
// A zero momentum matrix skips the update (Newton-Schulz undefined). Uses
// the same sqrt(m/n) scale as Dion so learning rates compare directly.
MuonState muon_step(const MuonState& state, const DenseMatrix& grad,
                    const MuonConfig& cfg, CostLedger* ledger = nullptr);

// ---------------------------------------------------------------------------
// Scalar optimizers (element-wise): AdamW and Lion.
// ---------------------------------------------------------------------------

enum class ScalarAlgorithm { kAdamW, kLion };

struct ScalarOptimConfig {
  ScalarAlgorithm algorithm = ScalarAlgorithm::kLion;
  double beta1 = 0.95;
  double beta2 = 0.98;
  double base_learning_rate = 0.01;
  double weight_decay = 0.0;
  double adam_epsilon = 1e-8;
  // Shared-base-LR scheme: effective lr = base * lr_scale_factor(spec).
  // When false the base learning rate is used literally.
  bool use_scale_factor = true;
};

ScalarOptimConfig adamw_defaults();
ScalarOptimConfig lion_defaults();

struct LionState {
  DenseMatrix x;
  DenseMatrix m_buf;
};

struct AdamWState {
  DenseMatrix x;
  DenseMatrix m1;
  DenseMatrix m2;
  long long t = 0;
};

// Sign-of-blend update with sign(0) = 0; every nonzero update entry has
// magnitude exactly equal to the effective learning rate.
LionState lion_step(const LionState& state, const DenseMatrix& grad,
                    const ScalarOptimConfig& cfg, const ParamSpec& spec);

// Bias-corrected AdamW with decoupled weight decay.
AdamWState adamw_step(const AdamWState& state, const DenseMatrix& grad,
                      const ScalarOptimConfig& cfg, const ParamSpec& spec);

// ---------------------------------------------------------------------------
// Learning-rate schedules (multipliers on the base rate).
// ---------------------------------------------------------------------------

enum class ScheduleKind { kConstant, kCooldown, kWarmup };

struct Schedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double fraction = 0.0;  // cooldown/warmup fraction of total steps
};

// step is 0-based. Cooldown decays linearly to zero over the final
// fraction of steps; warmup ramps linearly from zero over the initial one.
double schedule_multiplier(const Schedule& schedule, long long step,
                           long long total_steps);

}  // namespace dion

#endif  // DIONSIM_OPTIM_HPP_
