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
#include "optim.hpp"

#include <algorithm>
#include <cmath>

#include "rng.hpp"

namespace dion {

double lr_scale_factor(const ParamSpec& spec) {
  switch (spec.kind) {
    case ParamKind::kWeight:
      return std::sqrt(static_cast<double>(spec.d_out) /
                       static_cast<double>(spec.d_in));
    case ParamKind::kBias:
    case ParamKind::kEmbedding:
    case ParamKind::kNormalization:
      return 1.0;
    case ParamKind::kUnembedding:
      return 1.0 / std::sqrt(static_cast<double>(spec.d_in));
  }
  return 1.0;
}

PowerIterResult power_iter1(const DenseMatrix& b, const DenseMatrix& q_prev,
                            CostLedger* ledger) {
  if (b.cols != q_prev.rows) {
    throw Error(ErrorCode::kDimensionMismatch,
                "power_iter1: b has " + std::to_string(b.cols) +
                    " cols but q_prev has " + std::to_string(q_prev.rows) +
                    " rows");
  }
  const DenseMatrix product = matmul(b, q_prev, false, false, ledger);
  PowerIterResult result;
  result.p = householder_qr(product, ledger).q;
  result.r_mat = matmul(b, result.p, /*transpose_a=*/true,
                        /*transpose_b=*/false, ledger);
  return result;
}

DenseMatrix column_normalize(const DenseMatrix& r_mat, double epsilon) {
  DenseMatrix out = r_mat;
  for (index_t j = 0; j < out.cols; ++j) {
    double norm_sq = 0.0;
    for (index_t i = 0; i < out.rows; ++i) norm_sq += out(i, j) * out(i, j);
    const double denom = std::max(std::sqrt(norm_sq), epsilon);
    for (index_t i = 0; i < out.rows; ++i) out(i, j) /= denom;
  }
  return out;
}

DenseMatrix dion_initial_q(index_t n, index_t rank, std::uint64_t seed,
                           double epsilon) {
  const DenseMatrix raw =
      RandomStream::derive(seed, "dion-q0").normal_matrix(n, rank);
  return column_normalize(raw, epsilon);
}

DenseMatrix dion_rerandomized_q(index_t n, index_t rank, std::uint64_t seed,
                                std::uint64_t step, double epsilon) {
  const DenseMatrix raw =
      RandomStream::derive(seed, "dion-q-rerand", step).normal_matrix(n, rank);
  return column_normalize(raw, epsilon);
}

DionState dion_init(DenseMatrix x0, const DionConfig& cfg, std::uint64_t seed) {
  if (cfg.rank < 1 || cfg.rank > std::min(x0.rows, x0.cols)) {
    throw Error(ErrorCode::kInvalidArgument,
                "dion_init: rank " + std::to_string(cfg.rank) +
                    " out of range for " + std::to_string(x0.rows) + "x" +
                    std::to_string(x0.cols));
  }
  DionState state;
  state.m_buf = DenseMatrix(x0.rows, x0.cols);
  state.q = dion_initial_q(x0.cols, cfg.rank, seed, cfg.epsilon_col);
  state.x = std::move(x0);
  return state;
}

namespace {

// Shared degenerate-power-iteration policy: one retry with a re-randomized
// basis, then a decay-only step.
template <typename StepFn>
DionState dion_step_guarded(const DionState& state, const DenseMatrix& b,
                            const DionConfig& cfg, const StepContext& ctx,
                            index_t q_rows, StepFn step_with_q) {
  try {
    return step_with_q(state.q);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kRankDeficient &&
        e.code() != ErrorCode::kNotPositiveDefinite &&
        e.code() != ErrorCode::kSingularTriangular) {
      throw;
    }
  }
  const DenseMatrix retry_q = dion_rerandomized_q(
      q_rows, cfg.rank, ctx.seed, ctx.step, cfg.epsilon_col);
  try {
    return step_with_q(retry_q);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kRankDeficient &&
        e.code() != ErrorCode::kNotPositiveDefinite &&
        e.code() != ErrorCode::kSingularTriangular) {
      throw;
    }
  }
  DionState out;
  out.m_buf = b;
  out.q = state.q;
  out.x = scale(state.x, 1.0 - cfg.learning_rate * cfg.weight_decay);
  return out;
}

}  // namespace

DionState dion_step_centralized(const DionState& state, const DenseMatrix& grad,
                                const DionConfig& cfg, const StepContext& ctx,
                                CostLedger* ledger) {
  if (!state.x.same_shape(grad)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "dion_step_centralized: gradient shape mismatch");
  }
  const DenseMatrix b = add(state.m_buf, grad);
  const double update_scale =
      cfg.learning_rate * std::sqrt(static_cast<double>(state.x.rows) /
                                    static_cast<double>(state.x.cols));
  return dion_step_guarded(
      state, b, cfg, ctx, state.x.cols, [&](const DenseMatrix& q) {
        const PowerIterResult pr = power_iter1(b, q, ledger);
        DionState out;
        const DenseMatrix approx =
            matmul(pr.p, pr.r_mat, false, /*transpose_b=*/true, ledger);
        out.m_buf = add_scaled(b, -(1.0 - cfg.momentum_decay), approx);
        out.q = column_normalize(pr.r_mat, cfg.epsilon_col);
        const DenseMatrix update =
            matmul(pr.p, out.q, false, /*transpose_b=*/true, ledger);
        out.x = add_scaled(
            scale(state.x, 1.0 - cfg.learning_rate * cfg.weight_decay),
            -update_scale, update);
        return out;
      });
}

DionState dion_step_centralized_transposed(const DionState& state,
                                           const DenseMatrix& grad,
                                           const DionConfig& cfg,
                                           const StepContext& ctx,
                                           CostLedger* ledger) {
  if (!state.x.same_shape(grad)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "dion_step_centralized_transposed: gradient shape mismatch");
  }
  const DenseMatrix b = add(state.m_buf, grad);
  const double update_scale =
      cfg.learning_rate * std::sqrt(static_cast<double>(state.x.rows) /
                                    static_cast<double>(state.x.cols));
  return dion_step_guarded(
      state, b, cfg, ctx, state.x.rows, [&](const DenseMatrix& q) {
        // Power iteration on the transposed buffer: P spans the n-side.
        const DenseMatrix product =
            matmul(b, q, /*transpose_a=*/true, false, ledger);
        const DenseMatrix p = householder_qr(product, ledger).q;  // n x r
        const DenseMatrix r_mat = matmul(b, p, false, false, ledger);  // m x r
        DionState out;
        const DenseMatrix approx =
            matmul(r_mat, p, false, /*transpose_b=*/true, ledger);
        out.m_buf = add_scaled(b, -(1.0 - cfg.momentum_decay), approx);
        out.q = column_normalize(r_mat, cfg.epsilon_col);
        const DenseMatrix update =
            matmul(out.q, p, false, /*transpose_b=*/true, ledger);
        out.x = add_scaled(
            scale(state.x, 1.0 - cfg.learning_rate * cfg.weight_decay),
            -update_scale, update);
        return out;
      });
}

index_t dion_state_elements(const DionState& state) {
  return state.m_buf.size() + state.q.size();
}

MuonState muon_step(const MuonState& state, const DenseMatrix& grad,
                    const MuonConfig& cfg, CostLedger* ledger) {
  if (!state.x.same_shape(grad)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "muon_step: gradient shape mismatch");
  }
  MuonState out;
  out.m_buf = add_scaled(scale(state.m_buf, cfg.momentum_decay), 1.0, grad);
  if (is_zero(out.m_buf)) {
    out.x = scale(state.x, 1.0 - cfg.learning_rate * cfg.weight_decay);
    return out;
  }
  const DenseMatrix ortho =
      newton_schulz(out.m_buf, cfg.ns_iterations, cfg.ns_coefficients, ledger);
  const double update_scale =
      cfg.learning_rate * std::sqrt(static_cast<double>(state.x.rows) /
                                    static_cast<double>(state.x.cols));
  out.x = add_scaled(
      scale(state.x, 1.0 - cfg.learning_rate * cfg.weight_decay),
      -update_scale, ortho);
  return out;
}

ScalarOptimConfig adamw_defaults() {
  ScalarOptimConfig cfg;
  cfg.algorithm = ScalarAlgorithm::kAdamW;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.95;
  return cfg;
}

ScalarOptimConfig lion_defaults() {
  ScalarOptimConfig cfg;
  cfg.algorithm = ScalarAlgorithm::kLion;
  cfg.beta1 = 0.95;
  cfg.beta2 = 0.98;
  return cfg;
}

namespace {

double sign_of(double v) {
  if (v > 0.0) return 1.0;
  if (v < 0.0) return -1.0;
  return 0.0;
}

}  // namespace

LionState lion_step(const LionState& state, const DenseMatrix& grad,
                    const ScalarOptimConfig& cfg, const ParamSpec& spec) {
  if (!state.x.same_shape(grad)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "lion_step: gradient shape mismatch");
  }
  const double lr = cfg.use_scale_factor
                        ? cfg.base_learning_rate * lr_scale_factor(spec)
                        : cfg.base_learning_rate;
  LionState out;
  out.x = DenseMatrix(state.x.rows, state.x.cols);
  out.m_buf = DenseMatrix(state.x.rows, state.x.cols);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (index_t i = 0; i < state.x.size(); ++i) {
    const double blend =
        cfg.beta1 * state.m_buf.data[i] + (1.0 - cfg.beta1) * grad.data[i];
    out.x.data[i] = decay * state.x.data[i] - lr * sign_of(blend);
    out.m_buf.data[i] =
        cfg.beta2 * state.m_buf.data[i] + (1.0 - cfg.beta2) * grad.data[i];
  }
  return out;
}

AdamWState adamw_step(const AdamWState& state, const DenseMatrix& grad,
                      const ScalarOptimConfig& cfg, const ParamSpec& spec) {
  if (!state.x.same_shape(grad)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "adamw_step: gradient shape mismatch");
  }
  const double lr = cfg.use_scale_factor
                        ? cfg.base_learning_rate * lr_scale_factor(spec)
                        : cfg.base_learning_rate;
  AdamWState out;
  out.t = state.t + 1;
  out.x = DenseMatrix(state.x.rows, state.x.cols);
  out.m1 = DenseMatrix(state.x.rows, state.x.cols);
  out.m2 = DenseMatrix(state.x.rows, state.x.cols);
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(out.t));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(out.t));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (index_t i = 0; i < state.x.size(); ++i) {
    const double g = grad.data[i];
    const double m1 = cfg.beta1 * state.m1.data[i] + (1.0 - cfg.beta1) * g;
    const double m2 = cfg.beta2 * state.m2.data[i] + (1.0 - cfg.beta2) * g * g;
    out.m1.data[i] = m1;
    out.m2.data[i] = m2;
    const double m_hat = m1 / bias1;
    const double v_hat = m2 / bias2;
    out.x.data[i] = decay * state.x.data[i] -
                    lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
  }
  return out;
}

double schedule_multiplier(const Schedule& schedule, long long step,
                           long long total_steps) {
  if (total_steps <= 0) return 1.0;
  switch (schedule.kind) {
    case ScheduleKind::kConstant:
      return 1.0;
    case ScheduleKind::kCooldown: {
      const double window = schedule.fraction * static_cast<double>(total_steps);
      if (window <= 0.0) return 1.0;
      const double remaining = static_cast<double>(total_steps - step);
      return std::min(1.0, remaining / window);
    }
    case ScheduleKind::kWarmup: {
      const double window = schedule.fraction * static_cast<double>(total_steps);
      if (window <= 0.0) return 1.0;
      return std::min(1.0, static_cast<double>(step + 1) / window);
    }
  }
  return 1.0;
}

}  // namespace dion
