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
#include "dist.hpp"

#include <cmath>
#include <string>

#include "rng.hpp"

namespace dion {

index_t dion_sketch_size(index_t rank, double oversampling_factor) {
  if (oversampling_factor < 1.0) {
    throw Error(ErrorCode::kInvalidArgument,
                "dion_sketch_size: oversampling factor must be >= 1");
  }
  return static_cast<index_t>(
      std::ceil(oversampling_factor * static_cast<double>(rank)));
}

double SketchMatrix::entry(index_t row, index_t col) const {
  const RandomStream stream(key);
  const std::uint64_t counter =
      static_cast<std::uint64_t>(row) * static_cast<std::uint64_t>(m) +
      static_cast<std::uint64_t>(col);
  return stream.normal_at(counter) / std::sqrt(static_cast<double>(k));
}

DenseMatrix SketchMatrix::columns(index_t col0, index_t count) const {
  DenseMatrix out(k, count);
  for (index_t i = 0; i < k; ++i) {
    for (index_t j = 0; j < count; ++j) out(i, j) = entry(i, col0 + j);
  }
  return out;
}

SketchMatrix make_sketch(std::uint64_t seed, std::string_view tag,
                         std::uint64_t step, index_t k, index_t m) {
  SketchMatrix sketch;
  sketch.key = RandomStream::derive_key(seed, tag, step);
  sketch.k = k;
  sketch.m = m;
  return sketch;
}

namespace {

DenseMatrix cholesky_with_ridge(const DenseMatrix& h, index_t rank,
                                CostLedger* ledger) {
  try {
    return cholesky_upper(h, ledger);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNotPositiveDefinite) throw;
  }
  double trace = 0.0;
  for (index_t i = 0; i < h.rows; ++i) trace += h(i, i);
  const double ridge = 1e-12 * trace / static_cast<double>(rank);
  DenseMatrix regularized = h;
  for (index_t i = 0; i < h.rows; ++i) regularized(i, i) += ridge;
  return cholesky_upper(regularized, ledger);
}

}  // namespace

DenseMatrix randomized_cholesky_qr(const DenseMatrix& p,
                                   const SketchMatrix& sketch,
                                   CostLedger* ledger) {
  if (sketch.m != p.rows) {
    throw Error(ErrorCode::kDimensionMismatch,
                "randomized_cholesky_qr: sketch has " +
                    std::to_string(sketch.m) + " columns but p has " +
                    std::to_string(p.rows) + " rows");
  }
  if (sketch.k < p.cols) {
    throw Error(ErrorCode::kInvalidArgument,
                "randomized_cholesky_qr: sketch size " +
                    std::to_string(sketch.k) + " below rank " +
                    std::to_string(p.cols));
  }
  CostLedger::FactorizationScope scope(ledger);
  const DenseMatrix g = matmul(sketch.full(), p, false, false, ledger);
  const DenseMatrix r1 = householder_qr(g, ledger).r;
  const DenseMatrix b = solve_upper_triangular_right(p, r1, ledger);
  const DenseMatrix h = matmul(b, b, /*transpose_a=*/true, false, ledger);
  const DenseMatrix r2 = cholesky_with_ridge(h, p.cols, ledger);
  return solve_upper_triangular_right(b, r2, ledger);
}

ShardedMatrix distributed_orthogonalize(const ShardedMatrix& p,
                                        const SketchMatrix& sketch,
                                        CostLedger* ledger) {
  const ShardSpec& spec = p.spec();
  if (!spec.row_axis) {
    throw Error(ErrorCode::kInvalidArgument,
                "distributed_orthogonalize: input rows are not sharded");
  }
  if (spec.col_axis) {
    throw Error(ErrorCode::kInvalidArgument,
                "distributed_orthogonalize: input columns must be unsharded");
  }
  if (sketch.m != spec.full_rows) {
    throw Error(ErrorCode::kDimensionMismatch,
                "distributed_orthogonalize: sketch/input size mismatch");
  }
  const MeshAxis axis = *spec.row_axis;
  const DeviceMesh& mesh = p.mesh();
  const index_t rank = spec.full_cols;
  const index_t shard_rows = spec.shard_rows(mesh);

  CostLedger::FactorizationScope scope(ledger);

  // First pass: sketched QR. Each device sketches its own row block.
  const ShardSpec kr_spec{sketch.k, rank, std::nullopt, std::nullopt};
  ShardedMatrix g_local(kr_spec, mesh);
  for (const MeshCoord& c : p.coords()) {
    const DenseMatrix slice =
        sketch.columns(c.get(axis) * shard_rows, shard_rows);
    g_local.shard(c) = matmul(slice, p.shard(c), false, false, ledger);
  }
  const ShardedMatrix g = all_reduce(g_local, axis, ReduceMode::kSum, ledger);

  ShardedMatrix b(spec, mesh);
  ShardedMatrix h_local(ShardSpec{rank, rank, std::nullopt, std::nullopt},
                        mesh);
  for (const MeshCoord& c : p.coords()) {
    const DenseMatrix r1 = householder_qr(g.shard(c), ledger).r;
    b.shard(c) = solve_upper_triangular_right(p.shard(c), r1, ledger);
    h_local.shard(c) =
        matmul(b.shard(c), b.shard(c), /*transpose_a=*/true, false, ledger);
  }

  // Second pass: Cholesky QR on the summed Gram matrix.
  const ShardedMatrix h = all_reduce(h_local, axis, ReduceMode::kSum, ledger);
  ShardedMatrix out(spec, mesh);
  for (const MeshCoord& c : p.coords()) {
    const DenseMatrix r2 = cholesky_with_ridge(h.shard(c), rank, ledger);
    out.shard(c) = solve_upper_triangular_right(b.shard(c), r2, ledger);
  }
  return out;
}

namespace {

constexpr std::string_view kDionSketchTag = "dion-sketch";
constexpr std::string_view kDoubleSketchTag1 = "double-dion-sketch-1";
constexpr std::string_view kDoubleSketchTag2 = "double-dion-sketch-2";

ShardSpec x_spec_for(DionPlacement placement, index_t m, index_t n) {
  if (placement == DionPlacement::kStandard) {
    return ShardSpec{m, n, MeshAxis::kTp, MeshAxis::kFs};
  }
  return ShardSpec{m, n, MeshAxis::kFs, MeshAxis::kTp};
}

ShardSpec q_spec_for(DionPlacement placement, index_t m, index_t n,
                     index_t rank) {
  // The basis lives on the power-iteration side: n for standard, m for
  // transposed. Rows over FS, columns over TP in both.
  const index_t basis_rows = placement == DionPlacement::kStandard ? n : m;
  return ShardSpec{basis_rows, rank, MeshAxis::kFs, MeshAxis::kTp};
}

ShardedMatrix add_sharded(const ShardedMatrix& a, const ShardedMatrix& b) {
  return map_shards(a, a.spec(), [&](const MeshCoord& c, const DenseMatrix& s) {
    return add(s, b.shard(c));
  });
}

void check_dp_consistency(const ShardedMatrix& x) {
  if (dp_replicas_byte_identical(x)) return;
  const DeviceMesh& mesh = x.mesh();
  double worst = 0.0;
  for (int f = 0; f < mesh.fs; ++f) {
    for (int t = 0; t < mesh.tp; ++t) {
      const DenseMatrix& head = x.shard(MeshCoord{0, f, t});
      for (int d = 1; d < mesh.dp; ++d) {
        worst = std::max(worst,
                         max_abs_diff(head, x.shard(MeshCoord{d, f, t})));
      }
    }
  }
  if (worst > 1e-12) {
    throw Error(ErrorCode::kDeterminism,
                "weight replicas diverged across DP by " +
                    std::to_string(worst));
  }
}

struct DionStepOutput {
  ShardedMatrix x;
  ShardedMatrix m_local;
  ShardedMatrix q;
};

// Shared body for the standard and transposed 3D-parallel steps. The two
// variants differ only in which side of B feeds the power iteration and in
// the orientation of the outer products.
DionStepOutput dion_step_mesh(const DistDionState& state,
                              const ShardedMatrix& grads,
                              const DionConfig& cfg, const StepContext& ctx,
                              CostLedger* ledger) {
  const DeviceMesh& mesh = state.x.mesh();
  const ShardSpec& xs = state.x.spec();
  const index_t m = xs.full_rows;
  const index_t n = xs.full_cols;
  const bool transposed = state.placement == DionPlacement::kTransposed;
  const index_t basis_rows = transposed ? m : n;   // rows of Q
  const index_t ortho_rows = transposed ? n : m;   // rows of P
  const double update_scale =
      cfg.learning_rate *
      std::sqrt(static_cast<double>(m) / static_cast<double>(n));

  if (grads.spec() != xs) {
    throw Error(ErrorCode::kDimensionMismatch,
                "dion_step_distributed: gradient sharding disagrees with "
                "weights");
  }

  // Unshard Q along TP; the basis stays sharded over FS only.
  const ShardedMatrix q_gathered =
      all_gather(state.q, MeshAxis::kTp, ConcatDim::kCols, ledger);
  const ShardedMatrix b = add_sharded(state.m_local, grads);

  const SketchMatrix sketch =
      make_sketch(ctx.seed, kDionSketchTag, ctx.step,
                  dion_sketch_size(cfg.rank, cfg.oversampling_factor),
                  ortho_rows);

  const ShardSpec p_spec{ortho_rows, cfg.rank, MeshAxis::kTp, std::nullopt};
  const ShardSpec r_spec{basis_rows, cfg.rank, MeshAxis::kFs, std::nullopt};

  auto attempt = [&](const ShardedMatrix& q_full) -> DionStepOutput {
    // Local power-iteration product, then FS-sum and DP-mean.
    const ShardedMatrix p_hat =
        map_shards(b, p_spec, [&](const MeshCoord& c, const DenseMatrix& bs) {
          return transposed
                     ? matmul(bs, q_full.shard(c), /*transpose_a=*/true, false,
                              ledger)
                     : matmul(bs, q_full.shard(c), false, false, ledger);
        });
    const ShardedMatrix p_summed =
        all_reduce(p_hat, MeshAxis::kFs, ReduceMode::kSum, ledger);
    const ShardedMatrix p_synced =
        all_reduce(p_summed, MeshAxis::kDp, ReduceMode::kMean, ledger);

    const ShardedMatrix p = distributed_orthogonalize(p_synced, sketch, ledger);

    const ShardedMatrix r_hat =
        map_shards(b, r_spec, [&](const MeshCoord& c, const DenseMatrix& bs) {
          return transposed
                     ? matmul(bs, p.shard(c), false, false, ledger)
                     : matmul(bs, p.shard(c), /*transpose_a=*/true, false,
                              ledger);
        });
    const ShardedMatrix r_summed =
        all_reduce(r_hat, MeshAxis::kTp, ReduceMode::kSum, ledger);
    const ShardedMatrix r_full =
        all_reduce(r_summed, MeshAxis::kDp, ReduceMode::kMean, ledger);

    DionStepOutput out;
    // Error feedback on the local buffer.
    out.m_local =
        map_shards(b, xs, [&](const MeshCoord& c, const DenseMatrix& bs) {
          const DenseMatrix approx =
              transposed ? matmul(r_full.shard(c), p.shard(c), false,
                                  /*transpose_b=*/true, ledger)
                         : matmul(p.shard(c), r_full.shard(c), false,
                                  /*transpose_b=*/true, ledger);
          return add_scaled(bs, -(1.0 - cfg.momentum_decay), approx);
        });

    // Distributed column normalization: FS all-reduce of squared norms.
    const ShardSpec norms_spec{1, cfg.rank, std::nullopt, std::nullopt};
    const ShardedMatrix norms_local = map_shards(
        r_full, norms_spec, [&](const MeshCoord&, const DenseMatrix& rs) {
          DenseMatrix row(1, rs.cols);
          const std::vector<double> norms = column_norms_squared(rs);
          for (index_t j = 0; j < rs.cols; ++j) row(0, j) = norms[j];
          return row;
        });
    const ShardedMatrix norms =
        all_reduce(norms_local, MeshAxis::kFs, ReduceMode::kSum, ledger);
    const ShardedMatrix q_normalized = map_shards(
        r_full, r_spec, [&](const MeshCoord& c, const DenseMatrix& rs) {
          DenseMatrix qn = rs;
          const DenseMatrix& totals = norms.shard(c);
          for (index_t j = 0; j < qn.cols; ++j) {
            const double denom =
                std::max(std::sqrt(totals(0, j)), cfg.epsilon_col);
            for (index_t i = 0; i < qn.rows; ++i) qn(i, j) /= denom;
          }
          return qn;
        });

    // Scaled orthonormal update.
    out.x = map_shards(
        state.x, xs, [&](const MeshCoord& c, const DenseMatrix& xsh) {
          const DenseMatrix update =
              transposed ? matmul(q_normalized.shard(c), p.shard(c), false,
                                  /*transpose_b=*/true, ledger)
                         : matmul(p.shard(c), q_normalized.shard(c), false,
                                  /*transpose_b=*/true, ledger);
          return add_scaled(
              scale(xsh, 1.0 - cfg.learning_rate * cfg.weight_decay),
              -update_scale, update);
        });

    // Reshard Q along TP: local slicing, no communication.
    out.q = shard_cols_locally(q_normalized, MeshAxis::kTp);
    return out;
  };

  auto is_degenerate = [](const Error& e) {
    return e.code() == ErrorCode::kRankDeficient ||
           e.code() == ErrorCode::kNotPositiveDefinite ||
           e.code() == ErrorCode::kSingularTriangular;
  };

  try {
    DionStepOutput out = attempt(q_gathered);
    check_dp_consistency(out.x);
    return out;
  } catch (const Error& e) {
    if (!is_degenerate(e)) throw;
  }

  const DenseMatrix retry_q = dion_rerandomized_q(
      basis_rows, cfg.rank, ctx.seed, ctx.step, cfg.epsilon_col);
  const ShardedMatrix retry_sharded =
      shard(retry_q, ShardSpec{basis_rows, cfg.rank, MeshAxis::kFs,
                               std::nullopt},
            mesh);
  try {
    DionStepOutput out = attempt(retry_sharded);
    check_dp_consistency(out.x);
    return out;
  } catch (const Error& e) {
    if (!is_degenerate(e)) throw;
  }

  // Skip the matrix update: keep the accumulated buffer and old basis.
  DionStepOutput out;
  out.m_local = b;
  out.q = state.q;
  out.x = map_shards(state.x, xs, [&](const MeshCoord&, const DenseMatrix& s) {
    return scale(s, 1.0 - cfg.learning_rate * cfg.weight_decay);
  });
  return out;
}

}  // namespace

DistDionState dist_dion_init(const DenseMatrix& x0, const DionConfig& cfg,
                             std::uint64_t seed, const DeviceMesh& mesh,
                             DionPlacement placement) {
  const index_t m = x0.rows;
  const index_t n = x0.cols;
  if (cfg.rank < 1 || cfg.rank > std::min(m, n)) {
    throw Error(ErrorCode::kInvalidArgument,
                "dist_dion_init: rank out of range");
  }
  if (cfg.rank % mesh.tp != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "dist_dion_init: rank " + std::to_string(cfg.rank) +
                    " not divisible by tp " + std::to_string(mesh.tp));
  }
  const ShardSpec xs = x_spec_for(placement, m, n);
  const ShardSpec qs = q_spec_for(placement, m, n, cfg.rank);
  xs.validate(mesh);
  qs.validate(mesh);

  DistDionState state;
  state.placement = placement;
  state.x = shard(x0, xs, mesh);
  state.m_local = ShardedMatrix(xs, mesh);
  // Same seeded basis as the centralized optimizer, sharded.
  state.q = shard(dion_initial_q(qs.full_rows, cfg.rank, seed,
                                 cfg.epsilon_col),
                  qs, mesh);
  return state;
}

DistDionState dion_step_distributed(const DistDionState& state,
                                    const ShardedMatrix& grads,
                                    const DionConfig& cfg,
                                    const StepContext& ctx,
                                    CostLedger* ledger) {
  if (state.placement != DionPlacement::kStandard) {
    throw Error(ErrorCode::kInvalidArgument,
                "dion_step_distributed: state uses transposed placement");
  }
  DionStepOutput out = dion_step_mesh(state, grads, cfg, ctx, ledger);
  DistDionState next;
  next.placement = state.placement;
  next.x = std::move(out.x);
  next.m_local = std::move(out.m_local);
  next.q = std::move(out.q);
  return next;
}

DistDionState dion_step_transposed(const DistDionState& state,
                                   const ShardedMatrix& grads,
                                   const DionConfig& cfg,
                                   const StepContext& ctx,
                                   CostLedger* ledger) {
  if (state.placement != DionPlacement::kTransposed) {
    throw Error(ErrorCode::kInvalidArgument,
                "dion_step_transposed: state uses standard placement");
  }
  DionStepOutput out = dion_step_mesh(state, grads, cfg, ctx, ledger);
  DistDionState next;
  next.placement = state.placement;
  next.x = std::move(out.x);
  next.m_local = std::move(out.m_local);
  next.q = std::move(out.q);
  return next;
}

// ---------------------------------------------------------------------------
// Double Dion.
// ---------------------------------------------------------------------------

namespace {

struct StageResult {
  ShardedMatrix p;       // orthonormalized factor, rows over TP
  ShardedMatrix r_full;  // right factor, rows over FS
  ShardedMatrix q;       // normalized basis, resharded over TP
  ShardedMatrix q_full;  // normalized basis before resharding (rows over FS)
  ShardedMatrix m_next;  // updated momentum
  bool skipped = false;
};

// One rank-r power-iteration stage of Algorithm-style double Dion. The
// error-feedback rule is supplied by the caller; stage 1 syncs over DP,
// stage 2 must not (its inputs are DP-identical by construction).
StageResult double_dion_stage(
    const ShardedMatrix& buffer, const ShardedMatrix& q_prev, index_t rank,
    double oversampling, double epsilon, bool dp_sync,
    std::string_view sketch_tag, const StepContext& ctx, CostLedger* ledger,
    const std::function<DenseMatrix(const MeshCoord&, const DenseMatrix&,
                                    const DenseMatrix&)>& feedback) {
  const DeviceMesh& mesh = buffer.mesh();
  const ShardSpec& xs = buffer.spec();
  const index_t m = xs.full_rows;
  const index_t n = xs.full_cols;
  const ShardSpec p_spec{m, rank, MeshAxis::kTp, std::nullopt};
  const ShardSpec r_spec{n, rank, MeshAxis::kFs, std::nullopt};

  const ShardedMatrix q_gathered =
      all_gather(q_prev, MeshAxis::kTp, ConcatDim::kCols, ledger);
  const SketchMatrix sketch =
      make_sketch(ctx.seed, sketch_tag, ctx.step,
                  dion_sketch_size(rank, oversampling), m);

  auto attempt = [&](const ShardedMatrix& q_full) -> StageResult {
    const ShardedMatrix p_hat =
        map_shards(buffer, p_spec,
                   [&](const MeshCoord& c, const DenseMatrix& bs) {
                     return matmul(bs, q_full.shard(c), false, false, ledger);
                   });
    ShardedMatrix p_summed =
        all_reduce(p_hat, MeshAxis::kFs, ReduceMode::kSum, ledger);
    if (dp_sync) {
      p_summed = all_reduce(p_summed, MeshAxis::kDp, ReduceMode::kMean, ledger);
    }
    const ShardedMatrix p = distributed_orthogonalize(p_summed, sketch, ledger);

    const ShardedMatrix r_hat =
        map_shards(buffer, r_spec,
                   [&](const MeshCoord& c, const DenseMatrix& bs) {
                     return matmul(bs, p.shard(c), /*transpose_a=*/true, false,
                                   ledger);
                   });
    ShardedMatrix r_full =
        all_reduce(r_hat, MeshAxis::kTp, ReduceMode::kSum, ledger);
    if (dp_sync) {
      r_full = all_reduce(r_full, MeshAxis::kDp, ReduceMode::kMean, ledger);
    }

    StageResult result;
    result.m_next =
        map_shards(buffer, xs, [&](const MeshCoord& c, const DenseMatrix& bs) {
          const DenseMatrix approx = matmul(p.shard(c), r_full.shard(c), false,
                                            /*transpose_b=*/true, ledger);
          return feedback(c, bs, approx);
        });

    const ShardSpec norms_spec{1, rank, std::nullopt, std::nullopt};
    const ShardedMatrix norms_local = map_shards(
        r_full, norms_spec, [&](const MeshCoord&, const DenseMatrix& rs) {
          DenseMatrix row(1, rs.cols);
          const std::vector<double> norms = column_norms_squared(rs);
          for (index_t j = 0; j < rs.cols; ++j) row(0, j) = norms[j];
          return row;
        });
    const ShardedMatrix norms =
        all_reduce(norms_local, MeshAxis::kFs, ReduceMode::kSum, ledger);
    const ShardedMatrix q_normalized = map_shards(
        r_full, r_spec, [&](const MeshCoord& c, const DenseMatrix& rs) {
          DenseMatrix qn = rs;
          const DenseMatrix& totals = norms.shard(c);
          for (index_t j = 0; j < qn.cols; ++j) {
            const double denom = std::max(std::sqrt(totals(0, j)), epsilon);
            for (index_t i = 0; i < qn.rows; ++i) qn(i, j) /= denom;
          }
          return qn;
        });

    result.p = p;
    result.r_full = r_full;
    result.q_full = q_normalized;
    result.q = shard_cols_locally(q_normalized, MeshAxis::kTp);
    return result;
  };

  auto is_degenerate = [](const Error& e) {
    return e.code() == ErrorCode::kRankDeficient ||
           e.code() == ErrorCode::kNotPositiveDefinite ||
           e.code() == ErrorCode::kSingularTriangular;
  };

  try {
    return attempt(q_gathered);
  } catch (const Error& e) {
    if (!is_degenerate(e)) throw;
  }
  const DenseMatrix retry_q =
      dion_rerandomized_q(n, rank, ctx.seed, ctx.step, epsilon);
  const ShardedMatrix retry_sharded =
      shard(retry_q, ShardSpec{n, rank, MeshAxis::kFs, std::nullopt}, mesh);
  try {
    return attempt(retry_sharded);
  } catch (const Error& e) {
    if (!is_degenerate(e)) throw;
  }

  // Skip: zero factors, feedback applied with a zero approximation.
  StageResult result;
  result.skipped = true;
  result.p = ShardedMatrix(p_spec, mesh);
  result.r_full = ShardedMatrix(r_spec, mesh);
  result.q = q_prev;
  const DenseMatrix zero_approx(xs.shard_rows(mesh), xs.shard_cols(mesh));
  result.m_next =
      map_shards(buffer, xs, [&](const MeshCoord& c, const DenseMatrix& bs) {
        return feedback(c, bs, zero_approx);
      });
  return result;
}

}  // namespace

DoubleDionState double_dion_init(const DenseMatrix& x0,
                                 const DoubleDionConfig& cfg,
                                 std::uint64_t seed, const DeviceMesh& mesh) {
  const index_t m = x0.rows;
  const index_t n = x0.cols;
  if (cfg.r1 > cfg.r2 || cfg.r2 > std::min(m, n) || cfg.r1 < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "double_dion_init: need 1 <= r1 <= r2 <= min(m, n)");
  }
  if (cfg.r1 % mesh.tp != 0 || cfg.r2 % mesh.tp != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "double_dion_init: ranks must be divisible by tp");
  }
  const ShardSpec xs{m, n, MeshAxis::kTp, MeshAxis::kFs};
  xs.validate(mesh);

  DoubleDionState state;
  state.x = shard(x0, xs, mesh);
  state.m1_local = ShardedMatrix(xs, mesh);
  state.m2 = ShardedMatrix(xs, mesh);
  const ShardSpec q1s{n, cfg.r1, MeshAxis::kFs, MeshAxis::kTp};
  const ShardSpec q2s{n, cfg.r2, MeshAxis::kFs, MeshAxis::kTp};
  state.q1 = shard(
      column_normalize(RandomStream::derive(seed, "double-dion-q1")
                           .normal_matrix(n, cfg.r1),
                       cfg.epsilon_col),
      q1s, mesh);
  state.q2 = shard(
      column_normalize(RandomStream::derive(seed, "double-dion-q2")
                           .normal_matrix(n, cfg.r2),
                       cfg.epsilon_col),
      q2s, mesh);
  return state;
}

DoubleDionState double_dion_step(const DoubleDionState& state,
                                 const ShardedMatrix& grads,
                                 const DoubleDionConfig& cfg,
                                 const StepContext& ctx, CostLedger* ledger) {
  const ShardSpec& xs = state.x.spec();
  const DeviceMesh& mesh = state.x.mesh();
  if (grads.spec() != xs) {
    throw Error(ErrorCode::kDimensionMismatch,
                "double_dion_step: gradient sharding disagrees with weights");
  }

  // Stage 1: DP-local momentum, DeMo-style error feedback (both terms
  // scaled by mu1), DP-synchronized factors.
  const ShardedMatrix b1 = add_sharded(state.m1_local, grads);
  const StageResult stage1 = double_dion_stage(
      b1, state.q1, cfg.r1, cfg.oversampling_factor, cfg.epsilon_col,
      /*dp_sync=*/true, kDoubleSketchTag1, ctx, ledger,
      [&](const MeshCoord&, const DenseMatrix& bs, const DenseMatrix& approx) {
        return scale(subtract(bs, approx), cfg.mu1);
      });

  // Stage 2 input: current or one-step-delayed (P1, R1).
  const ShardSpec p1_spec{xs.full_rows, cfg.r1, MeshAxis::kTp, std::nullopt};
  const ShardSpec r1_spec{xs.full_cols, cfg.r1, MeshAxis::kFs, std::nullopt};
  ShardedMatrix p1_use = stage1.p;
  ShardedMatrix r1_use = stage1.r_full;
  if (cfg.delayed) {
    if (state.has_prev) {
      p1_use = state.prev_p1;
      r1_use = state.prev_r1;
    } else {
      p1_use = ShardedMatrix(p1_spec, mesh);
      r1_use = ShardedMatrix(r1_spec, mesh);
    }
  }

  const ShardedMatrix b2 =
      map_shards(state.m2, xs, [&](const MeshCoord& c, const DenseMatrix& ms) {
        const DenseMatrix lowrank = matmul(p1_use.shard(c), r1_use.shard(c),
                                           false, /*transpose_b=*/true, ledger);
        return add(ms, lowrank);
      });

  // Stage 2: fully DP-synchronous, standard error feedback with mu2.
  const StageResult stage2 = double_dion_stage(
      b2, state.q2, cfg.r2, cfg.oversampling_factor, cfg.epsilon_col,
      /*dp_sync=*/false, kDoubleSketchTag2, ctx, ledger,
      [&](const MeshCoord&, const DenseMatrix& bs, const DenseMatrix& approx) {
        return add_scaled(bs, -(1.0 - cfg.mu2), approx);
      });

  DoubleDionState next;
  next.m1_local = stage1.m_next;
  next.q1 = stage1.q;
  next.m2 = stage2.m_next;
  next.q2 = stage2.q;
  next.prev_p1 = stage1.p;
  next.prev_r1 = stage1.r_full;
  next.has_prev = true;

  if (stage2.skipped) {
    next.x = map_shards(state.x, xs,
                        [&](const MeshCoord&, const DenseMatrix& s) {
                          return scale(s, 1.0 - cfg.learning_rate *
                                                    cfg.weight_decay);
                        });
  } else {
    // Weight update: eta * P2 Q2^T (no shape factor here).
    next.x = map_shards(
        state.x, xs, [&](const MeshCoord& c, const DenseMatrix& xsh) {
          const DenseMatrix update =
              matmul(stage2.p.shard(c), stage2.q_full.shard(c), false,
                     /*transpose_b=*/true, ledger);
          return add_scaled(
              scale(xsh, 1.0 - cfg.learning_rate * cfg.weight_decay),
              -cfg.learning_rate, update);
        });
  }
  check_dp_consistency(next.x);
  check_dp_consistency(next.m2);
  return next;
}

// ---------------------------------------------------------------------------
// Sharded baselines.
// ---------------------------------------------------------------------------

DistMuonState dist_muon_init(const DenseMatrix& x0, const DeviceMesh& mesh) {
  const ShardSpec xs{x0.rows, x0.cols, MeshAxis::kTp, MeshAxis::kFs};
  xs.validate(mesh);
  DistMuonState state;
  state.x = shard(x0, xs, mesh);
  state.m_buf = ShardedMatrix(xs, mesh);
  return state;
}

DistMuonState muon_step_distributed(const DistMuonState& state,
                                    const ShardedMatrix& grads,
                                    const MuonConfig& cfg,
                                    CostLedger* ledger) {
  const ShardSpec& xs = state.x.spec();
  const DeviceMesh& mesh = state.x.mesh();
  const ShardedMatrix g_mean =
      all_reduce(grads, MeshAxis::kDp, ReduceMode::kMean, ledger);
  const ShardedMatrix m_next =
      map_shards(state.m_buf, xs,
                 [&](const MeshCoord& c, const DenseMatrix& ms) {
                   return add_scaled(scale(ms, cfg.momentum_decay), 1.0,
                                     g_mean.shard(c));
                 });

  // Newton-Schulz needs the full matrix: unshard along FS then TP, then run
  // the iteration redundantly on every device.
  const ShardedMatrix cols_gathered =
      all_gather(m_next, MeshAxis::kFs, ConcatDim::kCols, ledger);
  const ShardedMatrix full =
      all_gather(cols_gathered, MeshAxis::kTp, ConcatDim::kRows, ledger);

  const double update_scale =
      cfg.learning_rate * std::sqrt(static_cast<double>(xs.full_rows) /
                                    static_cast<double>(xs.full_cols));
  DistMuonState next;
  next.m_buf = m_next;
  next.x = map_shards(
      state.x, xs, [&](const MeshCoord& c, const DenseMatrix& xsh) {
        if (is_zero(full.shard(c))) {
          return scale(xsh, 1.0 - cfg.learning_rate * cfg.weight_decay);
        }
        const DenseMatrix ortho = newton_schulz(
            full.shard(c), cfg.ns_iterations, cfg.ns_coefficients, ledger);
        const DenseMatrix block = local_block(ortho, xs, mesh, c);
        return add_scaled(
            scale(xsh, 1.0 - cfg.learning_rate * cfg.weight_decay),
            -update_scale, block);
      });
  return next;
}

DistAdamState dist_adam_init(const DenseMatrix& x0, const DeviceMesh& mesh) {
  const ShardSpec xs{x0.rows, x0.cols, MeshAxis::kTp, MeshAxis::kFs};
  xs.validate(mesh);
  DistAdamState state;
  state.x = shard(x0, xs, mesh);
  state.m1 = ShardedMatrix(xs, mesh);
  state.m2 = ShardedMatrix(xs, mesh);
  return state;
}

DistAdamState adamw_step_distributed(const DistAdamState& state,
                                     const ShardedMatrix& grads,
                                     const ScalarOptimConfig& cfg,
                                     const ParamSpec& spec,
                                     CostLedger* ledger) {
  const ShardSpec& xs = state.x.spec();
  const ShardedMatrix g_mean =
      all_reduce(grads, MeshAxis::kDp, ReduceMode::kMean, ledger);
  DistAdamState next;
  next.t = state.t + 1;
  next.x = ShardedMatrix(xs, state.x.mesh());
  next.m1 = ShardedMatrix(xs, state.x.mesh());
  next.m2 = ShardedMatrix(xs, state.x.mesh());
  for (const MeshCoord& c : state.x.coords()) {
    AdamWState local;
    local.x = state.x.shard(c);
    local.m1 = state.m1.shard(c);
    local.m2 = state.m2.shard(c);
    local.t = state.t;
    const AdamWState updated = adamw_step(local, g_mean.shard(c), cfg, spec);
    next.x.shard(c) = updated.x;
    next.m1.shard(c) = updated.m1;
    next.m2.shard(c) = updated.m2;
  }
  return next;
}

}  // namespace dion
