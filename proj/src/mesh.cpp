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
#include "mesh.hpp"

#include <string>

namespace dion {

namespace {

const char* axis_name(MeshAxis axis) {
  switch (axis) {
    case MeshAxis::kDp:
      return "dp";
    case MeshAxis::kFs:
      return "fs";
    case MeshAxis::kTp:
      return "tp";
  }
  return "?";
}

std::string coord_string(const MeshCoord& c) {
  return "(" + std::to_string(c.dp) + "," + std::to_string(c.fs) + "," +
         std::to_string(c.tp) + ")";
}

}  // namespace

DeviceMesh::DeviceMesh(int dp_size, int fs_size, int tp_size)
    : dp(dp_size), fs(fs_size), tp(tp_size) {
  if (dp < 1 || fs < 1 || tp < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "DeviceMesh: axis sizes must be >= 1, got " +
                    std::to_string(dp) + "x" + std::to_string(fs) + "x" +
                    std::to_string(tp));
  }
}

int DeviceMesh::size(MeshAxis axis) const {
  switch (axis) {
    case MeshAxis::kDp:
      return dp;
    case MeshAxis::kFs:
      return fs;
    case MeshAxis::kTp:
      return tp;
  }
  return 1;
}

int MeshCoord::get(MeshAxis axis) const {
  switch (axis) {
    case MeshAxis::kDp:
      return dp;
    case MeshAxis::kFs:
      return fs;
    case MeshAxis::kTp:
      return tp;
  }
  return 0;
}

void MeshCoord::set(MeshAxis axis, int value) {
  switch (axis) {
    case MeshAxis::kDp:
      dp = value;
      break;
    case MeshAxis::kFs:
      fs = value;
      break;
    case MeshAxis::kTp:
      tp = value;
      break;
  }
}

index_t ShardSpec::shard_rows(const DeviceMesh& mesh) const {
  return row_axis ? full_rows / mesh.size(*row_axis) : full_rows;
}

index_t ShardSpec::shard_cols(const DeviceMesh& mesh) const {
  return col_axis ? full_cols / mesh.size(*col_axis) : full_cols;
}

void ShardSpec::validate(const DeviceMesh& mesh) const {
  if (row_axis && col_axis && *row_axis == *col_axis) {
    throw Error(ErrorCode::kInvalidArgument,
                "ShardSpec: row_axis and col_axis must differ");
  }
  if (row_axis && full_rows % mesh.size(*row_axis) != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "ShardSpec: rows " + std::to_string(full_rows) +
                    " not divisible by " + axis_name(*row_axis) + " size " +
                    std::to_string(mesh.size(*row_axis)));
  }
  if (col_axis && full_cols % mesh.size(*col_axis) != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "ShardSpec: cols " + std::to_string(full_cols) +
                    " not divisible by " + axis_name(*col_axis) + " size " +
                    std::to_string(mesh.size(*col_axis)));
  }
}

ShardedMatrix::ShardedMatrix(ShardSpec spec, DeviceMesh mesh)
    : spec_(spec), mesh_(mesh) {
  spec_.validate(mesh_);
  const index_t r = spec_.shard_rows(mesh_);
  const index_t c = spec_.shard_cols(mesh_);
  shards_.assign(mesh_.device_count(), DenseMatrix(r, c));
}

int ShardedMatrix::flat_index(const MeshCoord& c) const {
  return (c.dp * mesh_.fs + c.fs) * mesh_.tp + c.tp;
}

std::vector<MeshCoord> ShardedMatrix::coords() const {
  std::vector<MeshCoord> out;
  out.reserve(mesh_.device_count());
  for (int d = 0; d < mesh_.dp; ++d) {
    for (int f = 0; f < mesh_.fs; ++f) {
      for (int t = 0; t < mesh_.tp; ++t) {
        out.push_back(MeshCoord{d, f, t});
      }
    }
  }
  return out;
}

namespace {

// Row/col offset of a device's block in the full matrix.
index_t row_offset(const ShardSpec& spec, const DeviceMesh& mesh,
                   const MeshCoord& c) {
  return spec.row_axis ? c.get(*spec.row_axis) * spec.shard_rows(mesh) : 0;
}

index_t col_offset(const ShardSpec& spec, const DeviceMesh& mesh,
                   const MeshCoord& c) {
  return spec.col_axis ? c.get(*spec.col_axis) * spec.shard_cols(mesh) : 0;
}

DenseMatrix extract_block(const DenseMatrix& full, index_t r0, index_t c0,
                          index_t rows, index_t cols) {
  DenseMatrix block(rows, cols);
  for (index_t i = 0; i < rows; ++i) {
    for (index_t j = 0; j < cols; ++j) block(i, j) = full(r0 + i, c0 + j);
  }
  return block;
}

}  // namespace

ShardedMatrix shard(const DenseMatrix& full, const ShardSpec& spec,
                    const DeviceMesh& mesh) {
  if (full.rows != spec.full_rows || full.cols != spec.full_cols) {
    throw Error(ErrorCode::kDimensionMismatch,
                "shard: matrix is " + std::to_string(full.rows) + "x" +
                    std::to_string(full.cols) + " but spec says " +
                    std::to_string(spec.full_rows) + "x" +
                    std::to_string(spec.full_cols));
  }
  ShardedMatrix out(spec, mesh);
  const index_t rows = spec.shard_rows(mesh);
  const index_t cols = spec.shard_cols(mesh);
  for (const MeshCoord& c : out.coords()) {
    out.shard(c) = extract_block(full, row_offset(spec, mesh, c),
                                 col_offset(spec, mesh, c), rows, cols);
  }
  return out;
}

ShardedMatrix shard_dp_variants(const std::vector<DenseMatrix>& full_per_dp,
                                const ShardSpec& spec,
                                const DeviceMesh& mesh) {
  if (static_cast<int>(full_per_dp.size()) != mesh.dp) {
    throw Error(ErrorCode::kInvalidArgument,
                "shard_dp_variants: need one full matrix per DP replica");
  }
  ShardedMatrix out(spec, mesh);
  const index_t rows = spec.shard_rows(mesh);
  const index_t cols = spec.shard_cols(mesh);
  for (const MeshCoord& c : out.coords()) {
    out.shard(c) =
        extract_block(full_per_dp[c.dp], row_offset(spec, mesh, c),
                      col_offset(spec, mesh, c), rows, cols);
  }
  return out;
}

DenseMatrix assemble_replica(const ShardedMatrix& sm, int dp_idx) {
  const ShardSpec& spec = sm.spec();
  const DeviceMesh& mesh = sm.mesh();
  DenseMatrix full(spec.full_rows, spec.full_cols);
  const index_t rows = spec.shard_rows(mesh);
  const index_t cols = spec.shard_cols(mesh);
  for (int f = 0; f < mesh.fs; ++f) {
    for (int t = 0; t < mesh.tp; ++t) {
      const MeshCoord c{dp_idx, f, t};
      const DenseMatrix& block = sm.shard(c);
      const index_t r0 = row_offset(spec, mesh, c);
      const index_t c0 = col_offset(spec, mesh, c);
      for (index_t i = 0; i < rows; ++i) {
        for (index_t j = 0; j < cols; ++j) full(r0 + i, c0 + j) = block(i, j);
      }
    }
  }
  return full;
}

DenseMatrix assemble(const ShardedMatrix& sm) { return assemble_replica(sm, 0); }

bool dp_replicas_byte_identical(const ShardedMatrix& sm) {
  const DeviceMesh& mesh = sm.mesh();
  for (int f = 0; f < mesh.fs; ++f) {
    for (int t = 0; t < mesh.tp; ++t) {
      const DenseMatrix& head = sm.shard(MeshCoord{0, f, t});
      for (int d = 1; d < mesh.dp; ++d) {
        if (!bytes_equal(head, sm.shard(MeshCoord{d, f, t}))) return false;
      }
    }
  }
  return true;
}

ShardedMatrix all_reduce(const ShardedMatrix& values, MeshAxis axis,
                         ReduceMode mode, CostLedger* ledger) {
  const ShardSpec& spec = values.spec();
  if ((spec.row_axis && *spec.row_axis == axis) ||
      (spec.col_axis && *spec.col_axis == axis)) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("all_reduce: values are sharded along the ") +
                    axis_name(axis) + " axis being reduced");
  }
  const DeviceMesh& mesh = values.mesh();
  const int axis_size = mesh.size(axis);
  ShardedMatrix out(spec, mesh);
  for (const MeshCoord& c : values.coords()) {
    if (c.get(axis) != 0) continue;  // one fold per group
    MeshCoord member = c;
    DenseMatrix acc = values.shard(member);
    for (int k = 1; k < axis_size; ++k) {
      member.set(axis, k);
      const DenseMatrix& next = values.shard(member);
      if (!acc.same_shape(next)) {
        MeshCoord first = c;
        throw Error(ErrorCode::kDimensionMismatch,
                    "all_reduce: shape mismatch between devices " +
                        coord_string(first) + " and " + coord_string(member));
      }
      for (index_t i = 0; i < acc.size(); ++i) acc.data[i] += next.data[i];
    }
    if (mode == ReduceMode::kMean) {
      const double inv = 1.0 / static_cast<double>(axis_size);
      for (double& v : acc.data) v *= inv;
    }
    for (int k = 0; k < axis_size; ++k) {
      member.set(axis, k);
      out.shard(member) = acc;
    }
  }
  if (ledger != nullptr && axis_size > 1) {
    ledger->add_comm(axis, spec.full_elements());
  }
  return out;
}

ShardedMatrix all_gather(const ShardedMatrix& values, MeshAxis axis,
                         ConcatDim concat_dim, CostLedger* ledger) {
  const ShardSpec& spec = values.spec();
  const DeviceMesh& mesh = values.mesh();
  const int axis_size = mesh.size(axis);

  const auto sharding = concat_dim == ConcatDim::kRows ? spec.row_axis
                                                       : spec.col_axis;
  if (axis_size > 1 && (!sharding || *sharding != axis)) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("all_gather: values are not sharded along ") +
                    axis_name(axis) + " on the concat dimension");
  }

  ShardSpec out_spec = spec;
  if (concat_dim == ConcatDim::kRows) {
    out_spec.row_axis.reset();
  } else {
    out_spec.col_axis.reset();
  }

  ShardedMatrix out(out_spec, mesh);
  const index_t part_rows = spec.shard_rows(mesh);
  const index_t part_cols = spec.shard_cols(mesh);
  for (const MeshCoord& c : values.coords()) {
    if (c.get(axis) != 0) continue;
    DenseMatrix gathered(out_spec.shard_rows(mesh), out_spec.shard_cols(mesh));
    MeshCoord member = c;
    for (int k = 0; k < axis_size; ++k) {
      member.set(axis, k);
      const DenseMatrix& piece = values.shard(member);
      if (piece.rows != part_rows || piece.cols != part_cols) {
        throw Error(ErrorCode::kDimensionMismatch,
                    "all_gather: non-conformable shard at device " +
                        coord_string(member));
      }
      const index_t r0 = concat_dim == ConcatDim::kRows ? k * part_rows : 0;
      const index_t c0 = concat_dim == ConcatDim::kCols ? k * part_cols : 0;
      for (index_t i = 0; i < part_rows; ++i) {
        for (index_t j = 0; j < part_cols; ++j) {
          gathered(r0 + i, c0 + j) = piece(i, j);
        }
      }
    }
    for (int k = 0; k < axis_size; ++k) {
      member.set(axis, k);
      out.shard(member) = gathered;
    }
  }
  if (ledger != nullptr && axis_size > 1) {
    ledger->add_comm(axis, spec.full_elements());
  }
  return out;
}

ShardedMatrix shard_cols_locally(const ShardedMatrix& values, MeshAxis axis) {
  const ShardSpec& spec = values.spec();
  if (spec.col_axis) {
    throw Error(ErrorCode::kInvalidArgument,
                "shard_cols_locally: columns are already sharded");
  }
  ShardSpec out_spec = spec;
  out_spec.col_axis = axis;
  const DeviceMesh& mesh = values.mesh();
  out_spec.validate(mesh);
  ShardedMatrix out(out_spec, mesh);
  const index_t rows = out_spec.shard_rows(mesh);
  const index_t cols = out_spec.shard_cols(mesh);
  for (const MeshCoord& c : values.coords()) {
    const DenseMatrix& src = values.shard(c);
    out.shard(c) =
        extract_block(src, 0, c.get(axis) * cols, rows, cols);
  }
  return out;
}

ShardedMatrix map_shards(const ShardedMatrix& values, const ShardSpec& spec,
                         const std::function<DenseMatrix(
                             const MeshCoord&, const DenseMatrix&)>& fn) {
  ShardedMatrix out(spec, values.mesh());
  for (const MeshCoord& c : values.coords()) {
    out.shard(c) = fn(c, values.shard(c));
  }
  return out;
}

DenseMatrix local_block(const DenseMatrix& full, const ShardSpec& spec,
                        const DeviceMesh& mesh, const MeshCoord& c) {
  return extract_block(full, row_offset(spec, mesh, c),
                       col_offset(spec, mesh, c), spec.shard_rows(mesh),
                       spec.shard_cols(mesh));
}

}  // namespace dion
