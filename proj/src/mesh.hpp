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
#ifndef DIONSIM_MESH_HPP_
#define DIONSIM_MESH_HPP_

#include <functional>
#include <optional>
#include <vector>

#include "dense.hpp"
#include "ledger.hpp"

namespace dion {

// A DP x FS x TP grid simulated in one address space. "Devices" are array
// slots; every simulated step is a pure function of its inputs.
struct DeviceMesh {
  int dp = 1;
  int fs = 1;
  int tp = 1;

  DeviceMesh() = default;
  DeviceMesh(int dp_size, int fs_size, int tp_size);

  int size(MeshAxis axis) const;
  int device_count() const { return dp * fs * tp; }
  bool operator==(const DeviceMesh&) const = default;
};

struct MeshCoord {
  int dp = 0;
  int fs = 0;
  int tp = 0;

  int get(MeshAxis axis) const;
  void set(MeshAxis axis, int value);
};

// Placement of an m x n logical matrix on the mesh: which axis (if any)
// shards the rows and which the columns. DP never shards.
struct ShardSpec {
  index_t full_rows = 0;
  index_t full_cols = 0;
  std::optional<MeshAxis> row_axis;
  std::optional<MeshAxis> col_axis;

  index_t full_elements() const { return full_rows * full_cols; }
  index_t shard_rows(const DeviceMesh& mesh) const;
  index_t shard_cols(const DeviceMesh& mesh) const;
  void validate(const DeviceMesh& mesh) const;
  bool operator==(const ShardSpec&) const = default;
};

// Per-device shards plus the spec tying them together. Matrices that do not
// vary along DP hold byte-identical shards across dp indices; in-flight
// partial results may legitimately differ.
class ShardedMatrix {
 public:
  ShardedMatrix() = default;
  ShardedMatrix(ShardSpec spec, DeviceMesh mesh);

  const ShardSpec& spec() const { return spec_; }
  const DeviceMesh& mesh() const { return mesh_; }

  DenseMatrix& shard(const MeshCoord& c) { return shards_[flat_index(c)]; }
  const DenseMatrix& shard(const MeshCoord& c) const {
    return shards_[flat_index(c)];
  }

  // Coordinates in deterministic (dp, fs, tp) row-major order.
  std::vector<MeshCoord> coords() const;

  int flat_index(const MeshCoord& c) const;

 private:
  ShardSpec spec_;
  DeviceMesh mesh_;
  std::vector<DenseMatrix> shards_;
};

enum class ReduceMode { kSum, kMean };
enum class ConcatDim { kRows, kCols };

// Contiguous block partition in coordinate order, replicated across
// non-sharding axes (including DP).
ShardedMatrix shard(const DenseMatrix& full, const ShardSpec& spec,
                    const DeviceMesh& mesh);

// Like shard(), but DP replica k is cut from full_per_dp[k].
ShardedMatrix shard_dp_variants(const std::vector<DenseMatrix>& full_per_dp,
                                const ShardSpec& spec, const DeviceMesh& mesh);

// Reconstructs the full matrix from the dp=0 replica's shards.
DenseMatrix assemble(const ShardedMatrix& sm);
DenseMatrix assemble_replica(const ShardedMatrix& sm, int dp_idx);

bool dp_replicas_byte_identical(const ShardedMatrix& sm);

// Elementwise sum (or mean) within every group along `axis`, computed as a
// sequential left fold in coordinate order; every group member receives the
// identical result. Records the spec's full logical size once on `axis`
// (zero for an axis of size 1).
ShardedMatrix all_reduce(const ShardedMatrix& values, MeshAxis axis,
                         ReduceMode mode, CostLedger* ledger = nullptr);

// Concatenation along `concat_dim` in axis-coordinate order; every group
// member receives the full concatenation and the result spec drops the axis
// from that dimension. Ledger convention as in all_reduce.
ShardedMatrix all_gather(const ShardedMatrix& values, MeshAxis axis,
                         ConcatDim concat_dim, CostLedger* ledger = nullptr);

// Local re-shard of the columns over `axis`: each device keeps its own
// column slice. Pure slicing, no communication.
ShardedMatrix shard_cols_locally(const ShardedMatrix& values, MeshAxis axis);

// Applies fn to every device's shard, producing a new ShardedMatrix with the
// given spec.
ShardedMatrix map_shards(const ShardedMatrix& values, const ShardSpec& spec,
                         const std::function<DenseMatrix(
                             const MeshCoord&, const DenseMatrix&)>& fn);

// The block of `full` that device c owns under `spec`.
DenseMatrix local_block(const DenseMatrix& full, const ShardSpec& spec,
                        const DeviceMesh& mesh, const MeshCoord& c);

}  // namespace dion

#endif  // DIONSIM_MESH_HPP_
