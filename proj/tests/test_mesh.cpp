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
#include <doctest.h>

#include "mesh.hpp"
#include "test_util.hpp"

using namespace dion;
using namespace dion::testing;

TEST_CASE("shard on a trivial mesh is the identity") {
  const DeviceMesh mesh(1, 1, 1);
  const DenseMatrix full = random_matrix(201, 4, 3);
  const ShardedMatrix sm =
      shard(full, ShardSpec{4, 3, std::nullopt, std::nullopt}, mesh);
  CHECK(bytes_equal(sm.shard(MeshCoord{0, 0, 0}), full));
  CHECK(bytes_equal(assemble(sm), full));
}

TEST_CASE("shard splits rows into contiguous blocks in coordinate order") {
  const DeviceMesh mesh(1, 2, 1);
  const DenseMatrix full = from_rows({{1, 2}, {3, 4}, {5, 6}, {7, 8}});
  const ShardedMatrix sm =
      shard(full, ShardSpec{4, 2, MeshAxis::kFs, std::nullopt}, mesh);
  const DenseMatrix& top = sm.shard(MeshCoord{0, 0, 0});
  const DenseMatrix& bottom = sm.shard(MeshCoord{0, 1, 0});
  CHECK(top(0, 0) == 1.0);
  CHECK(top(1, 1) == 4.0);
  CHECK(bottom(0, 0) == 5.0);
  CHECK(bottom(1, 1) == 8.0);
}

TEST_CASE("shard then assemble is a byte-identical round trip") {
  const DeviceMesh mesh(2, 2, 2);
  const DenseMatrix full = random_matrix(202, 12, 8);
  const ShardSpec spec{12, 8, MeshAxis::kTp, MeshAxis::kFs};
  const ShardedMatrix sm = shard(full, spec, mesh);
  CHECK(bytes_equal(assemble(sm), full));
  CHECK(dp_replicas_byte_identical(sm));
  for (int d = 0; d < mesh.dp; ++d) {
    CHECK(bytes_equal(assemble_replica(sm, d), full));
  }
}

TEST_CASE("shard rejects indivisible shapes naming dimension and axis") {
  const DeviceMesh mesh(1, 1, 3);
  const DenseMatrix full = random_matrix(203, 4, 4);
  try {
    shard(full, ShardSpec{4, 4, MeshAxis::kTp, std::nullopt}, mesh);
    FAIL("expected divisibility error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
    CHECK(std::string(e.what()).find("tp") != std::string::npos);
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("all_reduce over a singleton axis is the identity and free") {
  const DeviceMesh mesh(1, 1, 1);
  const DenseMatrix full = random_matrix(204, 3, 3);
  const ShardedMatrix sm =
      shard(full, ShardSpec{3, 3, std::nullopt, std::nullopt}, mesh);
  CostLedger ledger;
  const ShardedMatrix out =
      all_reduce(sm, MeshAxis::kDp, ReduceMode::kSum, &ledger);
  CHECK(bytes_equal(out.shard(MeshCoord{0, 0, 0}), full));
  CHECK(ledger.dp_elements() == 0);
}

TEST_CASE("all_reduce mean on two devices") {
  const DeviceMesh mesh(1, 1, 2);
  ShardedMatrix values(ShardSpec{1, 2, std::nullopt, std::nullopt}, mesh);
  values.shard(MeshCoord{0, 0, 0}) = from_rows({{1, 2}});
  values.shard(MeshCoord{0, 0, 1}) = from_rows({{3, 4}});
  CostLedger ledger;
  const ShardedMatrix out =
      all_reduce(values, MeshAxis::kTp, ReduceMode::kMean, &ledger);
  for (int t = 0; t < 2; ++t) {
    CHECK(out.shard(MeshCoord{0, 0, t})(0, 0) == 2.0);
    CHECK(out.shard(MeshCoord{0, 0, t})(0, 1) == 3.0);
  }
  CHECK(ledger.tp_elements() == 2);
}

TEST_CASE("all_reduce sum matches a sequential fold oracle exactly") {
  const DeviceMesh mesh(1, 4, 1);
  ShardedMatrix values(ShardSpec{8, 2, std::nullopt, std::nullopt}, mesh);
  for (int f = 0; f < 4; ++f) {
    values.shard(MeshCoord{0, f, 0}) =
        random_matrix(300 + static_cast<std::uint64_t>(f), 8, 2);
  }
  const ShardedMatrix out = all_reduce(values, MeshAxis::kFs, ReduceMode::kSum);

  DenseMatrix expected = values.shard(MeshCoord{0, 0, 0});
  for (int f = 1; f < 4; ++f) {
    const DenseMatrix& next = values.shard(MeshCoord{0, f, 0});
    for (index_t i = 0; i < expected.size(); ++i) {
      expected.data[i] += next.data[i];
    }
  }
  for (int f = 0; f < 4; ++f) {
    CHECK(bytes_equal(out.shard(MeshCoord{0, f, 0}), expected));
  }
}

TEST_CASE("all_reduce reports mismatched shapes with both coordinates") {
  const DeviceMesh mesh(1, 2, 1);
  ShardedMatrix values(ShardSpec{2, 2, std::nullopt, std::nullopt}, mesh);
  values.shard(MeshCoord{0, 1, 0}) = DenseMatrix(3, 2);  // corrupted
  try {
    all_reduce(values, MeshAxis::kFs, ReduceMode::kSum);
    FAIL("expected shape mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimensionMismatch);
    CHECK(std::string(e.what()).find("(0,0,0)") != std::string::npos);
    CHECK(std::string(e.what()).find("(0,1,0)") != std::string::npos);
  }
}

TEST_CASE("all_gather stacks row shards in axis order") {
  const DeviceMesh mesh(1, 2, 1);
  const DenseMatrix full = from_rows({{1}, {2}, {3}, {4}});
  const ShardedMatrix sm =
      shard(full, ShardSpec{4, 1, MeshAxis::kFs, std::nullopt}, mesh);
  const ShardedMatrix out = all_gather(sm, MeshAxis::kFs, ConcatDim::kRows);
  for (int f = 0; f < 2; ++f) {
    CHECK(bytes_equal(out.shard(MeshCoord{0, f, 0}), full));
  }
}

TEST_CASE("all_gather over a singleton axis is the identity and free") {
  const DeviceMesh mesh(1, 1, 1);
  const DenseMatrix full = random_matrix(205, 4, 2);
  const ShardedMatrix sm =
      shard(full, ShardSpec{4, 2, std::nullopt, MeshAxis::kTp}, mesh);
  CostLedger ledger;
  const ShardedMatrix out =
      all_gather(sm, MeshAxis::kTp, ConcatDim::kCols, &ledger);
  CHECK(bytes_equal(out.shard(MeshCoord{0, 0, 0}), full));
  CHECK(ledger.tp_elements() == 0);
}

TEST_CASE("all_gather records the full logical payload once") {
  // n x r basis, rows over FS and columns over TP, gathered along TP: the
  // ledger books n*r elements regardless of the TP size.
  for (int tp : {2, 4}) {
    const DeviceMesh mesh(2, 2, tp);
    const index_t n = 8, r = 4;
    const DenseMatrix full = random_matrix(206, n, r);
    const ShardedMatrix sm =
        shard(full, ShardSpec{n, r, MeshAxis::kFs, MeshAxis::kTp}, mesh);
    CostLedger ledger;
    const ShardedMatrix out =
        all_gather(sm, MeshAxis::kTp, ConcatDim::kCols, &ledger);
    CHECK(ledger.tp_elements() == n * r);
    // Every device in an FS group now holds that group's full row block.
    const DenseMatrix row_block = local_block(
        full, ShardSpec{n, r, MeshAxis::kFs, std::nullopt}, mesh,
        MeshCoord{0, 1, 0});
    CHECK(bytes_equal(out.shard(MeshCoord{1, 1, tp - 1}), row_block));
  }
}

TEST_CASE("all_reduce records the full logical payload once per call") {
  // m x r partials sharded over TP rows, reduced over FS then DP.
  const DeviceMesh mesh(2, 2, 2);
  const index_t m = 8, r = 2;
  ShardedMatrix values(ShardSpec{m, r, MeshAxis::kTp, std::nullopt}, mesh);
  for (const MeshCoord& c : values.coords()) {
    values.shard(c) = random_matrix(400 + static_cast<std::uint64_t>(
                                              values.flat_index(c)),
                                    m / 2, r);
  }
  CostLedger ledger;
  const ShardedMatrix fs_summed =
      all_reduce(values, MeshAxis::kFs, ReduceMode::kSum, &ledger);
  const ShardedMatrix dp_meaned =
      all_reduce(fs_summed, MeshAxis::kDp, ReduceMode::kMean, &ledger);
  CHECK(ledger.fs_elements() == m * r);
  CHECK(ledger.dp_elements() == m * r);
  CHECK(ledger.tp_elements() == 0);
  CHECK(dp_replicas_byte_identical(dp_meaned));
}

TEST_CASE("collective linearity: mean of A_i Q equals mean(A_i) Q") {
  const DeviceMesh mesh(4, 1, 1);
  const DenseMatrix q = random_matrix(207, 6, 3);
  ShardedMatrix products(ShardSpec{8, 3, std::nullopt, std::nullopt}, mesh);
  ShardedMatrix raws(ShardSpec{8, 6, std::nullopt, std::nullopt}, mesh);
  for (int d = 0; d < 4; ++d) {
    const DenseMatrix a =
        random_matrix(500 + static_cast<std::uint64_t>(d), 8, 6);
    raws.shard(MeshCoord{d, 0, 0}) = a;
    products.shard(MeshCoord{d, 0, 0}) = matmul(a, q);
  }
  const ShardedMatrix mean_of_products =
      all_reduce(products, MeshAxis::kDp, ReduceMode::kMean);
  const ShardedMatrix mean_raw =
      all_reduce(raws, MeshAxis::kDp, ReduceMode::kMean);
  const DenseMatrix product_of_mean =
      matmul(mean_raw.shard(MeshCoord{0, 0, 0}), q);
  CHECK(max_abs_diff(mean_of_products.shard(MeshCoord{0, 0, 0}),
                     product_of_mean) < 1e-12);
}

TEST_CASE("collectives are deterministic across repeated runs") {
  const DeviceMesh mesh(2, 2, 1);
  ShardedMatrix values(ShardSpec{4, 4, std::nullopt, std::nullopt}, mesh);
  for (const MeshCoord& c : values.coords()) {
    values.shard(c) = random_matrix(
        600 + static_cast<std::uint64_t>(values.flat_index(c)), 4, 4);
  }
  const ShardedMatrix first =
      all_reduce(values, MeshAxis::kDp, ReduceMode::kMean);
  const ShardedMatrix second =
      all_reduce(values, MeshAxis::kDp, ReduceMode::kMean);
  for (const MeshCoord& c : values.coords()) {
    CHECK(bytes_equal(first.shard(c), second.shard(c)));
  }
}

TEST_CASE("shard_cols_locally keeps each device's own column slice") {
  const DeviceMesh mesh(1, 2, 2);
  const index_t n = 4, r = 4;
  const DenseMatrix full = random_matrix(208, n, r);
  const ShardedMatrix gathered =
      shard(full, ShardSpec{n, r, MeshAxis::kFs, std::nullopt}, mesh);
  const ShardedMatrix resharded = shard_cols_locally(gathered, MeshAxis::kTp);
  const ShardedMatrix direct =
      shard(full, ShardSpec{n, r, MeshAxis::kFs, MeshAxis::kTp}, mesh);
  for (const MeshCoord& c : resharded.coords()) {
    CHECK(bytes_equal(resharded.shard(c), direct.shard(c)));
  }
}

TEST_CASE("ledger snapshots serialize to the documented json shape") {
  CostLedger ledger;
  ledger.add_comm(MeshAxis::kDp, 24);
  ledger.add_comm(MeshAxis::kFs, 18);
  ledger.add_comm(MeshAxis::kTp, 26);
  ledger.add_matmul_flops(100);
  ledger.add_factorization_flops(7);
  CHECK(ledger.snapshot_json() ==
        "{\"dp_elements\":24,\"fs_elements\":18,\"tp_elements\":26,"
        "\"flops\":107}");
  ledger.reset();
  CHECK(ledger.snapshot_json() ==
        "{\"dp_elements\":0,\"fs_elements\":0,\"tp_elements\":0,\"flops\":0}");
}

TEST_CASE("factorization scope reroutes matmul work") {
  CostLedger ledger;
  const DenseMatrix a = random_matrix(209, 4, 4);
  {
    CostLedger::FactorizationScope scope(&ledger);
    matmul(a, a, false, false, &ledger);
  }
  CHECK(ledger.matmul_flops() == 0);
  CHECK(ledger.factorization_flops() == 2 * 4 * 4 * 4);
  matmul(a, a, false, false, &ledger);
  CHECK(ledger.matmul_flops() == 2 * 4 * 4 * 4);
}
