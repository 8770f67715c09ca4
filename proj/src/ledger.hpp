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
#ifndef DIONSIM_LEDGER_HPP_
#define DIONSIM_LEDGER_HPP_

#include <cstdint>
#include <string>

namespace dion {

enum class MeshAxis { kDp = 0, kFs = 1, kTp = 2 };

// Exact per-step cost accounting. Communication counters record the logical
// payload of each collective (the full matrix size being reduced or gathered)
// once per call on each participating axis; an axis of size 1 records zero.
// FLOPs are split into two buckets: plain matrix multiplies, and
// factorization work (QR/Cholesky/triangular solves plus any multiplies
// executed inside an orthogonalization, see FactorizationScope). Elementwise
// work is never counted.
class CostLedger {
 public:
  void add_comm(MeshAxis axis, std::int64_t elements);
  void add_matmul_flops(std::int64_t flops);
  void add_factorization_flops(std::int64_t flops);

  std::int64_t dp_elements() const { return dp_elements_; }
  std::int64_t fs_elements() const { return fs_elements_; }
  std::int64_t tp_elements() const { return tp_elements_; }
  std::int64_t matmul_flops() const { return matmul_flops_; }
  std::int64_t factorization_flops() const { return factorization_flops_; }
  std::int64_t flops() const { return matmul_flops_ + factorization_flops_; }

  void reset();

  // {"dp_elements":..,"fs_elements":..,"tp_elements":..,"flops":..}
  std::string snapshot_json() const;

  // While alive, multiplies reported by matmul are booked as factorization
  // work. Used by the orthogonalization routines so that the matmul bucket
  // contains exactly the power-iteration / error-feedback / weight-update
  // products.
  class FactorizationScope {
   public:
    explicit FactorizationScope(CostLedger* ledger);
    ~FactorizationScope();
    FactorizationScope(const FactorizationScope&) = delete;
    FactorizationScope& operator=(const FactorizationScope&) = delete;

   private:
    CostLedger* ledger_;
  };

 private:
  std::int64_t dp_elements_ = 0;
  std::int64_t fs_elements_ = 0;
  std::int64_t tp_elements_ = 0;
  std::int64_t matmul_flops_ = 0;
  std::int64_t factorization_flops_ = 0;
  int factorization_depth_ = 0;
};

}  // namespace dion

#endif  // DIONSIM_LEDGER_HPP_
