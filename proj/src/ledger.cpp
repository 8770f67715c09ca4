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
#include "ledger.hpp"

#include <sstream>

namespace dion {

void CostLedger::add_comm(MeshAxis axis, std::int64_t elements) {
  switch (axis) {
    case MeshAxis::kDp:
      dp_elements_ += elements;
      break;
    case MeshAxis::kFs:
      fs_elements_ += elements;
      break;
    case MeshAxis::kTp:
      tp_elements_ += elements;
      break;
  }
}

void CostLedger::add_matmul_flops(std::int64_t flops) {
  if (factorization_depth_ > 0) {
    factorization_flops_ += flops;
  } else {
    matmul_flops_ += flops;
  }
}

void CostLedger::add_factorization_flops(std::int64_t flops) {
  factorization_flops_ += flops;
}

void CostLedger::reset() {
  dp_elements_ = 0;
  fs_elements_ = 0;
  tp_elements_ = 0;
  matmul_flops_ = 0;
  factorization_flops_ = 0;
}

std::string CostLedger::snapshot_json() const {
  std::ostringstream out;
  out << "{\"dp_elements\":" << dp_elements_
      << ",\"fs_elements\":" << fs_elements_
      << ",\"tp_elements\":" << tp_elements_ << ",\"flops\":" << flops()
      << "}";
  return out.str();
}

CostLedger::FactorizationScope::FactorizationScope(CostLedger* ledger)
    : ledger_(ledger) {
  if (ledger_ != nullptr) ++ledger_->factorization_depth_;
}

CostLedger::FactorizationScope::~FactorizationScope() {
  if (ledger_ != nullptr) --ledger_->factorization_depth_;
}

}  // namespace dion
