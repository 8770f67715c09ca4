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
#ifndef DIONSIM_ERROR_HPP_
#define DIONSIM_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace dion {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kRankDeficient,
  kNotPositiveDefinite,
  kSingularTriangular,
  kNoConvergence,
  kConfig,
  kIo,
  kDeterminism,
};

// All failures in the core surface as Error. The code plus the detail index
// (column/pivot/field position, -1 when not applicable) make errors
// machine-inspectable at the C boundary.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, long long detail_index = -1)
      : std::runtime_error(std::move(message)),
        code_(code),
        detail_index_(detail_index) {}

  ErrorCode code() const { return code_; }
  long long detail_index() const { return detail_index_; }

 private:
  ErrorCode code_;
  long long detail_index_;
};

}  // namespace dion

#endif  // DIONSIM_ERROR_HPP_
