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
#ifndef DIONSIM_CHECKPOINT_HPP_
#define DIONSIM_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "dense.hpp"

namespace dion {

struct CheckpointEntry {
  std::string name;
  DenseMatrix value;
};

struct Checkpoint {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<CheckpointEntry> entries;
};

// Writes one row-major little-endian float64 blob per entry plus a JSON
// manifest with shapes and the seed. Round trips are bit-exact.
void save_checkpoint(const std::string& dir, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace dion

#endif  // DIONSIM_CHECKPOINT_HPP_
