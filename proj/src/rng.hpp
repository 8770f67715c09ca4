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
#ifndef DIONSIM_RNG_HPP_
#define DIONSIM_RNG_HPP_

#include <cstdint>
#include <string_view>

#include "dense.hpp"

namespace dion {

// Counter-based random stream: every draw is a pure function of
// (key, counter), so shards of a matrix can be generated independently and
// still agree with the full matrix. Keys are derived from a seed plus a tag
// and up to two integers (e.g. step index, parameter id).
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : key_(key) {}

  static std::uint64_t derive_key(std::uint64_t seed, std::string_view tag,
                                  std::uint64_t a = 0, std::uint64_t b = 0);
  static RandomStream derive(std::uint64_t seed, std::string_view tag,
                             std::uint64_t a = 0, std::uint64_t b = 0) {
    return RandomStream(derive_key(seed, tag, a, b));
  }

  std::uint64_t key() const { return key_; }

  // Uniform in (0, 1], by counter.
  double uniform_at(std::uint64_t counter) const;
  // Standard normal, by counter (Box-Muller; each draw uses two words).
  double normal_at(std::uint64_t counter) const;

  // Sequential convenience draws.
  double next_uniform() { return uniform_at(cursor_++); }
  double next_normal() { return normal_at(cursor_++); }

  // rows x cols matrix of iid draws; entry (i, j) depends only on its index.
  DenseMatrix normal_matrix(index_t rows, index_t cols) const;
  DenseMatrix uniform_matrix(index_t rows, index_t cols) const;

 private:
  std::uint64_t key_;
  std::uint64_t cursor_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dion

#endif  // DIONSIM_RNG_HPP_
