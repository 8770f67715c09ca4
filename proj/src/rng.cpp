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
#include "rng.hpp"

#include <cmath>
#include <numbers>

namespace dion {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t RandomStream::derive_key(std::uint64_t seed,
                                       std::string_view tag, std::uint64_t a,
                                       std::uint64_t b) {
  // FNV-1a over the tag, then mix in the integer qualifiers.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t key = splitmix64(seed ^ h);
  key = splitmix64(key ^ a);
  key = splitmix64(key ^ b);
  return key;
}

double RandomStream::uniform_at(std::uint64_t counter) const {
  const std::uint64_t bits = splitmix64(key_ ^ splitmix64(counter));
  // 53-bit mantissa mapped to (0, 1]: never returns zero, safe for log().
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

double RandomStream::normal_at(std::uint64_t counter) const {
  const double u1 = uniform_at(2 * counter);
  const double u2 = uniform_at(2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

DenseMatrix RandomStream::normal_matrix(index_t rows, index_t cols) const {
  DenseMatrix m(rows, cols);
  for (index_t i = 0; i < m.size(); ++i) {
    m.data[i] = normal_at(static_cast<std::uint64_t>(i));
  }
  return m;
}

DenseMatrix RandomStream::uniform_matrix(index_t rows, index_t cols) const {
  DenseMatrix m(rows, cols);
  for (index_t i = 0; i < m.size(); ++i) {
    m.data[i] = uniform_at(static_cast<std::uint64_t>(i));
  }
  return m;
}

}  // namespace dion
