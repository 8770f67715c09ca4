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
#ifndef DIONSIM_TASKS_HPP_
#define DIONSIM_TASKS_HPP_

#include <memory>
#include <string>
#include <vector>

#include "dense.hpp"
#include "optim.hpp"

namespace dion {

struct Parameter {
  std::string name;
  ParamSpec spec;
  DenseMatrix value;
};

// A deterministic full-batch objective. gradients(params, k, dp) returns the
// mean-loss gradients of replica k's equal data slice, so that averaging the
// replica gradients reproduces the full-batch gradient.
class Task {
 public:
  virtual ~Task() = default;
  virtual std::vector<Parameter> initial_parameters() const = 0;
  virtual double loss(const std::vector<DenseMatrix>& params) const = 0;
  virtual std::vector<DenseMatrix> gradients(
      const std::vector<DenseMatrix>& params, int dp_idx,
      int dp_total) const = 0;
};

// min_X ||X A - B||_F^2 / p with a planted solution (optimum loss zero).
// The p data columns are split across DP replicas.
std::unique_ptr<Task> make_quadratic_task(std::uint64_t seed, index_t m,
                                          index_t n, index_t p);

// min_X 0.5 ||X - W*||_F^2 for a planted rank-k W*. Replicas see gradients
// perturbed by fixed zero-mean-across-DP noise.
std::unique_ptr<Task> make_matrix_factorization_task(std::uint64_t seed,
                                                     index_t m, index_t n,
                                                     index_t planted_rank);

// Two-layer tanh perceptron with softmax cross-entropy on seeded Gaussian
// clusters. Matrix parameters are Weight-kind; biases are Bias-kind.
std::unique_ptr<Task> make_mlp_blobs_task(std::uint64_t seed, index_t d_in,
                                          index_t hidden, index_t classes,
                                          index_t points_per_class);

}  // namespace dion

#endif  // DIONSIM_TASKS_HPP_
