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
#ifndef DIONSIM_DENSE_HPP_
#define DIONSIM_DENSE_HPP_

#include <cstdint>
#include <vector>

#include "error.hpp"
#include "ledger.hpp"

namespace dion {

using index_t = std::int64_t;

// Row-major matrix of IEEE-754 doubles. All kernels below use a fixed
// accumulation order (row-major, innermost contraction loop) so that results
// are bit-reproducible run to run.
struct DenseMatrix {
  index_t rows = 0;
  index_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(index_t r, index_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  static DenseMatrix identity(index_t n);

  double& operator()(index_t i, index_t j) { return data[i * cols + j]; }
  double operator()(index_t i, index_t j) const { return data[i * cols + j]; }

  index_t size() const { return rows * cols; }
  bool all_finite() const;
  bool same_shape(const DenseMatrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

struct QrResult {
  DenseMatrix q;  // m x n, orthonormal columns
  DenseMatrix r;  // n x n, upper triangular, nonnegative diagonal
};

struct SvdResult {
  DenseMatrix u;          // m x r
  std::vector<double> s;  // r, nonincreasing, nonnegative
  DenseMatrix v;          // n x r
};

struct NewtonSchulzCoefficients {
  double c1 = 3.4445;
  double c2 = -4.7750;
  double c3 = 2.0315;
};
inline constexpr int kDefaultNewtonSchulzIterations = 5;

// c = op(a) * op(b). Reports 2*m*n*p flops.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b,
                   bool transpose_a = false, bool transpose_b = false,
                   CostLedger* ledger = nullptr);

// Thin Householder QR of an m x n matrix, m >= n. The diagonal of R is forced
// nonnegative by flipping factor signs. Reports round(2mn^2 - (2/3)n^3) flops.
QrResult householder_qr(const DenseMatrix& a, CostLedger* ledger = nullptr);

// Upper Cholesky factor R with R^T R = h, for symmetric positive definite h.
// Reports round(n^3/3) flops.
DenseMatrix cholesky_upper(const DenseMatrix& h, CostLedger* ledger = nullptr);

// Solves X * r = a for X, with r square upper triangular. Reports m*n^2 flops.
DenseMatrix solve_upper_triangular_right(const DenseMatrix& a,
                                         const DenseMatrix& r,
                                         CostLedger* ledger = nullptr);

// Entry j is the squared l2 norm of column j.
std::vector<double> column_norms_squared(const DenseMatrix& a);

// Rank-r truncated SVD via one-sided Jacobi. Accuracy-first test oracle.
SvdResult truncated_svd(const DenseMatrix& a, index_t rank);

// Newton-Schulz orthonormalization: pre-normalizes by the Frobenius norm and
// iterates X <- c1*X + X*(c2*A + c3*A^2), A = X^T X. Wide inputs are
// transposed internally. Reports 4mn^2 + 2n^3 flops per iteration.
DenseMatrix newton_schulz(
    const DenseMatrix& a, int iterations = kDefaultNewtonSchulzIterations,
    const NewtonSchulzCoefficients& coefficients = NewtonSchulzCoefficients{},
    CostLedger* ledger = nullptr);

// Elementwise helpers.
DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double factor);
// a + factor * b
DenseMatrix add_scaled(const DenseMatrix& a, double factor,
                       const DenseMatrix& b);
double frobenius_norm(const DenseMatrix& a);
double max_abs(const DenseMatrix& a);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);
bool bytes_equal(const DenseMatrix& a, const DenseMatrix& b);
bool is_zero(const DenseMatrix& a);

}  // namespace dion

#endif  // DIONSIM_DENSE_HPP_
