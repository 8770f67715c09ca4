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
#include "dense.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace dion {

namespace {

std::string shape_string(const DenseMatrix& a) {
  std::ostringstream out;
  out << a.rows << "x" << a.cols;
  return out.str();
}

long long rounded(double value) { return std::llround(value); }

}  // namespace

DenseMatrix DenseMatrix::identity(index_t n) {
  DenseMatrix m(n, n);
  for (index_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool DenseMatrix::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b,
                   bool transpose_a, bool transpose_b, CostLedger* ledger) {
  const index_t m = transpose_a ? a.cols : a.rows;
  const index_t k = transpose_a ? a.rows : a.cols;
  const index_t kb = transpose_b ? b.cols : b.rows;
  const index_t n = transpose_b ? b.rows : b.cols;
  if (k != kb) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matmul: inner dimensions disagree: op(a) is " +
                    std::to_string(m) + "x" + std::to_string(k) +
                    " (a: " + shape_string(a) + "), op(b) is " +
                    std::to_string(kb) + "x" + std::to_string(n) +
                    " (b: " + shape_string(b) + ")");
  }
  DenseMatrix c(m, n);
  for (index_t i = 0; i < m; ++i) {
    for (index_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (index_t p = 0; p < k; ++p) {
        const double av = transpose_a ? a(p, i) : a(i, p);
        const double bv = transpose_b ? b(j, p) : b(p, j);
        acc += av * bv;
      }
      c(i, j) = acc;
    }
  }
  if (ledger != nullptr) ledger->add_matmul_flops(2 * m * n * k);
  return c;
}

QrResult householder_qr(const DenseMatrix& a, CostLedger* ledger) {
  const index_t m = a.rows;
  const index_t n = a.cols;
  if (m < n) {
    throw Error(ErrorCode::kInvalidArgument,
                "householder_qr: need rows >= cols, got " + shape_string(a));
  }
  DenseMatrix work = a;
  // Householder vectors, one per column, stored dense for the desk scale.
  std::vector<std::vector<double>> reflectors(n);
  for (index_t k = 0; k < n; ++k) {
    double norm_sq = 0.0;
    for (index_t i = k; i < m; ++i) norm_sq += work(i, k) * work(i, k);
    const double norm = std::sqrt(norm_sq);
    if (norm == 0.0) {
      throw Error(ErrorCode::kRankDeficient,
                  "householder_qr: column " + std::to_string(k) +
                      " is exactly zero after reflection",
                  k);
    }
    const double alpha = work(k, k) >= 0.0 ? -norm : norm;
    std::vector<double> v(m - k, 0.0);
    for (index_t i = k; i < m; ++i) v[i - k] = work(i, k);
    v[0] -= alpha;
    double v_norm_sq = 0.0;
    for (double x : v) v_norm_sq += x * x;
    if (v_norm_sq > 0.0) {
      for (index_t j = k; j < n; ++j) {
        double dot = 0.0;
        for (index_t i = k; i < m; ++i) dot += v[i - k] * work(i, j);
        const double coef = 2.0 * dot / v_norm_sq;
        for (index_t i = k; i < m; ++i) work(i, j) -= coef * v[i - k];
      }
    }
    work(k, k) = alpha;
    reflectors[k] = std::move(v);
  }

  QrResult result;
  result.r = DenseMatrix(n, n);
  for (index_t i = 0; i < n; ++i) {
    for (index_t j = i; j < n; ++j) result.r(i, j) = work(i, j);
  }

  // Thin Q: apply reflectors in reverse to the first n identity columns.
  result.q = DenseMatrix(m, n);
  for (index_t j = 0; j < n; ++j) result.q(j, j) = 1.0;
  for (index_t k = n - 1; k >= 0; --k) {
    const std::vector<double>& v = reflectors[k];
    double v_norm_sq = 0.0;
    for (double x : v) v_norm_sq += x * x;
    if (v_norm_sq == 0.0) continue;
    for (index_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (index_t i = k; i < m; ++i) dot += v[i - k] * result.q(i, j);
      const double coef = 2.0 * dot / v_norm_sq;
      for (index_t i = k; i < m; ++i) result.q(i, j) -= coef * v[i - k];
    }
  }

  // Sign convention: nonnegative diagonal of R.
  for (index_t k = 0; k < n; ++k) {
    if (result.r(k, k) < 0.0) {
      for (index_t j = k; j < n; ++j) result.r(k, j) = -result.r(k, j);
      for (index_t i = 0; i < m; ++i) result.q(i, k) = -result.q(i, k);
    }
  }

  if (ledger != nullptr) {
    ledger->add_factorization_flops(rounded(
        2.0 * static_cast<double>(m) * static_cast<double>(n) *
            static_cast<double>(n) -
        (2.0 / 3.0) * static_cast<double>(n) * static_cast<double>(n) *
            static_cast<double>(n)));
  }
  return result;
}

DenseMatrix cholesky_upper(const DenseMatrix& h, CostLedger* ledger) {
  const index_t n = h.rows;
  if (h.rows != h.cols) {
    throw Error(ErrorCode::kInvalidArgument,
                "cholesky_upper: matrix must be square, got " +
                    shape_string(h));
  }
  const double tolerance = 1e-12 * std::max(1.0, max_abs(h));
  for (index_t i = 0; i < n; ++i) {
    for (index_t j = i + 1; j < n; ++j) {
      if (std::abs(h(i, j) - h(j, i)) > tolerance) {
        throw Error(ErrorCode::kInvalidArgument,
                    "cholesky_upper: matrix is not symmetric at (" +
                        std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  DenseMatrix r(n, n);
  for (index_t j = 0; j < n; ++j) {
    double diag = h(j, j);
    for (index_t k = 0; k < j; ++k) diag -= r(k, j) * r(k, j);
    if (diag <= 0.0) {
      throw Error(ErrorCode::kNotPositiveDefinite,
                  "cholesky_upper: non-positive pivot " + std::to_string(diag) +
                      " at index " + std::to_string(j),
                  j);
    }
    r(j, j) = std::sqrt(diag);
    for (index_t i = j + 1; i < n; ++i) {
      double acc = h(j, i);
      for (index_t k = 0; k < j; ++k) acc -= r(k, j) * r(k, i);
      r(j, i) = acc / r(j, j);
    }
  }
  if (ledger != nullptr) {
    ledger->add_factorization_flops(
        rounded(static_cast<double>(n) * static_cast<double>(n) *
                static_cast<double>(n) / 3.0));
  }
  return r;
}

DenseMatrix solve_upper_triangular_right(const DenseMatrix& a,
                                         const DenseMatrix& r,
                                         CostLedger* ledger) {
  const index_t n = r.rows;
  if (r.rows != r.cols) {
    throw Error(ErrorCode::kInvalidArgument,
                "solve_upper_triangular_right: r must be square, got " +
                    shape_string(r));
  }
  if (a.cols != n) {
    throw Error(ErrorCode::kDimensionMismatch,
                "solve_upper_triangular_right: a is " + shape_string(a) +
                    " but r is " + shape_string(r));
  }
  for (index_t j = 0; j < n; ++j) {
    if (r(j, j) == 0.0) {
      throw Error(ErrorCode::kSingularTriangular,
                  "solve_upper_triangular_right: zero diagonal at index " +
                      std::to_string(j),
                  j);
    }
  }
  const index_t m = a.rows;
  DenseMatrix x(m, n);
  // Column-forward substitution: X[:,j] = (A[:,j] - sum_k X[:,k] R[k,j]) / R[j,j].
  for (index_t j = 0; j < n; ++j) {
    for (index_t i = 0; i < m; ++i) {
      double acc = a(i, j);
      for (index_t k = 0; k < j; ++k) acc -= x(i, k) * r(k, j);
      x(i, j) = acc / r(j, j);
    }
  }
  if (ledger != nullptr) ledger->add_factorization_flops(m * n * n);
  return x;
}

std::vector<double> column_norms_squared(const DenseMatrix& a) {
  std::vector<double> norms(a.cols, 0.0);
  for (index_t j = 0; j < a.cols; ++j) {
    double acc = 0.0;
    for (index_t i = 0; i < a.rows; ++i) acc += a(i, j) * a(i, j);
    norms[j] = acc;
  }
  return norms;
}

SvdResult truncated_svd(const DenseMatrix& a, index_t rank) {
  if (rank < 1 || rank > std::min(a.rows, a.cols)) {
    throw Error(ErrorCode::kInvalidArgument,
                "truncated_svd: rank " + std::to_string(rank) +
                    " out of range for " + shape_string(a));
  }
  const bool wide = a.rows < a.cols;
  DenseMatrix w = wide ? transpose(a) : a;
  const index_t m = w.rows;
  const index_t n = w.cols;
  DenseMatrix v = DenseMatrix::identity(n);

  // One-sided Jacobi: rotate column pairs of W until all are orthogonal.
  const int kMaxSweeps = 60;
  const double kTol = 1e-14;
  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (index_t p = 0; p < n - 1; ++p) {
      for (index_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (index_t i = 0; i < m; ++i) {
          app += w(i, p) * w(i, p);
          aqq += w(i, q) * w(i, q);
          apq += w(i, p) * w(i, q);
        }
        if (std::abs(apq) <= kTol * std::sqrt(app * aqq) || apq == 0.0) {
          continue;
        }
        converged = false;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (index_t i = 0; i < m; ++i) {
          const double wp = w(i, p);
          const double wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (index_t i = 0; i < n; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) {
    throw Error(ErrorCode::kNoConvergence,
                "truncated_svd: no convergence after " +
                    std::to_string(kMaxSweeps) + " sweeps");
  }

  std::vector<double> sigma(n, 0.0);
  for (index_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (index_t i = 0; i < m; ++i) acc += w(i, j) * w(i, j);
    sigma[j] = std::sqrt(acc);
  }
  std::vector<index_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](index_t x, index_t y) {
    return sigma[x] > sigma[y];
  });

  SvdResult result;
  result.u = DenseMatrix(m, rank);
  result.v = DenseMatrix(n, rank);
  result.s.resize(rank);
  for (index_t j = 0; j < rank; ++j) {
    const index_t src = order[j];
    result.s[j] = sigma[src];
    if (sigma[src] > 0.0) {
      for (index_t i = 0; i < m; ++i) {
        result.u(i, j) = w(i, src) / sigma[src];
      }
    }
    for (index_t i = 0; i < n; ++i) result.v(i, j) = v(i, src);
  }
  if (wide) std::swap(result.u, result.v);
  return result;
}

DenseMatrix newton_schulz(const DenseMatrix& a, int iterations,
                          const NewtonSchulzCoefficients& coefficients,
                          CostLedger* ledger) {
  if (is_zero(a)) {
    throw Error(ErrorCode::kInvalidArgument,
                "newton_schulz: zero matrix, normalization undefined");
  }
  const bool wide = a.rows < a.cols;
  DenseMatrix x = wide ? transpose(a) : a;
  const double norm = frobenius_norm(x);
  x = scale(x, 1.0 / norm);
  for (int it = 0; it < iterations; ++it) {
    const DenseMatrix gram = matmul(x, x, /*transpose_a=*/true,
                                    /*transpose_b=*/false, ledger);
    const DenseMatrix gram_sq = matmul(gram, gram, false, false, ledger);
    DenseMatrix poly = gram;
    for (index_t i = 0; i < poly.size(); ++i) {
      poly.data[i] =
          coefficients.c2 * gram.data[i] + coefficients.c3 * gram_sq.data[i];
    }
    const DenseMatrix xp = matmul(x, poly, false, false, ledger);
    for (index_t i = 0; i < x.size(); ++i) {
      x.data[i] = coefficients.c1 * x.data[i] + xp.data[i];
    }
  }
  return wide ? transpose(x) : x;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols, a.rows);
  for (index_t i = 0; i < a.rows; ++i) {
    for (index_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  }
  return t;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kDimensionMismatch, "add: shapes disagree: " +
                                                   shape_string(a) + " vs " +
                                                   shape_string(b));
  }
  DenseMatrix c = a;
  for (index_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kDimensionMismatch, "subtract: shapes disagree: " +
                                                   shape_string(a) + " vs " +
                                                   shape_string(b));
  }
  DenseMatrix c = a;
  for (index_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

DenseMatrix scale(const DenseMatrix& a, double factor) {
  DenseMatrix c = a;
  for (double& v : c.data) v *= factor;
  return c;
}

DenseMatrix add_scaled(const DenseMatrix& a, double factor,
                       const DenseMatrix& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "add_scaled: shapes disagree: " + shape_string(a) + " vs " +
                    shape_string(b));
  }
  DenseMatrix c = a;
  for (index_t i = 0; i < c.size(); ++i) c.data[i] += factor * b.data[i];
  return c;
}

double frobenius_norm(const DenseMatrix& a) {
  double acc = 0.0;
  for (double v : a.data) acc += v * v;
  return std::sqrt(acc);
}

double max_abs(const DenseMatrix& a) {
  double best = 0.0;
  for (double v : a.data) best = std::max(best, std::abs(v));
  return best;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "max_abs_diff: shapes disagree: " + shape_string(a) + " vs " +
                    shape_string(b));
  }
  double best = 0.0;
  for (index_t i = 0; i < a.size(); ++i) {
    best = std::max(best, std::abs(a.data[i] - b.data[i]));
  }
  return best;
}

bool bytes_equal(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data.data(), b.data.data(),
                     sizeof(double) * a.data.size()) == 0;
}

bool is_zero(const DenseMatrix& a) {
  for (double v : a.data) {
    if (v != 0.0) return false;
  }
  return true;
}

}  // namespace dion
