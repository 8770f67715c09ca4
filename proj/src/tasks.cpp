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
#include "tasks.hpp"

#include <cmath>

#include "rng.hpp"

namespace dion {

namespace {

void check_slice(index_t total, int dp_idx, int dp_total,
                 const std::string& what) {
  if (dp_total < 1 || dp_idx < 0 || dp_idx >= dp_total) {
    throw Error(ErrorCode::kInvalidArgument, what + ": bad replica index");
  }
  if (total % dp_total != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                what + ": " + std::to_string(total) +
                    " data columns not divisible by dp " +
                    std::to_string(dp_total));
  }
}

class QuadraticTask final : public Task {
 public:
  QuadraticTask(std::uint64_t seed, index_t m, index_t n, index_t p)
      : m_(m), n_(n), p_(p) {
    a_ = RandomStream::derive(seed, "quadratic-a").normal_matrix(n, p);
    const DenseMatrix planted =
        RandomStream::derive(seed, "quadratic-x").normal_matrix(m, n);
    b_ = matmul(planted, a_);
  }

  std::vector<Parameter> initial_parameters() const override {
    return {Parameter{"x", ParamSpec{ParamKind::kWeight, m_, n_},
                      DenseMatrix(m_, n_)}};
  }

  double loss(const std::vector<DenseMatrix>& params) const override {
    const DenseMatrix residual = subtract(matmul(params[0], a_), b_);
    const double f = frobenius_norm(residual);
    return f * f / static_cast<double>(p_);
  }

  std::vector<DenseMatrix> gradients(const std::vector<DenseMatrix>& params,
                                     int dp_idx, int dp_total) const override {
    check_slice(p_, dp_idx, dp_total, "quadratic");
    const index_t cols = p_ / dp_total;
    const index_t c0 = dp_idx * cols;
    DenseMatrix a_slice(n_, cols);
    DenseMatrix b_slice(m_, cols);
    for (index_t i = 0; i < n_; ++i) {
      for (index_t j = 0; j < cols; ++j) a_slice(i, j) = a_(i, c0 + j);
    }
    for (index_t i = 0; i < m_; ++i) {
      for (index_t j = 0; j < cols; ++j) b_slice(i, j) = b_(i, c0 + j);
    }
    const DenseMatrix residual = subtract(matmul(params[0], a_slice), b_slice);
    return {scale(matmul(residual, a_slice, false, /*transpose_b=*/true),
                  2.0 / static_cast<double>(cols))};
  }

 private:
  index_t m_, n_, p_;
  DenseMatrix a_;
  DenseMatrix b_;
};

class MatrixFactorizationTask final : public Task {
 public:
  MatrixFactorizationTask(std::uint64_t seed, index_t m, index_t n,
                          index_t planted_rank)
      : m_(m), n_(n), seed_(seed) {
    const DenseMatrix u =
        RandomStream::derive(seed, "planted-u").normal_matrix(m, planted_rank);
    const DenseMatrix v =
        RandomStream::derive(seed, "planted-v").normal_matrix(n, planted_rank);
    target_ = scale(matmul(u, v, false, /*transpose_b=*/true),
                    1.0 / std::sqrt(static_cast<double>(planted_rank)));
  }

  std::vector<Parameter> initial_parameters() const override {
    return {Parameter{"x", ParamSpec{ParamKind::kWeight, m_, n_},
                      DenseMatrix(m_, n_)}};
  }

  double loss(const std::vector<DenseMatrix>& params) const override {
    const double f = frobenius_norm(subtract(params[0], target_));
    return 0.5 * f * f;
  }

  std::vector<DenseMatrix> gradients(const std::vector<DenseMatrix>& params,
                                     int dp_idx, int dp_total) const override {
    if (dp_total < 1 || dp_idx < 0 || dp_idx >= dp_total) {
      throw Error(ErrorCode::kInvalidArgument,
                  "matrix_factorization: bad replica index");
    }
    DenseMatrix grad = subtract(params[0], target_);
    if (dp_total > 1) {
      // Fixed per-replica perturbation with signs that cancel in the DP
      // mean: +,-,+,-,... and a zero weight on a trailing odd replica.
      const DenseMatrix base =
          RandomStream::derive(seed_, "grad-noise").normal_matrix(m_, n_);
      const double sign = (dp_idx % 2 == 0) ? 1.0 : -1.0;
      const double weight =
          (dp_total % 2 == 0 || dp_idx + 1 < dp_total) ? sign : 0.0;
      grad = add_scaled(grad, 0.1 * weight, base);
    }
    return {grad};
  }

 private:
  index_t m_, n_;
  std::uint64_t seed_;
  DenseMatrix target_;
};

class MlpBlobsTask final : public Task {
 public:
  MlpBlobsTask(std::uint64_t seed, index_t d_in, index_t hidden,
               index_t classes, index_t points_per_class)
      : d_in_(d_in),
        hidden_(hidden),
        classes_(classes),
        n_points_(classes * points_per_class),
        seed_(seed) {
    data_ = DenseMatrix(d_in_, n_points_);
    labels_.resize(n_points_);
    const RandomStream centers = RandomStream::derive(seed, "blob-centers");
    const RandomStream offsets = RandomStream::derive(seed, "blob-points");
    for (index_t c = 0; c < classes_; ++c) {
      for (index_t k = 0; k < points_per_class; ++k) {
        const index_t col = c * points_per_class + k;
        labels_[col] = c;
        for (index_t i = 0; i < d_in_; ++i) {
          const double center =
              2.0 * centers.normal_at(
                        static_cast<std::uint64_t>(c * d_in_ + i));
          const double offset =
              0.5 * offsets.normal_at(
                        static_cast<std::uint64_t>(col * d_in_ + i));
          data_(i, col) = center + offset;
        }
      }
    }
  }

  std::vector<Parameter> initial_parameters() const override {
    const double w1_scale = 1.0 / std::sqrt(static_cast<double>(d_in_));
    const double w2_scale = 1.0 / std::sqrt(static_cast<double>(hidden_));
    std::vector<Parameter> params;
    params.push_back(
        {"w1", ParamSpec{ParamKind::kWeight, hidden_, d_in_},
         scale(RandomStream::derive(seed_, "w1").normal_matrix(hidden_, d_in_),
               w1_scale)});
    params.push_back({"b1", ParamSpec{ParamKind::kBias, hidden_, 1},
                      DenseMatrix(hidden_, 1)});
    params.push_back(
        {"w2", ParamSpec{ParamKind::kWeight, classes_, hidden_},
         scale(RandomStream::derive(seed_, "w2").normal_matrix(classes_, hidden_),
               w2_scale)});
    params.push_back({"b2", ParamSpec{ParamKind::kBias, classes_, 1},
                      DenseMatrix(classes_, 1)});
    return params;
  }

  double loss(const std::vector<DenseMatrix>& params) const override {
    return forward_backward(params, 0, n_points_, nullptr);
  }

  std::vector<DenseMatrix> gradients(const std::vector<DenseMatrix>& params,
                                     int dp_idx, int dp_total) const override {
    check_slice(n_points_, dp_idx, dp_total, "mlp_blobs");
    const index_t cols = n_points_ / dp_total;
    std::vector<DenseMatrix> grads;
    forward_backward(params, dp_idx * cols, cols, &grads);
    return grads;
  }

 private:
  // Mean softmax cross-entropy over [col0, col0 + count); fills grads with
  // d/d{w1, b1, w2, b2} when requested.
  double forward_backward(const std::vector<DenseMatrix>& params, index_t col0,
                          index_t count,
                          std::vector<DenseMatrix>* grads) const {
    const DenseMatrix& w1 = params[0];
    const DenseMatrix& b1 = params[1];
    const DenseMatrix& w2 = params[2];
    const DenseMatrix& b2 = params[3];

    DenseMatrix gw1(hidden_, d_in_), gb1(hidden_, 1);
    DenseMatrix gw2(classes_, hidden_), gb2(classes_, 1);
    double total_loss = 0.0;

    std::vector<double> z1(hidden_), a1(hidden_), z2(classes_), prob(classes_);
    std::vector<double> delta2(classes_), delta1(hidden_);
    for (index_t s = 0; s < count; ++s) {
      const index_t col = col0 + s;
      for (index_t i = 0; i < hidden_; ++i) {
        double acc = b1(i, 0);
        for (index_t j = 0; j < d_in_; ++j) acc += w1(i, j) * data_(j, col);
        z1[i] = acc;
        a1[i] = std::tanh(acc);
      }
      double z_max = -1e300;
      for (index_t i = 0; i < classes_; ++i) {
        double acc = b2(i, 0);
        for (index_t j = 0; j < hidden_; ++j) acc += w2(i, j) * a1[j];
        z2[i] = acc;
        z_max = std::max(z_max, acc);
      }
      double denom = 0.0;
      for (index_t i = 0; i < classes_; ++i) {
        prob[i] = std::exp(z2[i] - z_max);
        denom += prob[i];
      }
      const index_t label = labels_[col];
      total_loss += -(z2[label] - z_max - std::log(denom));
      if (grads == nullptr) continue;

      for (index_t i = 0; i < classes_; ++i) {
        delta2[i] = prob[i] / denom - (i == label ? 1.0 : 0.0);
      }
      for (index_t i = 0; i < classes_; ++i) {
        gb2(i, 0) += delta2[i];
        for (index_t j = 0; j < hidden_; ++j) gw2(i, j) += delta2[i] * a1[j];
      }
      for (index_t j = 0; j < hidden_; ++j) {
        double acc = 0.0;
        for (index_t i = 0; i < classes_; ++i) acc += w2(i, j) * delta2[i];
        delta1[j] = acc * (1.0 - a1[j] * a1[j]);
      }
      for (index_t i = 0; i < hidden_; ++i) {
        gb1(i, 0) += delta1[i];
        for (index_t j = 0; j < d_in_; ++j) {
          gw1(i, j) += delta1[i] * data_(j, col);
        }
      }
    }

    const double inv = 1.0 / static_cast<double>(count);
    if (grads != nullptr) {
      *grads = {scale(gw1, inv), scale(gb1, inv), scale(gw2, inv),
                scale(gb2, inv)};
    }
    return total_loss * inv;
  }

  index_t d_in_, hidden_, classes_, n_points_;
  std::uint64_t seed_;
  DenseMatrix data_;
  std::vector<index_t> labels_;
};

}  // namespace

std::unique_ptr<Task> make_quadratic_task(std::uint64_t seed, index_t m,
                                          index_t n, index_t p) {
  return std::make_unique<QuadraticTask>(seed, m, n, p);
}

std::unique_ptr<Task> make_matrix_factorization_task(std::uint64_t seed,
                                                     index_t m, index_t n,
                                                     index_t planted_rank) {
  return std::make_unique<MatrixFactorizationTask>(seed, m, n, planted_rank);
}

std::unique_ptr<Task> make_mlp_blobs_task(std::uint64_t seed, index_t d_in,
                                          index_t hidden, index_t classes,
                                          index_t points_per_class) {
  return std::make_unique<MlpBlobsTask>(seed, d_in, hidden, classes,
                                        points_per_class);
}

}  // namespace dion
