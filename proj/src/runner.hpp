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
#ifndef DIONSIM_RUNNER_HPP_
#define DIONSIM_RUNNER_HPP_

#include <string>
#include <vector>

#include <json.hpp>

#include "dist.hpp"
#include "optim.hpp"

namespace dion {

enum class TaskKind { kQuadratic, kMatrixFactorization, kMlpBlobs };

enum class OptimizerKind {
  kDion,
  kDionDistributed,
  kDionTransposed,
  kDoubleDion,
  kMuon,
  kAdamW,
  kLionOnly,
};

enum class AblationKind { kSvdVsPowerIter, kErrorFeedback, kRankSweep };

struct MeshConfig {
  int dp = 1;
  int fs = 1;
  int tp = 1;
};

struct TaskShape {
  // quadratic: minimize ||X A - B||^2/p for X in R^{m x n}, A in R^{n x p}
  index_t m = 32;
  index_t n = 16;
  index_t p = 32;
  index_t planted_rank = 4;  // matrix_factorization target rank
  index_t d_in = 8;          // mlp_blobs
  index_t hidden = 16;
  index_t classes = 4;
  index_t points_per_class = 16;
};

struct RunConfig {
  TaskKind task = TaskKind::kQuadratic;
  OptimizerKind optimizer = OptimizerKind::kDion;
  MeshConfig mesh;
  long long steps = 200;
  std::uint64_t seed = 1;
  Schedule schedule;
  DionConfig dion;
  MuonConfig muon;
  ScalarOptimConfig adamw;
  ScalarOptimConfig lion;
  // Element-wise optimizer applied to non-matrix parameters when the main
  // optimizer is a matrix one.
  ScalarAlgorithm scalar_optimizer = ScalarAlgorithm::kLion;
  DoubleDionConfig double_dion;
  TaskShape shape;
  std::string metrics_csv = "metrics.csv";
  std::string report_json;
  std::string checkpoint_dir;
};

struct RunReport {
  bool pass = false;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  long long steps = 0;
  std::string metrics_path;
  std::string checkpoint_path;
  nlohmann::json to_json() const;
};

struct EquivalenceConfig {
  index_t m = 16;
  index_t n = 12;
  index_t rank = 4;
  long long steps = 20;
  std::uint64_t seed = 1;
  double learning_rate = 0.05;
  double momentum_decay = 0.95;
  double weight_decay = 0.0;
  double tolerance = 1e-9;
  bool transposed = false;
  std::vector<MeshConfig> meshes;  // empty -> all eight {1,2}^3 meshes
  std::string report_json = "equivalence.json";
};

struct MeshEquivalenceResult {
  MeshConfig mesh;
  double max_x_divergence = 0.0;
  double max_momentum_divergence = 0.0;
  long long first_failing_step = -1;
  bool pass = false;
};

struct EquivalenceReport {
  bool pass = false;
  double tolerance = 0.0;
  std::vector<MeshEquivalenceResult> meshes;
  std::string report_path;
  nlohmann::json to_json() const;
};

struct AblationConfig {
  AblationKind kind = AblationKind::kRankSweep;
  index_t m = 32;
  index_t n = 16;
  index_t p = 32;
  long long steps = 200;
  std::uint64_t seed = 5;
  double learning_rate = 0.05;
  double momentum_decay = 0.95;
  // Seeded per-step gradient noise, the desk-scale stand-in for minibatch
  // sampling. The error-feedback and SVD comparisons run with noise (the
  // regimes where those effects exist); the rank sweep runs clean.
  double gradient_noise = 0.0;
  double cooldown_fraction = 0.0;
  std::string csv_path = "ablation.csv";
  std::string report_json;
};

struct AblationArm {
  std::string name;
  double final_loss = 0.0;
};

struct AblationCheck {
  std::string description;
  bool pass = false;
};

struct AblationReport {
  bool pass = false;
  std::vector<AblationArm> arms;
  std::vector<AblationCheck> checks;
  std::string csv_path;
  nlohmann::json to_json() const;
};

struct CostShape {
  index_t m = 16;
  index_t n = 8;
  index_t r = 4;
  MeshConfig mesh;
  double oversampling_factor = 1.25;
};

struct CostReportConfig {
  std::vector<CostShape> shapes;
  std::uint64_t seed = 1;
  std::string report_json = "costs.json";
};

struct CostReport {
  bool pass = false;
  nlohmann::json body;
  std::string report_path;
};

// Config parsing; throws Error(kConfig) with field paths on bad input.
RunConfig parse_run_config(const nlohmann::json& j);
EquivalenceConfig parse_equivalence_config(const nlohmann::json& j);
AblationConfig parse_ablation_config(const nlohmann::json& j);
CostReportConfig parse_cost_report_config(const nlohmann::json& j);

// Relative output paths are placed under $DION_OUT_DIR when it is set.
std::string resolve_output_path(const std::string& path);

// Deterministic end-to-end drivers; all outputs are byte-stable functions
// of (config, seed).
RunReport run_task(const RunConfig& cfg);
EquivalenceReport verify_equivalence(const EquivalenceConfig& cfg);
AblationReport run_ablation(const AblationConfig& cfg);
CostReport report_costs(const CostReportConfig& cfg);

// Fixed metrics schema, checked by tests and consumers.
inline constexpr const char* kMetricsCsvHeader =
    "step,loss,grad_norm,update_spectral_norm,dp_elements,fs_elements,"
    "tp_elements,flops";

}  // namespace dion

#endif  // DIONSIM_RUNNER_HPP_
