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
#include "runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "accounting.hpp"
#include "checkpoint.hpp"
#include "rng.hpp"
#include "tasks.hpp"

namespace dion {

namespace {

// --------------------------------------------------------------------------
// Config parsing.
// --------------------------------------------------------------------------

[[noreturn]] void config_error(const std::string& path,
                               const std::string& message) {
  throw Error(ErrorCode::kConfig, "config." + path + ": " + message);
}

void require_object(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) config_error(path, "expected an object");
}

double get_number(const nlohmann::json& j, const std::string& path,
                  const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) {
    config_error(path + "." + key, "expected a number");
  }
  return j.at(key).get<double>();
}

long long get_integer(const nlohmann::json& j, const std::string& path,
                      const char* key, long long fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) {
    config_error(path + "." + key, "expected an integer");
  }
  return j.at(key).get<long long>();
}

bool get_boolean(const nlohmann::json& j, const std::string& path,
                 const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) {
    config_error(path + "." + key, "expected a boolean");
  }
  return j.at(key).get<bool>();
}

std::string get_string(const nlohmann::json& j, const std::string& path,
                       const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) {
    config_error(path + "." + key, "expected a string");
  }
  return j.at(key).get<std::string>();
}

MeshConfig parse_mesh(const nlohmann::json& j, const std::string& path) {
  require_object(j, path);
  MeshConfig mesh;
  mesh.dp = static_cast<int>(get_integer(j, path, "dp", 1));
  mesh.fs = static_cast<int>(get_integer(j, path, "fs", 1));
  mesh.tp = static_cast<int>(get_integer(j, path, "tp", 1));
  if (mesh.dp < 1 || mesh.fs < 1 || mesh.tp < 1) {
    config_error(path, "axis sizes must be >= 1");
  }
  return mesh;
}

Schedule parse_schedule(const nlohmann::json& j, const std::string& path) {
  require_object(j, path);
  Schedule schedule;
  const std::string kind = get_string(j, path, "kind", "constant");
  if (kind == "constant") {
    schedule.kind = ScheduleKind::kConstant;
  } else if (kind == "cooldown") {
    schedule.kind = ScheduleKind::kCooldown;
  } else if (kind == "warmup") {
    schedule.kind = ScheduleKind::kWarmup;
  } else {
    config_error(path + ".kind", "unknown schedule '" + kind + "'");
  }
  schedule.fraction = get_number(j, path, "fraction", 0.1);
  if (schedule.fraction < 0.0 || schedule.fraction > 1.0) {
    config_error(path + ".fraction", "must be in [0, 1]");
  }
  return schedule;
}

DionConfig parse_dion(const nlohmann::json& j, const std::string& path) {
  require_object(j, path);
  DionConfig cfg;
  cfg.learning_rate = get_number(j, path, "learning_rate", cfg.learning_rate);
  cfg.momentum_decay =
      get_number(j, path, "momentum_decay", cfg.momentum_decay);
  cfg.rank = get_integer(j, path, "rank", cfg.rank);
  cfg.oversampling_factor =
      get_number(j, path, "oversampling_factor", cfg.oversampling_factor);
  cfg.epsilon_col = get_number(j, path, "epsilon_col", cfg.epsilon_col);
  cfg.weight_decay = get_number(j, path, "weight_decay", cfg.weight_decay);
  if (cfg.learning_rate < 0.0) config_error(path + ".learning_rate", "must be >= 0");
  if (cfg.momentum_decay <= 0.0 || cfg.momentum_decay >= 1.0) {
    config_error(path + ".momentum_decay", "must be in (0, 1)");
  }
  if (cfg.rank < 1) config_error(path + ".rank", "must be >= 1");
  if (cfg.oversampling_factor < 1.0) {
    config_error(path + ".oversampling_factor", "must be >= 1");
  }
  if (cfg.weight_decay < 0.0) config_error(path + ".weight_decay", "must be >= 0");
  return cfg;
}

MuonConfig parse_muon(const nlohmann::json& j, const std::string& path) {
  require_object(j, path);
  MuonConfig cfg;
  cfg.learning_rate = get_number(j, path, "learning_rate", cfg.learning_rate);
  cfg.momentum_decay =
      get_number(j, path, "momentum_decay", cfg.momentum_decay);
  cfg.weight_decay = get_number(j, path, "weight_decay", cfg.weight_decay);
  cfg.ns_iterations = static_cast<int>(
      get_integer(j, path, "ns_iterations", cfg.ns_iterations));
  if (j.contains("ns_coefficients")) {
    const nlohmann::json& coeffs = j.at("ns_coefficients");
    if (!coeffs.is_array() || coeffs.size() != 3) {
      config_error(path + ".ns_coefficients", "expected [c1, c2, c3]");
    }
    cfg.ns_coefficients.c1 = coeffs[0].get<double>();
    cfg.ns_coefficients.c2 = coeffs[1].get<double>();
    cfg.ns_coefficients.c3 = coeffs[2].get<double>();
  }
  if (cfg.ns_iterations < 1) config_error(path + ".ns_iterations", "must be >= 1");
  return cfg;
}

ScalarOptimConfig parse_scalar(const nlohmann::json& j, const std::string& path,
                               ScalarOptimConfig cfg) {
  require_object(j, path);
  cfg.beta1 = get_number(j, path, "beta1", cfg.beta1);
  cfg.beta2 = get_number(j, path, "beta2", cfg.beta2);
  cfg.base_learning_rate =
      get_number(j, path, "base_learning_rate", cfg.base_learning_rate);
  cfg.weight_decay = get_number(j, path, "weight_decay", cfg.weight_decay);
  cfg.adam_epsilon = get_number(j, path, "adam_epsilon", cfg.adam_epsilon);
  cfg.use_scale_factor =
      get_boolean(j, path, "use_scale_factor", cfg.use_scale_factor);
  if (cfg.beta1 <= 0.0 || cfg.beta1 >= 1.0) config_error(path + ".beta1", "must be in (0, 1)");
  if (cfg.beta2 <= 0.0 || cfg.beta2 >= 1.0) config_error(path + ".beta2", "must be in (0, 1)");
  if (cfg.base_learning_rate < 0.0) {
    config_error(path + ".base_learning_rate", "must be >= 0");
  }
  return cfg;
}

DoubleDionConfig parse_double_dion(const nlohmann::json& j,
                                   const std::string& path) {
  require_object(j, path);
  DoubleDionConfig cfg;
  cfg.learning_rate = get_number(j, path, "learning_rate", cfg.learning_rate);
  cfg.mu1 = get_number(j, path, "mu1", cfg.mu1);
  cfg.mu2 = get_number(j, path, "mu2", cfg.mu2);
  cfg.r1 = get_integer(j, path, "r1", cfg.r1);
  cfg.r2 = get_integer(j, path, "r2", cfg.r2);
  cfg.delayed = get_boolean(j, path, "delayed", cfg.delayed);
  cfg.oversampling_factor =
      get_number(j, path, "oversampling_factor", cfg.oversampling_factor);
  cfg.weight_decay = get_number(j, path, "weight_decay", cfg.weight_decay);
  if (cfg.r1 < 1 || cfg.r2 < cfg.r1) config_error(path, "need 1 <= r1 <= r2");
  if (cfg.mu1 <= 0.0 || cfg.mu1 >= 1.0) config_error(path + ".mu1", "must be in (0, 1)");
  if (cfg.mu2 <= 0.0 || cfg.mu2 >= 1.0) config_error(path + ".mu2", "must be in (0, 1)");
  return cfg;
}

TaskShape parse_shape(const nlohmann::json& j, const std::string& path) {
  require_object(j, path);
  TaskShape shape;
  shape.m = get_integer(j, path, "m", shape.m);
  shape.n = get_integer(j, path, "n", shape.n);
  shape.p = get_integer(j, path, "p", shape.p);
  shape.planted_rank = get_integer(j, path, "planted_rank", shape.planted_rank);
  shape.d_in = get_integer(j, path, "d_in", shape.d_in);
  shape.hidden = get_integer(j, path, "hidden", shape.hidden);
  shape.classes = get_integer(j, path, "classes", shape.classes);
  shape.points_per_class =
      get_integer(j, path, "points_per_class", shape.points_per_class);
  if (shape.m < 1 || shape.n < 1 || shape.p < 1) {
    config_error(path, "m, n, p must be >= 1");
  }
  return shape;
}

bool optimizer_is_distributed(OptimizerKind kind) {
  return kind == OptimizerKind::kDionDistributed ||
         kind == OptimizerKind::kDionTransposed ||
         kind == OptimizerKind::kDoubleDion;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  require_object(j, "");
  RunConfig cfg;
  cfg.adamw = adamw_defaults();
  cfg.lion = lion_defaults();
  cfg.adamw.use_scale_factor = false;  // conventional single Adam rate

  const std::string task = get_string(j, "", "task", "quadratic");
  if (task == "quadratic") {
    cfg.task = TaskKind::kQuadratic;
  } else if (task == "matrix_factorization") {
    cfg.task = TaskKind::kMatrixFactorization;
  } else if (task == "mlp_blobs") {
    cfg.task = TaskKind::kMlpBlobs;
  } else {
    config_error("task", "unknown task '" + task + "'");
  }

  const std::string optimizer = get_string(j, "", "optimizer", "dion");
  if (optimizer == "dion") {
    cfg.optimizer = OptimizerKind::kDion;
  } else if (optimizer == "dion_distributed") {
    cfg.optimizer = OptimizerKind::kDionDistributed;
  } else if (optimizer == "dion_transposed") {
    cfg.optimizer = OptimizerKind::kDionTransposed;
  } else if (optimizer == "double_dion") {
    cfg.optimizer = OptimizerKind::kDoubleDion;
  } else if (optimizer == "muon") {
    cfg.optimizer = OptimizerKind::kMuon;
  } else if (optimizer == "adamw") {
    cfg.optimizer = OptimizerKind::kAdamW;
  } else if (optimizer == "lion_only") {
    cfg.optimizer = OptimizerKind::kLionOnly;
  } else {
    config_error("optimizer", "unknown optimizer '" + optimizer + "'");
  }

  if (j.contains("mesh")) cfg.mesh = parse_mesh(j.at("mesh"), "mesh");
  cfg.steps = get_integer(j, "", "steps", cfg.steps);
  if (cfg.steps < 1) config_error("steps", "must be >= 1");
  cfg.seed = static_cast<std::uint64_t>(get_integer(j, "", "seed", 1));
  if (j.contains("schedule")) {
    cfg.schedule = parse_schedule(j.at("schedule"), "schedule");
  }
  if (j.contains("dion")) cfg.dion = parse_dion(j.at("dion"), "dion");
  if (j.contains("muon")) cfg.muon = parse_muon(j.at("muon"), "muon");
  if (j.contains("adamw")) cfg.adamw = parse_scalar(j.at("adamw"), "adamw", cfg.adamw);
  if (j.contains("lion")) cfg.lion = parse_scalar(j.at("lion"), "lion", cfg.lion);
  const std::string scalar = get_string(j, "", "scalar_optimizer", "lion");
  if (scalar == "lion") {
    cfg.scalar_optimizer = ScalarAlgorithm::kLion;
  } else if (scalar == "adamw") {
    cfg.scalar_optimizer = ScalarAlgorithm::kAdamW;
  } else {
    config_error("scalar_optimizer", "expected 'lion' or 'adamw'");
  }
  if (j.contains("double_dion")) {
    cfg.double_dion = parse_double_dion(j.at("double_dion"), "double_dion");
  }
  if (j.contains("shape")) cfg.shape = parse_shape(j.at("shape"), "shape");
  if (j.contains("out")) {
    const nlohmann::json& out = j.at("out");
    require_object(out, "out");
    cfg.metrics_csv = get_string(out, "out", "metrics_csv", cfg.metrics_csv);
    cfg.report_json = get_string(out, "out", "report_json", cfg.report_json);
    cfg.checkpoint_dir =
        get_string(out, "out", "checkpoint_dir", cfg.checkpoint_dir);
  }

  const bool distributed = optimizer_is_distributed(cfg.optimizer);
  if (!distributed && (cfg.mesh.dp != 1 || cfg.mesh.fs != 1 || cfg.mesh.tp != 1)) {
    config_error("mesh", "centralized optimizers require a 1x1x1 mesh");
  }
  if (distributed && cfg.task == TaskKind::kMlpBlobs) {
    config_error("task",
                 "mlp_blobs runs with centralized optimizers; use quadratic "
                 "or matrix_factorization on a mesh");
  }
  return cfg;
}

EquivalenceConfig parse_equivalence_config(const nlohmann::json& j) {
  require_object(j, "");
  EquivalenceConfig cfg;
  cfg.m = get_integer(j, "", "m", cfg.m);
  cfg.n = get_integer(j, "", "n", cfg.n);
  cfg.rank = get_integer(j, "", "rank", cfg.rank);
  cfg.steps = get_integer(j, "", "steps", cfg.steps);
  cfg.seed = static_cast<std::uint64_t>(get_integer(j, "", "seed", 1));
  cfg.learning_rate = get_number(j, "", "learning_rate", cfg.learning_rate);
  cfg.momentum_decay = get_number(j, "", "momentum_decay", cfg.momentum_decay);
  cfg.weight_decay = get_number(j, "", "weight_decay", cfg.weight_decay);
  cfg.tolerance = get_number(j, "", "tolerance", cfg.tolerance);
  const std::string variant = get_string(j, "", "variant", "standard");
  if (variant == "standard") {
    cfg.transposed = false;
  } else if (variant == "transposed") {
    cfg.transposed = true;
  } else {
    config_error("variant", "expected 'standard' or 'transposed'");
  }
  if (j.contains("meshes")) {
    if (!j.at("meshes").is_array()) config_error("meshes", "expected an array");
    int idx = 0;
    for (const nlohmann::json& mesh : j.at("meshes")) {
      cfg.meshes.push_back(
          parse_mesh(mesh, "meshes[" + std::to_string(idx) + "]"));
      ++idx;
    }
  }
  cfg.report_json = get_string(j, "", "report_json", cfg.report_json);
  if (cfg.steps < 1) config_error("steps", "must be >= 1");
  if (cfg.rank < 1 || cfg.rank > std::min(cfg.m, cfg.n)) {
    config_error("rank", "must satisfy 1 <= rank <= min(m, n)");
  }
  return cfg;
}

AblationConfig parse_ablation_config(const nlohmann::json& j) {
  require_object(j, "");
  AblationConfig cfg;
  const std::string kind = get_string(j, "", "kind", "rank_sweep");
  if (kind == "svd_vs_poweriter") {
    cfg.kind = AblationKind::kSvdVsPowerIter;
  } else if (kind == "error_feedback") {
    cfg.kind = AblationKind::kErrorFeedback;
  } else if (kind == "rank_sweep") {
    cfg.kind = AblationKind::kRankSweep;
  } else {
    config_error("kind", "unknown ablation '" + kind + "'");
  }
  // Per-kind calibrated defaults, frozen together with the default seed.
  if (cfg.kind == AblationKind::kRankSweep) {
    cfg.steps = 200;
    cfg.gradient_noise = 0.0;
    cfg.cooldown_fraction = 0.0;
  } else {
    cfg.steps = 400;
    cfg.gradient_noise = 5.0;
    cfg.cooldown_fraction = 0.2;
  }
  cfg.m = get_integer(j, "", "m", cfg.m);
  cfg.n = get_integer(j, "", "n", cfg.n);
  cfg.p = get_integer(j, "", "p", cfg.p);
  cfg.steps = get_integer(j, "", "steps", cfg.steps);
  cfg.seed = static_cast<std::uint64_t>(get_integer(j, "", "seed", 5));
  cfg.learning_rate = get_number(j, "", "learning_rate", cfg.learning_rate);
  cfg.momentum_decay = get_number(j, "", "momentum_decay", cfg.momentum_decay);
  cfg.gradient_noise = get_number(j, "", "gradient_noise", cfg.gradient_noise);
  cfg.cooldown_fraction =
      get_number(j, "", "cooldown_fraction", cfg.cooldown_fraction);
  cfg.csv_path = get_string(j, "", "csv_path", cfg.csv_path);
  cfg.report_json = get_string(j, "", "report_json", cfg.report_json);
  if (cfg.steps < 1) config_error("steps", "must be >= 1");
  if (cfg.gradient_noise < 0.0) config_error("gradient_noise", "must be >= 0");
  return cfg;
}

CostReportConfig parse_cost_report_config(const nlohmann::json& j) {
  require_object(j, "");
  CostReportConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(get_integer(j, "", "seed", 1));
  cfg.report_json = get_string(j, "", "report_json", cfg.report_json);
  if (j.contains("shapes")) {
    if (!j.at("shapes").is_array()) config_error("shapes", "expected an array");
    int idx = 0;
    for (const nlohmann::json& shape : j.at("shapes")) {
      const std::string path = "shapes[" + std::to_string(idx) + "]";
      require_object(shape, path);
      CostShape cs;
      cs.m = get_integer(shape, path, "m", cs.m);
      cs.n = get_integer(shape, path, "n", cs.n);
      cs.r = get_integer(shape, path, "r", cs.r);
      cs.oversampling_factor =
          get_number(shape, path, "oversampling_factor", cs.oversampling_factor);
      if (shape.contains("mesh")) {
        cs.mesh = parse_mesh(shape.at("mesh"), path + ".mesh");
      }
      if (cs.r < 1 || cs.r > std::min(cs.m, cs.n)) {
        config_error(path + ".r", "must satisfy 1 <= r <= min(m, n)");
      }
      cfg.shapes.push_back(cs);
      ++idx;
    }
  }
  return cfg;
}

std::string resolve_output_path(const std::string& path) {
  if (path.empty()) return path;
  const char* base = std::getenv("DION_OUT_DIR");
  std::filesystem::path p(path);
  if (base != nullptr && *base != '\0' && p.is_relative()) {
    p = std::filesystem::path(base) / p;
  }
  return p.string();
}

// --------------------------------------------------------------------------
// Shared helpers.
// --------------------------------------------------------------------------

namespace {

std::unique_ptr<Task> build_task(const RunConfig& cfg) {
  switch (cfg.task) {
    case TaskKind::kQuadratic:
      return make_quadratic_task(cfg.seed, cfg.shape.m, cfg.shape.n,
                                 cfg.shape.p);
    case TaskKind::kMatrixFactorization:
      return make_matrix_factorization_task(cfg.seed, cfg.shape.m, cfg.shape.n,
                                            cfg.shape.planted_rank);
    case TaskKind::kMlpBlobs:
      return make_mlp_blobs_task(cfg.seed, cfg.shape.d_in, cfg.shape.hidden,
                                 cfg.shape.classes, cfg.shape.points_per_class);
  }
  throw Error(ErrorCode::kConfig, "unknown task kind");
}

void ensure_parent_dir(const std::string& path) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

void write_json_file(const std::string& path, const nlohmann::json& body) {
  ensure_parent_dir(path);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << body.dump(2) << "\n";
}

std::string format_double(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

double spectral_norm_estimate(const DenseMatrix& delta) {
  if (delta.rows == 0 || delta.cols == 0 || is_zero(delta)) return 0.0;
  return truncated_svd(delta, 1).s[0];
}

bool is_matrix_param(const Parameter& param) {
  return param.spec.kind == ParamKind::kWeight && param.value.rows > 1 &&
         param.value.cols > 1;
}

nlohmann::json mesh_to_json(const MeshConfig& mesh) {
  return {{"dp", mesh.dp}, {"fs", mesh.fs}, {"tp", mesh.tp}};
}

std::vector<MeshConfig> default_equivalence_meshes() {
  std::vector<MeshConfig> meshes;
  for (int dp : {1, 2}) {
    for (int fs : {1, 2}) {
      for (int tp : {1, 2}) meshes.push_back(MeshConfig{dp, fs, tp});
    }
  }
  return meshes;
}

}  // namespace

// --------------------------------------------------------------------------
// run_task.
// --------------------------------------------------------------------------

namespace {

// Per-parameter optimizer state for the centralized optimizers.
struct CentralSlot {
  Parameter param;
  bool matrix_route = false;
  DionState dion;
  MuonState muon;
  AdamWState adamw;
  LionState lion;
};

struct MetricsWriter {
  std::ofstream out;

  explicit MetricsWriter(const std::string& path) {
    ensure_parent_dir(path);
    out.open(path);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
    out << kMetricsCsvHeader << "\n";
  }

  void row(long long step, double loss, double grad_norm,
           double update_spectral_norm, const CostLedger& ledger) {
    out << step << "," << format_double(loss) << ","
        << format_double(grad_norm) << ","
        << format_double(update_spectral_norm) << "," << ledger.dp_elements()
        << "," << ledger.fs_elements() << "," << ledger.tp_elements() << ","
        << ledger.flops() << "\n";
  }
};

double gradient_norm(const std::vector<DenseMatrix>& grads) {
  double acc = 0.0;
  for (const DenseMatrix& g : grads) {
    const double f = frobenius_norm(g);
    acc += f * f;
  }
  return std::sqrt(acc);
}

}  // namespace

RunReport run_task(const RunConfig& cfg) {
  const std::unique_ptr<Task> task = build_task(cfg);
  std::vector<Parameter> params = task->initial_parameters();
  const bool distributed = optimizer_is_distributed(cfg.optimizer);

  RunReport report;
  report.steps = cfg.steps;
  report.metrics_path = resolve_output_path(cfg.metrics_csv);
  MetricsWriter metrics(report.metrics_path);

  std::vector<DenseMatrix> values;
  for (const Parameter& p : params) values.push_back(p.value);
  report.initial_loss = task->loss(values);
  bool all_finite = std::isfinite(report.initial_loss);

  if (distributed) {
    if (params.size() != 1 || !is_matrix_param(params[0])) {
      throw Error(ErrorCode::kConfig,
                  "distributed optimizers require a single matrix parameter");
    }
    const DeviceMesh mesh(cfg.mesh.dp, cfg.mesh.fs, cfg.mesh.tp);
    const DenseMatrix& x0 = params[0].value;

    DistDionState dist;
    DoubleDionState ddion;
    if (cfg.optimizer == OptimizerKind::kDoubleDion) {
      ddion = double_dion_init(x0, cfg.double_dion, cfg.seed, mesh);
    } else {
      const DionPlacement placement =
          cfg.optimizer == OptimizerKind::kDionTransposed
              ? DionPlacement::kTransposed
              : DionPlacement::kStandard;
      dist = dist_dion_init(x0, cfg.dion, cfg.seed, mesh, placement);
    }

    for (long long step = 0; step < cfg.steps; ++step) {
      const double lr_mult = schedule_multiplier(cfg.schedule, step, cfg.steps);
      CostLedger ledger;
      std::vector<DenseMatrix> replica_grads;
      for (int k = 0; k < mesh.dp; ++k) {
        replica_grads.push_back(task->gradients(values, k, mesh.dp)[0]);
      }
      const DenseMatrix full_grad = task->gradients(values, 0, 1)[0];
      const DenseMatrix before = values[0];

      const StepContext ctx{cfg.seed, static_cast<std::uint64_t>(step)};
      if (cfg.optimizer == OptimizerKind::kDoubleDion) {
        DoubleDionConfig step_cfg = cfg.double_dion;
        step_cfg.learning_rate *= lr_mult;
        const ShardedMatrix grads =
            shard_dp_variants(replica_grads, ddion.x.spec(), mesh);
        ddion = double_dion_step(ddion, grads, step_cfg, ctx, &ledger);
        values[0] = assemble(ddion.x);
      } else {
        DionConfig step_cfg = cfg.dion;
        step_cfg.learning_rate *= lr_mult;
        const ShardedMatrix grads =
            shard_dp_variants(replica_grads, dist.x.spec(), mesh);
        dist = cfg.optimizer == OptimizerKind::kDionTransposed
                   ? dion_step_transposed(dist, grads, step_cfg, ctx, &ledger)
                   : dion_step_distributed(dist, grads, step_cfg, ctx, &ledger);
        values[0] = assemble(dist.x);
      }

      const double loss = task->loss(values);
      all_finite = all_finite && std::isfinite(loss);
      metrics.row(step, loss, frobenius_norm(full_grad),
                  spectral_norm_estimate(subtract(values[0], before)), ledger);
    }

    if (!cfg.checkpoint_dir.empty()) {
      Checkpoint checkpoint;
      checkpoint.seed = cfg.seed;
      checkpoint.step = static_cast<std::uint64_t>(cfg.steps);
      if (cfg.optimizer == OptimizerKind::kDoubleDion) {
        checkpoint.entries.push_back({"x", assemble(ddion.x)});
        checkpoint.entries.push_back({"m2", assemble(ddion.m2)});
        checkpoint.entries.push_back({"q1", assemble(ddion.q1)});
        checkpoint.entries.push_back({"q2", assemble(ddion.q2)});
        for (int d = 0; d < mesh.dp; ++d) {
          checkpoint.entries.push_back(
              {"m1.dp" + std::to_string(d), assemble_replica(ddion.m1_local, d)});
        }
      } else {
        checkpoint.entries.push_back({"x", assemble(dist.x)});
        checkpoint.entries.push_back({"q", assemble(dist.q)});
        for (int d = 0; d < mesh.dp; ++d) {
          checkpoint.entries.push_back(
              {"m.dp" + std::to_string(d), assemble_replica(dist.m_local, d)});
        }
      }
      report.checkpoint_path = resolve_output_path(cfg.checkpoint_dir);
      save_checkpoint(report.checkpoint_path, checkpoint);
    }

    report.final_loss = task->loss(values);
    report.pass = all_finite && std::isfinite(report.final_loss);
    if (!cfg.report_json.empty()) {
      write_json_file(resolve_output_path(cfg.report_json), report.to_json());
    }
    return report;
  }

  // Centralized route: per-parameter optimizer slots.
  std::vector<CentralSlot> slots;
  for (const Parameter& p : params) {
    CentralSlot slot;
    slot.param = p;
    const bool matrix = is_matrix_param(p);
    switch (cfg.optimizer) {
      case OptimizerKind::kDion:
        slot.matrix_route = matrix;
        if (matrix) slot.dion = dion_init(p.value, cfg.dion, cfg.seed);
        break;
      case OptimizerKind::kMuon:
        slot.matrix_route = matrix;
        if (matrix) slot.muon = MuonState{p.value, DenseMatrix(p.value.rows, p.value.cols)};
        break;
      case OptimizerKind::kAdamW:
      case OptimizerKind::kLionOnly:
        slot.matrix_route = false;
        break;
      default:
        throw Error(ErrorCode::kConfig, "unexpected optimizer kind");
    }
    if (!slot.matrix_route) {
      slot.adamw = AdamWState{p.value, DenseMatrix(p.value.rows, p.value.cols),
                              DenseMatrix(p.value.rows, p.value.cols), 0};
      slot.lion = LionState{p.value, DenseMatrix(p.value.rows, p.value.cols)};
    }
    slots.push_back(std::move(slot));
  }

  const ScalarAlgorithm scalar_kind =
      cfg.optimizer == OptimizerKind::kAdamW    ? ScalarAlgorithm::kAdamW
      : cfg.optimizer == OptimizerKind::kLionOnly ? ScalarAlgorithm::kLion
                                                  : cfg.scalar_optimizer;

  for (long long step = 0; step < cfg.steps; ++step) {
    const double lr_mult = schedule_multiplier(cfg.schedule, step, cfg.steps);
    CostLedger ledger;
    const std::vector<DenseMatrix> grads = task->gradients(values, 0, 1);
    double first_matrix_delta = 0.0;
    bool logged_delta = false;

    for (size_t i = 0; i < slots.size(); ++i) {
      CentralSlot& slot = slots[i];
      const DenseMatrix before = values[i];
      const StepContext ctx{cfg.seed + static_cast<std::uint64_t>(i),
                            static_cast<std::uint64_t>(step)};
      if (slot.matrix_route && cfg.optimizer == OptimizerKind::kDion) {
        DionConfig step_cfg = cfg.dion;
        step_cfg.learning_rate *= lr_mult;
        slot.dion.x = values[i];
        slot.dion = dion_step_centralized(slot.dion, grads[i], step_cfg, ctx,
                                          &ledger);
        values[i] = slot.dion.x;
      } else if (slot.matrix_route && cfg.optimizer == OptimizerKind::kMuon) {
        MuonConfig step_cfg = cfg.muon;
        step_cfg.learning_rate *= lr_mult;
        slot.muon.x = values[i];
        slot.muon = muon_step(slot.muon, grads[i], step_cfg, &ledger);
        values[i] = slot.muon.x;
      } else if (scalar_kind == ScalarAlgorithm::kAdamW) {
        ScalarOptimConfig step_cfg = cfg.adamw;
        step_cfg.base_learning_rate *= lr_mult;
        slot.adamw.x = values[i];
        slot.adamw = adamw_step(slot.adamw, grads[i], step_cfg, slot.param.spec);
        values[i] = slot.adamw.x;
      } else {
        ScalarOptimConfig step_cfg = cfg.lion;
        step_cfg.base_learning_rate *= lr_mult;
        slot.lion.x = values[i];
        slot.lion = lion_step(slot.lion, grads[i], step_cfg, slot.param.spec);
        values[i] = slot.lion.x;
      }
      if (!logged_delta && is_matrix_param(slot.param)) {
        first_matrix_delta = spectral_norm_estimate(subtract(values[i], before));
        logged_delta = true;
      }
    }

    const double loss = task->loss(values);
    all_finite = all_finite && std::isfinite(loss);
    metrics.row(step, loss, gradient_norm(grads), first_matrix_delta, ledger);
  }

  if (!cfg.checkpoint_dir.empty()) {
    Checkpoint checkpoint;
    checkpoint.seed = cfg.seed;
    checkpoint.step = static_cast<std::uint64_t>(cfg.steps);
    for (size_t i = 0; i < slots.size(); ++i) {
      const std::string& name = slots[i].param.name;
      checkpoint.entries.push_back({name, values[i]});
      if (slots[i].matrix_route && cfg.optimizer == OptimizerKind::kDion) {
        checkpoint.entries.push_back({name + ".m", slots[i].dion.m_buf});
        checkpoint.entries.push_back({name + ".q", slots[i].dion.q});
      } else if (slots[i].matrix_route &&
                 cfg.optimizer == OptimizerKind::kMuon) {
        checkpoint.entries.push_back({name + ".m", slots[i].muon.m_buf});
      } else if (scalar_kind == ScalarAlgorithm::kAdamW) {
        checkpoint.entries.push_back({name + ".m1", slots[i].adamw.m1});
        checkpoint.entries.push_back({name + ".m2", slots[i].adamw.m2});
      } else {
        checkpoint.entries.push_back({name + ".m", slots[i].lion.m_buf});
      }
    }
    report.checkpoint_path = resolve_output_path(cfg.checkpoint_dir);
    save_checkpoint(report.checkpoint_path, checkpoint);
  }

  report.final_loss = task->loss(values);
  report.pass = all_finite && std::isfinite(report.final_loss);
  if (!cfg.report_json.empty()) {
    write_json_file(resolve_output_path(cfg.report_json), report.to_json());
  }
  return report;
}

nlohmann::json RunReport::to_json() const {
  return {{"pass", pass},
          {"initial_loss", initial_loss},
          {"final_loss", final_loss},
          {"steps", steps},
          {"metrics_csv", metrics_path},
          {"checkpoint_dir", checkpoint_path}};
}

// --------------------------------------------------------------------------
// verify_equivalence.
// --------------------------------------------------------------------------

EquivalenceReport verify_equivalence(const EquivalenceConfig& cfg) {
  EquivalenceReport report;
  report.tolerance = cfg.tolerance;
  report.pass = true;

  DionConfig dion_cfg;
  dion_cfg.learning_rate = cfg.learning_rate;
  dion_cfg.momentum_decay = cfg.momentum_decay;
  dion_cfg.weight_decay = cfg.weight_decay;
  dion_cfg.rank = cfg.rank;

  const std::vector<MeshConfig> meshes =
      cfg.meshes.empty() ? default_equivalence_meshes() : cfg.meshes;
  const DenseMatrix x0 =
      RandomStream::derive(cfg.seed, "equiv-x0").normal_matrix(cfg.m, cfg.n);

  for (const MeshConfig& mesh_cfg : meshes) {
    const DeviceMesh mesh(mesh_cfg.dp, mesh_cfg.fs, mesh_cfg.tp);
    MeshEquivalenceResult result;
    result.mesh = mesh_cfg;
    result.pass = true;

    DionState central = dion_init(x0, dion_cfg, cfg.seed);
    if (cfg.transposed) {
      central.q = dion_initial_q(cfg.m, cfg.rank, cfg.seed, dion_cfg.epsilon_col);
    }
    DistDionState dist = dist_dion_init(
        x0, dion_cfg, cfg.seed, mesh,
        cfg.transposed ? DionPlacement::kTransposed : DionPlacement::kStandard);

    for (long long step = 0; step < cfg.steps; ++step) {
      // DP-distinct gradient slices whose sequential-fold mean is exactly
      // what the centralized run consumes.
      std::vector<DenseMatrix> replica_grads;
      for (int k = 0; k < mesh.dp; ++k) {
        replica_grads.push_back(
            RandomStream::derive(cfg.seed, "equiv-grad",
                                 static_cast<std::uint64_t>(step),
                                 static_cast<std::uint64_t>(k))
                .normal_matrix(cfg.m, cfg.n));
      }
      DenseMatrix mean_grad = replica_grads[0];
      for (size_t k = 1; k < replica_grads.size(); ++k) {
        for (index_t i = 0; i < mean_grad.size(); ++i) {
          mean_grad.data[i] += replica_grads[k].data[i];
        }
      }
      for (double& v : mean_grad.data) {
        v *= 1.0 / static_cast<double>(mesh.dp);
      }

      const StepContext ctx{cfg.seed, static_cast<std::uint64_t>(step)};
      central = cfg.transposed
                    ? dion_step_centralized_transposed(central, mean_grad,
                                                       dion_cfg, ctx)
                    : dion_step_centralized(central, mean_grad, dion_cfg, ctx);
      const ShardedMatrix grads =
          shard_dp_variants(replica_grads, dist.x.spec(), mesh);
      dist = cfg.transposed
                 ? dion_step_transposed(dist, grads, dion_cfg, ctx)
                 : dion_step_distributed(dist, grads, dion_cfg, ctx);

      const double x_divergence = max_abs_diff(assemble(dist.x), central.x);
      DenseMatrix momentum_mean = assemble_replica(dist.m_local, 0);
      for (int d = 1; d < mesh.dp; ++d) {
        const DenseMatrix next = assemble_replica(dist.m_local, d);
        for (index_t i = 0; i < momentum_mean.size(); ++i) {
          momentum_mean.data[i] += next.data[i];
        }
      }
      for (double& v : momentum_mean.data) {
        v *= 1.0 / static_cast<double>(mesh.dp);
      }
      const double momentum_divergence =
          max_abs_diff(momentum_mean, central.m_buf);

      result.max_x_divergence = std::max(result.max_x_divergence, x_divergence);
      result.max_momentum_divergence =
          std::max(result.max_momentum_divergence, momentum_divergence);
      if ((x_divergence >= cfg.tolerance ||
           momentum_divergence >= cfg.tolerance) &&
          result.first_failing_step < 0) {
        result.first_failing_step = step;
      }
    }

    result.pass = result.first_failing_step < 0;
    report.pass = report.pass && result.pass;
    report.meshes.push_back(result);
  }

  if (!cfg.report_json.empty()) {
    report.report_path = resolve_output_path(cfg.report_json);
    write_json_file(report.report_path, report.to_json());
  }
  return report;
}

nlohmann::json EquivalenceReport::to_json() const {
  nlohmann::json mesh_list = nlohmann::json::array();
  for (const MeshEquivalenceResult& result : meshes) {
    mesh_list.push_back({{"mesh", mesh_to_json(result.mesh)},
                         {"max_x_divergence", result.max_x_divergence},
                         {"max_momentum_divergence",
                          result.max_momentum_divergence},
                         {"first_failing_step", result.first_failing_step},
                         {"pass", result.pass}});
  }
  return {{"pass", pass}, {"tolerance", tolerance}, {"meshes", mesh_list}};
}

// --------------------------------------------------------------------------
// run_ablation.
// --------------------------------------------------------------------------

namespace {

enum class DionArm { kStandard, kSvdOrthogonalization, kNoErrorFeedback };

// Loss curve of centralized Dion (or an ablated variant) on the quadratic
// task. The SVD arm orthogonalizes the buffer directly via truncated SVD;
// the no-error-feedback arm compresses the plain momentum on top.
std::vector<double> dion_quadratic_curve(const AblationConfig& cfg,
                                         index_t rank, DionArm arm) {
  const std::unique_ptr<Task> task =
      make_quadratic_task(cfg.seed, cfg.m, cfg.n, cfg.p);
  std::vector<Parameter> params = task->initial_parameters();
  DenseMatrix x = params[0].value;

  DionConfig dion_cfg;
  dion_cfg.learning_rate = cfg.learning_rate;
  dion_cfg.momentum_decay = cfg.momentum_decay;
  dion_cfg.rank = rank;

  DionState state = dion_init(x, dion_cfg, cfg.seed);

  std::vector<double> losses;
  losses.reserve(cfg.steps);
  for (long long step = 0; step < cfg.steps; ++step) {
    const Schedule schedule{cfg.cooldown_fraction > 0.0
                                ? ScheduleKind::kCooldown
                                : ScheduleKind::kConstant,
                            cfg.cooldown_fraction};
    DionConfig step_cfg = dion_cfg;
    step_cfg.learning_rate *= schedule_multiplier(schedule, step, cfg.steps);
    const double update_scale =
        step_cfg.learning_rate *
        std::sqrt(static_cast<double>(cfg.m) / static_cast<double>(cfg.n));

    DenseMatrix grad = task->gradients({state.x}, 0, 1)[0];
    if (cfg.gradient_noise > 0.0) {
      grad = add_scaled(grad, cfg.gradient_noise,
                        RandomStream::derive(cfg.seed, "ablation-noise",
                                             static_cast<std::uint64_t>(step))
                            .normal_matrix(cfg.m, cfg.n));
    }
    const StepContext ctx{cfg.seed, static_cast<std::uint64_t>(step)};
    switch (arm) {
      case DionArm::kStandard:
        state = dion_step_centralized(state, grad, step_cfg, ctx);
        break;
      case DionArm::kSvdOrthogonalization: {
        const DenseMatrix b = add(state.m_buf, grad);
        const SvdResult svd = truncated_svd(b, rank);
        const DenseMatrix& p = svd.u;
        const DenseMatrix r_mat = matmul(b, p, /*transpose_a=*/true);
        state.m_buf = add_scaled(b, -(1.0 - step_cfg.momentum_decay),
                                 matmul(p, r_mat, false, true));
        state.q = column_normalize(r_mat, step_cfg.epsilon_col);
        state.x = add_scaled(state.x, -update_scale,
                             matmul(p, state.q, false, true));
        break;
      }
      case DionArm::kNoErrorFeedback: {
        state.m_buf = add_scaled(scale(state.m_buf, step_cfg.momentum_decay),
                                 1.0, grad);
        const PowerIterResult pr = power_iter1(state.m_buf, state.q);
        state.q = column_normalize(pr.r_mat, step_cfg.epsilon_col);
        state.x = add_scaled(state.x, -update_scale,
                             matmul(pr.p, state.q, false, true));
        break;
      }
    }
    losses.push_back(task->loss({state.x}));
  }
  return losses;
}

}  // namespace

AblationReport run_ablation(const AblationConfig& cfg) {
  AblationReport report;
  report.csv_path = resolve_output_path(cfg.csv_path);
  ensure_parent_dir(report.csv_path);
  std::ofstream csv(report.csv_path);
  if (!csv) throw Error(ErrorCode::kIo, "cannot write " + report.csv_path);
  csv << "arm,step,loss\n";

  auto emit = [&](const std::string& arm, const std::vector<double>& losses) {
    for (size_t step = 0; step < losses.size(); ++step) {
      csv << arm << "," << step << "," << format_double(losses[step]) << "\n";
    }
    report.arms.push_back({arm, losses.back()});
  };

  switch (cfg.kind) {
    case AblationKind::kSvdVsPowerIter: {
      const index_t rank = std::max<index_t>(1, cfg.n / 2);
      const std::vector<double> pi =
          dion_quadratic_curve(cfg, rank, DionArm::kStandard);
      const std::vector<double> svd =
          dion_quadratic_curve(cfg, rank, DionArm::kSvdOrthogonalization);
      emit("power_iter", pi);
      emit("svd", svd);
      const double worse = std::max(pi.back(), svd.back());
      const bool pass = std::abs(pi.back() - svd.back()) <= 0.05 * worse;
      report.checks.push_back(
          {"svd and power-iteration arms within 5% final loss at r=n/2",
           pass});
      break;
    }
    case AblationKind::kErrorFeedback: {
      const index_t rank = std::max<index_t>(1, cfg.n / 4);
      const std::vector<double> on =
          dion_quadratic_curve(cfg, rank, DionArm::kStandard);
      const std::vector<double> off =
          dion_quadratic_curve(cfg, rank, DionArm::kNoErrorFeedback);
      emit("error_feedback_on", on);
      emit("error_feedback_off", off);
      report.checks.push_back(
          {"error feedback off strictly worse at r=n/4",
           off.back() > on.back()});
      break;
    }
    case AblationKind::kRankSweep: {
      std::vector<index_t> ranks;
      for (index_t divisor : {1, 2, 4, 8, 16}) {
        const index_t rank = cfg.n / divisor;
        if (rank >= 1 &&
            (ranks.empty() || ranks.back() != rank)) {
          ranks.push_back(rank);
        }
      }
      std::vector<double> finals;
      for (index_t rank : ranks) {
        const std::vector<double> losses =
            dion_quadratic_curve(cfg, rank, DionArm::kStandard);
        emit("rank_" + std::to_string(rank), losses);
        finals.push_back(losses.back());
      }
      bool monotone = true;
      for (size_t i = 0; i + 1 < finals.size(); ++i) {
        // Larger rank may not lose to the next smaller rank by more than 2%.
        if (finals[i] > finals[i + 1] * 1.02) monotone = false;
      }
      report.checks.push_back(
          {"final loss nonincreasing in rank within a 2% band", monotone});
      break;
    }
  }

  report.pass = true;
  for (const AblationCheck& check : report.checks) {
    report.pass = report.pass && check.pass;
  }
  if (!cfg.report_json.empty()) {
    write_json_file(resolve_output_path(cfg.report_json), report.to_json());
  }
  return report;
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json arm_list = nlohmann::json::array();
  for (const AblationArm& arm : arms) {
    arm_list.push_back({{"arm", arm.name}, {"final_loss", arm.final_loss}});
  }
  nlohmann::json check_list = nlohmann::json::array();
  for (const AblationCheck& check : checks) {
    check_list.push_back({{"check", check.description}, {"pass", check.pass}});
  }
  return {{"pass", pass},
          {"arms", arm_list},
          {"checks", check_list},
          {"csv", csv_path}};
}

// --------------------------------------------------------------------------
// report_costs.
// --------------------------------------------------------------------------

CostReport report_costs(const CostReportConfig& cfg) {
  CostReport report;
  report.pass = true;
  nlohmann::json shapes = nlohmann::json::array();

  for (const CostShape& shape : cfg.shapes) {
    const DeviceMesh mesh(shape.mesh.dp, shape.mesh.fs, shape.mesh.tp);
    const CostModelInput input{shape.m,       shape.n,      shape.r,
                               shape.mesh.dp, shape.mesh.fs, shape.mesh.tp,
                               shape.oversampling_factor};
    const CostPrediction predicted = predict_comm(input);
    const std::int64_t devices = mesh.device_count();

    const DenseMatrix x0 =
        RandomStream::derive(cfg.seed, "cost-x0").normal_matrix(shape.m, shape.n);
    std::vector<DenseMatrix> grads;
    for (int k = 0; k < mesh.dp; ++k) {
      grads.push_back(RandomStream::derive(cfg.seed, "cost-grad",
                                           static_cast<std::uint64_t>(k))
                          .normal_matrix(shape.m, shape.n));
    }

    // One measured Dion step.
    DionConfig dion_cfg;
    dion_cfg.learning_rate = 0.01;
    dion_cfg.rank = shape.r;
    dion_cfg.oversampling_factor = shape.oversampling_factor;
    CostLedger dion_ledger;
    {
      DistDionState state = dist_dion_init(x0, dion_cfg, cfg.seed, mesh);
      dion_step_distributed(state,
                            shard_dp_variants(grads, state.x.spec(), mesh),
                            dion_cfg, {cfg.seed, 0}, &dion_ledger);
    }

    // One measured Muon step and one measured Adam step.
    CostLedger muon_ledger;
    {
      MuonConfig muon_cfg;
      DistMuonState state = dist_muon_init(x0, mesh);
      muon_step_distributed(state,
                            shard_dp_variants(grads, state.x.spec(), mesh),
                            muon_cfg, &muon_ledger);
    }
    CostLedger adam_ledger;
    {
      ScalarOptimConfig adam_cfg = adamw_defaults();
      adam_cfg.use_scale_factor = false;
      DistAdamState state = dist_adam_init(x0, mesh);
      adamw_step_distributed(state,
                             shard_dp_variants(grads, state.x.spec(), mesh),
                             adam_cfg,
                             ParamSpec{ParamKind::kWeight, shape.m, shape.n},
                             &adam_ledger);
    }

    const std::int64_t dion_matmul_per_device =
        dion_ledger.matmul_flops() / devices;
    const std::int64_t muon_flops_per_device = muon_ledger.flops() / devices;
    const double dion_total_per_device =
        static_cast<double>(dion_ledger.flops()) / static_cast<double>(devices);

    const bool comm_exact =
        dion_ledger.dp_elements() == predicted.dion.dp_elements &&
        dion_ledger.fs_elements() == predicted.dion.fs_elements &&
        dion_ledger.tp_elements() == predicted.dion.tp_elements &&
        muon_ledger.dp_elements() == predicted.muon.dp_elements &&
        muon_ledger.fs_elements() == predicted.muon.fs_elements &&
        muon_ledger.tp_elements() == predicted.muon.tp_elements &&
        adam_ledger.dp_elements() == predicted.adam.dp_elements &&
        adam_ledger.fs_elements() == predicted.adam.fs_elements &&
        adam_ledger.tp_elements() == predicted.adam.tp_elements;
    const bool matmul_exact =
        dion_ledger.matmul_flops() % devices == 0 &&
        dion_matmul_per_device ==
            8 * shape.m * shape.n * shape.r / (mesh.fs * mesh.tp);
    const bool muon_flops_exact =
        muon_ledger.flops() % devices == 0 &&
        muon_flops_per_device ==
            static_cast<std::int64_t>(predict_muon_flops(shape.m, shape.n));
    const double dion_flops_rel_err =
        std::abs(dion_total_per_device - predicted.dion_flops_per_device) /
        predicted.dion_flops_per_device;
    const index_t k = dion_sketch_size(shape.r, shape.oversampling_factor);
    const bool ideal_sketch = 5 * shape.r == 4 * k;
    const bool flops_close = !ideal_sketch || dion_flops_rel_err < 0.01;

    const bool shape_pass =
        comm_exact && matmul_exact && muon_flops_exact && flops_close;
    report.pass = report.pass && shape_pass;

    shapes.push_back(
        {{"m", shape.m},
         {"n", shape.n},
         {"r", shape.r},
         {"mesh", mesh_to_json(shape.mesh)},
         {"predicted",
          {{"dion",
            {{"dp_elements", predicted.dion.dp_elements},
             {"fs_elements", predicted.dion.fs_elements},
             {"tp_elements", predicted.dion.tp_elements},
             {"tp_elements_idealized", predicted.dion_tp_elements_idealized},
             {"flops_per_device", predicted.dion_flops_per_device},
             {"memory_elements", predicted.dion_memory_elements}}},
           {"muon",
            {{"dp_elements", predicted.muon.dp_elements},
             {"fs_elements", predicted.muon.fs_elements},
             {"tp_elements", predicted.muon.tp_elements},
             {"flops", predicted.muon_flops},
             {"memory_elements", predicted.muon_memory_elements}}},
           {"adam",
            {{"dp_elements", predicted.adam.dp_elements},
             {"fs_elements", predicted.adam.fs_elements},
             {"tp_elements", predicted.adam.tp_elements},
             {"memory_elements", predicted.adam_memory_elements}}}}},
         {"measured",
          {{"dion",
            {{"dp_elements", dion_ledger.dp_elements()},
             {"fs_elements", dion_ledger.fs_elements()},
             {"tp_elements", dion_ledger.tp_elements()},
             {"matmul_flops_per_device", dion_matmul_per_device},
             {"flops_per_device", dion_total_per_device}}},
           {"muon",
            {{"dp_elements", muon_ledger.dp_elements()},
             {"fs_elements", muon_ledger.fs_elements()},
             {"tp_elements", muon_ledger.tp_elements()},
             {"flops_per_device", muon_flops_per_device}}},
           {"adam",
            {{"dp_elements", adam_ledger.dp_elements()},
             {"fs_elements", adam_ledger.fs_elements()},
             {"tp_elements", adam_ledger.tp_elements()}}}}},
         {"exact_match",
          {{"communication", comm_exact},
           {"dion_matmul_flops", matmul_exact},
           {"muon_flops", muon_flops_exact},
           {"dion_total_flops_within_1pct", flops_close}}},
         {"pass", shape_pass}});
  }

  report.body = {{"pass", report.pass}, {"shapes", shapes}};
  if (!cfg.report_json.empty()) {
    report.report_path = resolve_output_path(cfg.report_json);
    write_json_file(report.report_path, report.body);
  }
  return report;
}

}  // namespace dion
