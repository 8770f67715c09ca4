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

// End-to-end acceptance suite. Runs every gate at its stated tolerance and
// prints one PASS/FAIL line per criterion; exits nonzero when any fails.
// argv[1] (optional): path to the dionsim CLI binary, used by the
// determinism criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "accounting.hpp"
#include "checkpoint.hpp"
#include "dist.hpp"
#include "runner.hpp"
#include "rng.hpp"

using namespace dion;

namespace {

int g_failures = 0;

void criterion(int number, const std::string& name, bool pass,
               const std::string& detail = "") {
  std::printf("%s criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", number,
              name.c_str(), detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string temp_dir(const std::string& tag) {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / ("dionsim_accept_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "<missing:" + path + ">";
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string fmt(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.3g", v);
  return buffer;
}

// ---------------------------------------------------------------------------
// Criteria 1 and 3: distributed-centralized equivalence and decoupled momentum.
// ---------------------------------------------------------------------------

void run_equivalence_criteria() {
  const auto start = std::chrono::steady_clock::now();
  EquivalenceConfig cfg;  // 16x12, r=4, 20 steps, all eight {1,2}^3 meshes
  cfg.report_json.clear();
  const EquivalenceReport report = verify_equivalence(cfg);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();

  double worst_x = 0.0, worst_m = 0.0;
  bool x_ok = true, m_ok = true;
  for (const MeshEquivalenceResult& mesh : report.meshes) {
    worst_x = std::max(worst_x, mesh.max_x_divergence);
    worst_m = std::max(worst_m, mesh.max_momentum_divergence);
    x_ok = x_ok && mesh.max_x_divergence < 1e-9;
    m_ok = m_ok && mesh.max_momentum_divergence < 1e-9;
  }
  criterion(1,
            "distributed Dion equals centralized Dion on all eight {1,2}^3 "
            "meshes (16x12, r=4, "
            "20 steps, DP-distinct gradients, <1e-9)",
            x_ok && report.meshes.size() == 8 && elapsed < 10.0,
            "max |X_dist - X_central| = " + fmt(worst_x) + ", runtime " +
                fmt(elapsed) + " s");
  criterion(3,
            "decoupled momentum: DP-mean of local momenta matches the "
            "centralized momentum (<1e-9)",
            m_ok, "max divergence = " + fmt(worst_m));
}

// ---------------------------------------------------------------------------
// Criterion 2: shard-exactness of the distributed orthogonalization.
// ---------------------------------------------------------------------------

void run_orthogonalization_equivalence_criterion() {
  const index_t m = 16, r = 4;
  double worst = 0.0;
  bool ok = true;
  for (int tp : {1, 2, 4}) {
    const DeviceMesh mesh(1, 1, tp);
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
      const DenseMatrix p =
          RandomStream::derive(trial, "ortho-equiv-input").normal_matrix(m, r);
      const SketchMatrix sketch = make_sketch(
          trial, "ortho-equiv-sketch", 0, dion_sketch_size(r, 1.25), m);
      const DenseMatrix centralized = randomized_cholesky_qr(p, sketch);
      const ShardedMatrix sharded =
          shard(p, ShardSpec{m, r, MeshAxis::kTp, std::nullopt}, mesh);
      const ShardedMatrix distributed =
          distributed_orthogonalize(sharded, sketch);
      const double diff = max_abs_diff(assemble(distributed), centralized);
      worst = std::max(worst, diff);
      ok = ok && diff < 1e-10;
    }
  }
  criterion(2,
            "distributed orthogonalization is shard-exact "
            "vs centralized randomized Cholesky QR (TP in {1,2,4}, 50 seeds, "
            "<1e-10)",
            ok, "max shard deviation = " + fmt(worst));
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5: communication and FLOP exactness.
// ---------------------------------------------------------------------------

struct SweepCase {
  index_t m, n, r;
  int dp, fs, tp;
};

void run_cost_criteria() {
  const std::vector<SweepCase> sweep = {
      {16, 12, 4, 2, 2, 2}, {16, 12, 4, 1, 2, 2}, {16, 12, 4, 2, 1, 2},
      {16, 12, 4, 2, 2, 1}, {32, 16, 8, 2, 2, 4}, {32, 16, 8, 1, 1, 4},
      {8, 8, 4, 2, 2, 1},   {8, 4, 2, 2, 2, 2},   {24, 12, 4, 1, 3, 2},
      {16, 8, 4, 4, 1, 2},  {64, 16, 8, 2, 4, 2}, {32, 8, 8, 1, 2, 4},
  };

  bool comm_ok = true, matmul_ok = true, total_ok = true;
  std::string first_comm_fail;
  for (const SweepCase& tc : sweep) {
    const DeviceMesh mesh(tc.dp, tc.fs, tc.tp);
    DionConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.rank = tc.r;
    const DenseMatrix x0 =
        RandomStream::derive(91, "accept-x0").normal_matrix(tc.m, tc.n);
    DistDionState state = dist_dion_init(x0, cfg, 91, mesh);
    std::vector<DenseMatrix> grads;
    for (int k = 0; k < tc.dp; ++k) {
      grads.push_back(RandomStream::derive(91, "accept-grad",
                                           static_cast<std::uint64_t>(k))
                          .normal_matrix(tc.m, tc.n));
    }
    CostLedger ledger;
    dion_step_distributed(state,
                          shard_dp_variants(grads, state.x.spec(), mesh), cfg,
                          {91, 0}, &ledger);
    const CostPrediction pred = predict_comm(
        {tc.m, tc.n, tc.r, tc.dp, tc.fs, tc.tp, cfg.oversampling_factor});
    const bool exact = ledger.dp_elements() == pred.dion.dp_elements &&
                       ledger.fs_elements() == pred.dion.fs_elements &&
                       ledger.tp_elements() == pred.dion.tp_elements;
    if (!exact && first_comm_fail.empty()) {
      first_comm_fail = std::to_string(tc.m) + "x" + std::to_string(tc.n);
    }
    comm_ok = comm_ok && exact;

    const std::int64_t devices = mesh.device_count();
    matmul_ok = matmul_ok && ledger.matmul_flops() % devices == 0 &&
                ledger.matmul_flops() / devices ==
                    8 * tc.m * tc.n * tc.r / (tc.fs * tc.tp);

    const index_t k = dion_sketch_size(tc.r, cfg.oversampling_factor);
    if (5 * tc.r == 4 * k) {
      const double measured =
          static_cast<double>(ledger.flops()) / static_cast<double>(devices);
      const double predicted = predict_dion_flops(
          {tc.m, tc.n, tc.r, tc.dp, tc.fs, tc.tp, cfg.oversampling_factor});
      total_ok = total_ok && std::abs(measured - predicted) / predicted < 0.01;
    } else {
      // Non-integral 1.25r: the idealized formula is off by construction;
      // hold the exact integer-k closed form instead.
      const index_t mj = tc.m / tc.tp;
      const std::int64_t expect_fact =
          2 * k * mj * tc.r +
          std::llround(2.0 * k * tc.r * tc.r -
                       (2.0 / 3.0) * tc.r * tc.r * tc.r) +
          4 * mj * tc.r * tc.r + std::llround(tc.r * tc.r * tc.r / 3.0);
      total_ok = total_ok && ledger.factorization_flops() % devices == 0 &&
                 ledger.factorization_flops() / devices == expect_fact;
    }
  }

  // Muon-mode and Adam-mode ledgers against their table rows.
  bool baseline_ok = true;
  for (const SweepCase& tc :
       std::vector<SweepCase>{{16, 12, 0, 2, 2, 2}, {32, 16, 0, 2, 4, 2}}) {
    const DeviceMesh mesh(tc.dp, tc.fs, tc.tp);
    const DenseMatrix x0 =
        RandomStream::derive(92, "accept-x0").normal_matrix(tc.m, tc.n);
    std::vector<DenseMatrix> grads;
    for (int k = 0; k < tc.dp; ++k) {
      grads.push_back(RandomStream::derive(92, "accept-grad",
                                           static_cast<std::uint64_t>(k))
                          .normal_matrix(tc.m, tc.n));
    }
    CostLedger muon_ledger;
    {
      MuonConfig muon_cfg;
      DistMuonState state = dist_muon_init(x0, mesh);
      muon_step_distributed(state,
                            shard_dp_variants(grads, state.x.spec(), mesh),
                            muon_cfg, &muon_ledger);
    }
    const std::int64_t mn = tc.m * tc.n;
    baseline_ok = baseline_ok && muon_ledger.dp_elements() == mn &&
                  muon_ledger.fs_elements() == mn &&
                  muon_ledger.tp_elements() == mn;
    const std::int64_t devices = mesh.device_count();
    baseline_ok =
        baseline_ok && muon_ledger.flops() % devices == 0 &&
        muon_ledger.flops() / devices ==
            20 * tc.m * tc.n * tc.n + 10 * tc.n * tc.n * tc.n;

    CostLedger adam_ledger;
    {
      ScalarOptimConfig adam_cfg = adamw_defaults();
      adam_cfg.use_scale_factor = false;
      DistAdamState state = dist_adam_init(x0, mesh);
      adamw_step_distributed(state,
                             shard_dp_variants(grads, state.x.spec(), mesh),
                             adam_cfg,
                             ParamSpec{ParamKind::kWeight, tc.m, tc.n},
                             &adam_ledger);
    }
    baseline_ok = baseline_ok && adam_ledger.dp_elements() == mn &&
                  adam_ledger.fs_elements() == 0 &&
                  adam_ledger.tp_elements() == 0;
  }

  criterion(4,
            "communication exactness: measured ledgers equal predict_comm "
            "over 12 (m,n,r,mesh) cases; Muon mn/mn/mn and Adam mn/0/0 rows "
            "hold",
            comm_ok && baseline_ok,
            comm_ok ? "all integer-exact" : "first mismatch " + first_comm_fail);

  bool inequality_ok = true;
  for (index_t m = 1; m <= 64; ++m) {
    for (index_t n = 1; n <= m; ++n) {
      const double dion = 14.5 * m * n * n + (13.0 / 6.0) * n * n * n;
      const double muon = 20.0 * m * n * n + 10.0 * n * n * n;
      inequality_ok = inequality_ok && dion < muon;
    }
  }
  criterion(5,
            "FLOP model: per-device matmul work equals 8mnr/(FS*TP); totals "
            "within 1% of the closed form; Muon equals 20mn^2+10n^3; "
            "worst-case inequality holds on the grid",
            matmul_ok && total_ok && inequality_ok && baseline_ok, "");
}

// ---------------------------------------------------------------------------
// Criterion 6: orthonormality suite.
// ---------------------------------------------------------------------------

void run_orthonormality_criterion() {
  const std::vector<std::pair<index_t, index_t>> shapes = {
      {16, 4}, {24, 6}, {32, 8}, {48, 12}, {64, 16}, {20, 4}, {40, 8}, {64, 4}};
  double worst_rcqr = 0.0, worst_hh = 0.0;
  bool ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto [m, r] = shapes[static_cast<size_t>(trial) % shapes.size()];
    const std::uint64_t seed = 7000 + static_cast<std::uint64_t>(trial);
    const DenseMatrix p =
        RandomStream::derive(seed, "ortho-suite").normal_matrix(m, r);
    const SketchMatrix sketch =
        make_sketch(seed, "ortho-sketch", 0, dion_sketch_size(r, 1.25), m);
    const DenseMatrix out = randomized_cholesky_qr(p, sketch);
    const DenseMatrix gram = matmul(out, out, /*transpose_a=*/true);
    const double err =
        frobenius_norm(subtract(gram, DenseMatrix::identity(r)));
    worst_rcqr = std::max(worst_rcqr, err);
    ok = ok && err < 1e-8;

    const DenseMatrix q = householder_qr(p).q;
    const DenseMatrix gram_hh = matmul(q, q, /*transpose_a=*/true);
    const double err_hh =
        frobenius_norm(subtract(gram_hh, DenseMatrix::identity(r)));
    worst_hh = std::max(worst_hh, err_hh);
    ok = ok && err_hh < 1e-10;
  }
  criterion(6,
            "orthonormality: 1000 randomized-Cholesky-QR calls < 1e-8 and "
            "1000 Householder QR calls < 1e-10 on shapes up to 64x16",
            ok,
            "worst rcQR " + fmt(worst_rcqr) + ", worst Householder " +
                fmt(worst_hh));
}

// ---------------------------------------------------------------------------
// Criterion 7: ablation directionality.
// ---------------------------------------------------------------------------

void run_ablation_criterion() {
  const std::string dir = temp_dir("ablate");
  bool ok = true;
  std::string detail;
  for (const char* kind :
       {"svd_vs_poweriter", "error_feedback", "rank_sweep"}) {
    AblationConfig cfg = parse_ablation_config({{"kind", kind}});
    cfg.csv_path = dir + "/" + std::string(kind) + ".csv";
    const AblationReport report = run_ablation(cfg);
    ok = ok && report.pass;
    for (const AblationArm& arm : report.arms) {
      detail += std::string(detail.empty() ? "" : ", ") + arm.name + "=" +
                fmt(arm.final_loss);
    }
  }
  criterion(7,
            "ablation directionality: SVD vs power iteration within 5%; "
            "error-feedback-off strictly worse at r=n/4; rank sweep "
            "monotone within 2%",
            ok, detail);
}

// ---------------------------------------------------------------------------
// Criterion 8: scale-factor table.
// ---------------------------------------------------------------------------

void run_scale_factor_criterion() {
  bool ok = lr_scale_factor({ParamKind::kUnembedding, 1, 1024}) == 0.03125;
  for (index_t d_out : {16, 64, 256, 768, 1024, 4096}) {
    for (index_t d_in : {16, 64, 256, 768, 1024, 4096}) {
      ok = ok && lr_scale_factor({ParamKind::kWeight, d_out, d_in}) ==
                     std::sqrt(static_cast<double>(d_out) /
                               static_cast<double>(d_in));
      ok = ok && lr_scale_factor({ParamKind::kUnembedding, 1, d_in}) ==
                     1.0 / std::sqrt(static_cast<double>(d_in));
      ok = ok && lr_scale_factor({ParamKind::kBias, d_out, 1}) == 1.0;
      ok = ok && lr_scale_factor({ParamKind::kEmbedding, d_out, 1}) == 1.0;
      ok = ok && lr_scale_factor({ParamKind::kNormalization, 1, 1}) == 1.0;
    }
  }
  criterion(8,
            "scale factors reproduce the parameter-type table exactly, "
            "including unembedding 1/sqrt(1024) = 0.03125",
            ok, "");
}

// ---------------------------------------------------------------------------
// Criterion 9: Double Dion.
// ---------------------------------------------------------------------------

void run_double_dion_criterion() {
  const index_t m = 16, n = 8;
  DoubleDionConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.r1 = 2;
  cfg.r2 = 4;
  const std::uint64_t seed = 31;
  const DeviceMesh mesh(2, 2, 2);
  const DenseMatrix x0 =
      RandomStream::derive(seed, "ddion-x0").normal_matrix(m, n);

  bool sync_ok = true, ledger_ok = true;
  DoubleDionState state = double_dion_init(x0, cfg, seed, mesh);
  for (std::uint64_t step = 0; step < 20; ++step) {
    std::vector<DenseMatrix> grads;
    for (int k = 0; k < mesh.dp; ++k) {
      grads.push_back(RandomStream::derive(seed, "ddion-grad", step,
                                           static_cast<std::uint64_t>(k))
                          .normal_matrix(m, n));
    }
    CostLedger ledger;
    state = double_dion_step(state,
                             shard_dp_variants(grads, state.x.spec(), mesh),
                             cfg, {seed, step}, &ledger);
    sync_ok = sync_ok && dp_replicas_byte_identical(state.x) &&
              dp_replicas_byte_identical(state.m2) &&
              dp_replicas_byte_identical(state.q2);
    ledger_ok = ledger_ok && ledger.dp_elements() == (m + n) * cfg.r1;
  }

  // Delayed causality probe: scaling the final gradient cannot change the
  // final weights when stage 2 consumes the delayed factors.
  cfg.delayed = true;
  const DeviceMesh probe_mesh(2, 1, 1);
  auto run_delayed = [&](double last_scale) {
    DoubleDionState s = double_dion_init(x0, cfg, seed, probe_mesh);
    for (std::uint64_t step = 0; step < 6; ++step) {
      std::vector<DenseMatrix> grads;
      for (int k = 0; k < probe_mesh.dp; ++k) {
        DenseMatrix g = RandomStream::derive(seed, "ddion-grad", step,
                                             static_cast<std::uint64_t>(k))
                            .normal_matrix(m, n);
        if (step == 5) g = scale(g, last_scale);
        grads.push_back(g);
      }
      s = double_dion_step(s, shard_dp_variants(grads, s.x.spec(), probe_mesh),
                           cfg, {seed, step});
    }
    return assemble(s.x);
  };
  const bool causal_ok = bytes_equal(run_delayed(1.0), run_delayed(1000.0));

  criterion(9,
            "double dion: stage-2 state byte-identical across DP for 20 "
            "steps; DP traffic equals (m+n)r1; delayed mode ignores the "
            "current gradient",
            sync_ok && ledger_ok && causal_ok, "");
}

// ---------------------------------------------------------------------------
// Criterion 10: CLI determinism.
// ---------------------------------------------------------------------------

int run_cli(const std::string& cli, const std::string& args) {
  const std::string command = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
  return std::system(command.c_str());
}

void run_cli_determinism_criterion(const char* cli_path) {
  if (cli_path == nullptr) {
    criterion(10, "CLI determinism", false, "CLI path not supplied");
    return;
  }
  const std::string cli = cli_path;
  const std::string dir = temp_dir("cli");
  const std::string cfg_dir = dir + "/cfg";
  std::filesystem::create_directories(cfg_dir);

  // Config files shared by both invocations of each command.
  {
    std::ofstream out(cfg_dir + "/run.json");
    out << R"({"task":"quadratic","optimizer":"dion_distributed",
"mesh":{"dp":2,"fs":2,"tp":2},"steps":12,"seed":5,
"shape":{"m":16,"n":12,"p":32},"dion":{"learning_rate":0.05,"rank":4},
"out":{"metrics_csv":")" << dir
        << R"(/run_metrics.csv","report_json":")" << dir
        << R"(/run_report.json","checkpoint_dir":")" << dir << R"(/ckpt"}})";
  }
  {
    std::ofstream out(cfg_dir + "/equiv.json");
    out << R"({"steps":5,"seed":3,"meshes":[{"dp":2,"fs":2,"tp":2}],)"
        << R"("report_json":")" << dir << R"(/equiv.json"})";
  }
  {
    std::ofstream out(cfg_dir + "/ablate.json");
    out << R"({"kind":"rank_sweep","steps":40,"seed":5,"csv_path":")" << dir
        << R"(/ablate.csv","report_json":")" << dir << R"(/ablate.json"})";
  }
  {
    std::ofstream out(cfg_dir + "/costs.json");
    out << R"({"seed":4,"shapes":[{"m":16,"n":12,"r":4,)"
        << R"("mesh":{"dp":2,"fs":2,"tp":2}}],"report_json":")" << dir
        << R"(/costs.json"})";
  }

  struct Command {
    std::string args;
    std::vector<std::string> outputs;
  };
  const std::vector<Command> commands = {
      {"run --config " + cfg_dir + "/run.json",
       {dir + "/run_metrics.csv", dir + "/run_report.json",
        dir + "/ckpt/manifest.json", dir + "/ckpt/x.bin",
        dir + "/ckpt/m.dp0.bin", dir + "/ckpt/m.dp1.bin", dir + "/ckpt/q.bin"}},
      {"verify-equivalence --config " + cfg_dir + "/equiv.json",
       {dir + "/equiv.json"}},
      {"ablate --config " + cfg_dir + "/ablate.json",
       {dir + "/ablate.csv", dir + "/ablate.json"}},
      {"report-costs --config " + cfg_dir + "/costs.json",
       {dir + "/costs.json"}},
  };

  bool ok = true;
  std::string detail;
  for (const Command& command : commands) {
    if (run_cli(cli, command.args) != 0) {
      ok = false;
      detail = "command failed: " + command.args;
      break;
    }
    std::vector<std::string> first;
    for (const std::string& path : command.outputs) {
      first.push_back(read_file(path));
    }
    if (run_cli(cli, command.args) != 0) {
      ok = false;
      detail = "re-run failed: " + command.args;
      break;
    }
    for (size_t i = 0; i < command.outputs.size(); ++i) {
      if (read_file(command.outputs[i]) != first[i]) {
        ok = false;
        detail = "output differs: " + command.outputs[i];
      }
    }
  }
  criterion(10,
            "every CLI command re-run with the same config and seed "
            "produces byte-identical outputs",
            ok, detail);
}

// ---------------------------------------------------------------------------
// Criterion 11: replicated-overhead arithmetic.
// ---------------------------------------------------------------------------

void run_overhead_criterion() {
  const double seconds = estimate_replicated_overhead_seconds(1.0, 24.0, 1e6);
  const double days = seconds_to_days(seconds);
  const bool ok = seconds == 2.4e7 && std::llround(days) == 278 &&
                  std::llround(matrices_per_stage(126, 3, 16)) == 24;
  criterion(11,
            "replicated-overhead arithmetic: 24 s/step over 1e6 steps is "
            "2.4e7 s, about 278 days",
            ok, fmt(seconds) + " s = " + fmt(days) + " days");
}

}  // namespace

int main(int argc, char** argv) {
  run_equivalence_criteria();   // criteria 1 and 3
  run_orthogonalization_equivalence_criterion();  // criterion 2
  run_cost_criteria();          // criteria 4 and 5
  run_orthonormality_criterion();
  run_ablation_criterion();
  run_scale_factor_criterion();
  run_double_dion_criterion();
  run_cli_determinism_criterion(argc > 1 ? argv[1] : nullptr);
  run_overhead_criterion();

  if (g_failures == 0) {
    std::printf("acceptance: all criteria passed\n");
    return 0;
  }
  std::printf("acceptance: %d criteria FAILED\n", g_failures);
  return 1;
}
