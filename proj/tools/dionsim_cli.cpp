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

// Command-line front end. All functionality goes through the C API in
// dionsim/dionsim.h; this file only assembles configuration JSON from a file
// plus flag overrides and reports the outcome.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dionsim/dionsim.h"

namespace {

using nlohmann::json;

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) {
    throw CLI::ValidationError("--config", "cannot open " + path);
  }
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw CLI::ValidationError("--config", path + ": " + e.what());
  }
}

struct CommonFlags {
  std::string config_path;
  long long seed = -1;  // -1: keep the config's seed
  std::string out_path;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON configuration file");
    cmd->add_option("--seed", seed, "override the run seed");
    cmd->add_option("--out", out_path,
                    "override the primary output path (metrics CSV for run, "
                    "curves CSV for ablate, report JSON otherwise)");
  }
};

int execute(const char* name,
            dionsim_status (*entry)(dionsim_context*, const char*,
                                    dionsim_report**),
            const json& config) {
  dionsim_context* ctx = dionsim_context_create();
  dionsim_report* report = nullptr;
  const std::string config_text = config.dump();
  const dionsim_status status = entry(ctx, config_text.c_str(), &report);
  int exit_code = 1;
  if (status != DIONSIM_OK) {
    std::cerr << name << ": error: " << dionsim_last_error(ctx) << "\n";
  } else {
    std::cout << dionsim_report_json(report) << "\n";
    const bool passed = dionsim_report_passed(report) != 0;
    std::cout << (passed ? "PASS" : "FAIL") << "\n";
    exit_code = passed ? 0 : 1;
  }
  dionsim_report_destroy(report);
  dionsim_context_destroy(ctx);
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "dionsim: deterministic desk-scale Dion optimizer simulator.\n"
      "Relative output paths are placed under $DION_OUT_DIR when set."};
  app.require_subcommand(1);

  // run
  CLI::App* run = app.add_subcommand("run", "train a toy task");
  CommonFlags run_flags;
  run_flags.attach(run);
  std::string task, optimizer, report_path, checkpoint_dir;
  long long steps = -1;
  std::vector<int> mesh_axes;
  run->add_option("--task", task,
                  "quadratic | matrix_factorization | mlp_blobs");
  run->add_option("--optimizer", optimizer,
                  "dion | dion_distributed | dion_transposed | double_dion | "
                  "muon | adamw | lion_only");
  run->add_option("--steps", steps, "number of optimizer steps");
  run->add_option("--mesh", mesh_axes, "mesh sizes: dp fs tp")->expected(3);
  run->add_option("--report", report_path, "write a JSON run report here");
  run->add_option("--checkpoint-dir", checkpoint_dir,
                  "write a final state checkpoint here");

  // verify-equivalence
  CLI::App* verify = app.add_subcommand(
      "verify-equivalence",
      "run distributed and centralized Dion side by side");
  CommonFlags verify_flags;
  verify_flags.attach(verify);
  std::string variant;
  verify->add_option("--variant", variant, "standard | transposed");

  // ablate
  CLI::App* ablate = app.add_subcommand("ablate", "run an ablation study");
  CommonFlags ablate_flags;
  ablate_flags.attach(ablate);
  std::string kind, ablate_report;
  ablate->add_option("--kind", kind,
                     "svd_vs_poweriter | error_feedback | rank_sweep");
  ablate->add_option("--report", ablate_report, "write a JSON report here");

  // report-costs
  CLI::App* costs = app.add_subcommand(
      "report-costs", "predicted vs measured communication and FLOPs");
  CommonFlags costs_flags;
  costs_flags.attach(costs);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      json config = load_config_file(run_flags.config_path);
      if (run_flags.seed >= 0) config["seed"] = run_flags.seed;
      if (!task.empty()) config["task"] = task;
      if (!optimizer.empty()) config["optimizer"] = optimizer;
      if (steps >= 0) config["steps"] = steps;
      if (!mesh_axes.empty()) {
        config["mesh"] =
            json{{"dp", mesh_axes[0]}, {"fs", mesh_axes[1]}, {"tp", mesh_axes[2]}};
      }
      if (!run_flags.out_path.empty()) {
        config["out"]["metrics_csv"] = run_flags.out_path;
      }
      if (!report_path.empty()) config["out"]["report_json"] = report_path;
      if (!checkpoint_dir.empty()) {
        config["out"]["checkpoint_dir"] = checkpoint_dir;
      }
      return execute("run", dionsim_run_task, config);
    }
    if (verify->parsed()) {
      json config = load_config_file(verify_flags.config_path);
      if (verify_flags.seed >= 0) config["seed"] = verify_flags.seed;
      if (!variant.empty()) config["variant"] = variant;
      if (!verify_flags.out_path.empty()) {
        config["report_json"] = verify_flags.out_path;
      }
      return execute("verify-equivalence", dionsim_verify_equivalence, config);
    }
    if (ablate->parsed()) {
      json config = load_config_file(ablate_flags.config_path);
      if (ablate_flags.seed >= 0) config["seed"] = ablate_flags.seed;
      if (!kind.empty()) config["kind"] = kind;
      if (!ablate_flags.out_path.empty()) {
        config["csv_path"] = ablate_flags.out_path;
      }
      if (!ablate_report.empty()) config["report_json"] = ablate_report;
      return execute("ablate", dionsim_run_ablation, config);
    }
    if (costs->parsed()) {
      json config = load_config_file(costs_flags.config_path);
      if (costs_flags.seed >= 0) config["seed"] = costs_flags.seed;
      if (!costs_flags.out_path.empty()) {
        config["report_json"] = costs_flags.out_path;
      }
      return execute("report-costs", dionsim_report_costs, config);
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  }
  return 1;
}
