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
#include "checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "error.hpp"

namespace dion {

namespace {

bool name_is_safe(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return name != "." && name != "..";
}

}  // namespace

void save_checkpoint(const std::string& dir, const Checkpoint& checkpoint) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["dtype"] = "float64";
  manifest["byte_order"] = "little-endian";
  manifest["layout"] = "row-major";
  manifest["seed"] = checkpoint.seed;
  manifest["step"] = checkpoint.step;
  nlohmann::json params = nlohmann::json::array();
  for (const CheckpointEntry& entry : checkpoint.entries) {
    if (!name_is_safe(entry.name)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "save_checkpoint: unsafe parameter name '" + entry.name +
                      "'");
    }
    const std::string file = entry.name + ".bin";
    std::ofstream blob(std::filesystem::path(dir) / file, std::ios::binary);
    if (!blob) {
      throw Error(ErrorCode::kIo, "save_checkpoint: cannot write " + file);
    }
    blob.write(reinterpret_cast<const char*>(entry.value.data.data()),
               static_cast<std::streamsize>(sizeof(double) *
                                            entry.value.data.size()));
    params.push_back({{"name", entry.name},
                      {"rows", entry.value.rows},
                      {"cols", entry.value.cols},
                      {"file", file}});
  }
  manifest["params"] = params;
  std::ofstream out(std::filesystem::path(dir) / "manifest.json");
  if (!out) {
    throw Error(ErrorCode::kIo, "save_checkpoint: cannot write manifest.json");
  }
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "manifest.json");
  if (!in) {
    throw Error(ErrorCode::kIo,
                "load_checkpoint: missing manifest.json in " + dir);
  }
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo,
                std::string("load_checkpoint: bad manifest: ") + e.what());
  }
  Checkpoint checkpoint;
  checkpoint.seed = manifest.value("seed", 0ULL);
  checkpoint.step = manifest.value("step", 0ULL);
  for (const nlohmann::json& param : manifest.at("params")) {
    CheckpointEntry entry;
    entry.name = param.at("name").get<std::string>();
    const index_t rows = param.at("rows").get<index_t>();
    const index_t cols = param.at("cols").get<index_t>();
    entry.value = DenseMatrix(rows, cols);
    const std::string file = param.at("file").get<std::string>();
    std::ifstream blob(std::filesystem::path(dir) / file, std::ios::binary);
    if (!blob) {
      throw Error(ErrorCode::kIo, "load_checkpoint: cannot read " + file);
    }
    blob.read(reinterpret_cast<char*>(entry.value.data.data()),
              static_cast<std::streamsize>(sizeof(double) *
                                           entry.value.data.size()));
    if (blob.gcount() !=
        static_cast<std::streamsize>(sizeof(double) *
                                     entry.value.data.size())) {
      throw Error(ErrorCode::kIo, "load_checkpoint: short read on " + file);
    }
    checkpoint.entries.push_back(std::move(entry));
  }
  return checkpoint;
}

}  // namespace dion
