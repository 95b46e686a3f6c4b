// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "orthomoe/train.hpp"

namespace orthomoe {

inline constexpr const char* kLibraryVersion = "0.1.0";

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

TrainConfig load_train_config(const std::string& path);

// Flat key=value overrides with dot paths, e.g. "balance.weight=0.01" or
// "variant=naive". Values parse as JSON when possible, else as strings.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides);

// Pinned CSV layout: step, task_loss, balance_loss, entropy_mean,
// entropy_layer_i..., util_expert_e..., grad_norm_total.
std::string csv_header(const TrainConfig& cfg);
void write_train_log_csv(const TrainLog& log, const std::string& path);

struct RunManifest {
  nlohmann::json config;  // resolved TrainConfig
  std::uint64_t seed = 0;
  std::string library_version;
  std::string created_at;  // ISO-8601 UTC
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

void write_manifest(const RunManifest& manifest, const std::string& path);
RunManifest read_manifest(const std::string& path);

}  // namespace orthomoe
