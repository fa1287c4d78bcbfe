// SPDX-License-Identifier: Apache-2.0
//
// One JSON schema shared by every command. A run starts from the defaults,
// merges an optional config file, then applies `key.path=value` overrides.
// Unknown keys and mistyped values are rejected.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attsets/bench.hpp"
#include "attsets/basenet.hpp"
#include "attsets/metrics.hpp"
#include "attsets/synthdata.hpp"
#include "attsets/trainer.hpp"

namespace attsets::config {

enum class TrainMode { faset, joint, finetune };

std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view name);

struct Paths {
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";
  /// Checkpoint read by `eval`; empty means <out_dir>/model.ckpt.
  std::filesystem::path checkpoint;
};

struct RunConfig {
  /// Seeds model initialization, minibatch sampling, evaluation view choice and bench inputs.
  std::uint64_t seed = 0;
  Paths paths;
  data::DatasetMeta dataset;
  net::ModelConfig model;
  train::TrainConfig train;
  TrainMode train_mode = TrainMode::faset;
  eval::EvalConfig eval;
  bench::BenchConfig bench;
};

nlohmann::json default_config_json();

/// Recursively overlays `overlay` onto `base`. Every key of `overlay` must
/// already exist in `base` with a compatible type.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& where = "");

/// Applies one "dotted.key=value" override. The value is parsed as JSON when
/// possible and otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Typed view of a complete document; validates every section.
RunConfig resolve(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& cfg);

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed = std::nullopt);

}  // namespace attsets::config
