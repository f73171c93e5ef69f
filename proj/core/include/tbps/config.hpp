// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbps/analyze.hpp"
#include "tbps/data.hpp"
#include "tbps/model.hpp"
#include "tbps/train.hpp"

namespace tbps {

/// Flat "section.key" -> value map.
using ConfigValues = std::map<std::string, std::string>;

/// One experiment: data, model, training, evaluation and analysis settings.
struct ExperimentConfig {
  std::string preset = "tbps-clip";
  std::uint64_t seed = 0;

  std::string data_source = "toy";  // toy | jsonl
  std::string data_path;
  ToySpec toy;

  ModelConfig model;
  TrainConfig train;

  Split eval_split = Split::Test;

  double epsilon = 3.0;
  std::vector<std::string> analyze_modules;  // empty: every module
  CompressMode compress_mode = CompressMode::Freeze;
  std::size_t x_max = 2;

  std::vector<double> fewshot_fractions = {0.01, 0.05, 0.1};

  /// Every key with its canonical value.
  ConfigValues values;

  /// Canonical INI text of `values`.
  std::string to_ini() const;
  /// SHA-256 of to_ini(), hex.
  std::string fingerprint() const;
};

const std::vector<std::string>& preset_names();
/// Keys a preset sets. Throws ConfigError for unknown names.
ConfigValues preset_values(std::string_view name);
/// Every known key with its default.
ConfigValues default_values();

/// Typed config from a complete value map. Throws ConfigError naming the key.
ExperimentConfig config_from_values(const ConfigValues& values);

/// Defaults, then the preset named by run.preset, then the INI text, then
/// overrides of the form "section.key=value" (a leading "--" is accepted).
/// Unknown keys are rejected.
ExperimentConfig parse_config(std::string_view ini_text, std::span<const std::string> overrides = {});
/// Reads `path` (empty: no file) and applies `overrides`.
ExperimentConfig load_config(const std::string& path, std::span<const std::string> overrides = {});

/// Resolved config with `changes` applied on top; presets are not re-applied.
ExperimentConfig with_values(const ExperimentConfig& base, const ConfigValues& changes);

std::string sha256_hex(std::string_view data);

}  // namespace tbps
