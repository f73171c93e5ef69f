// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tbps/config.hpp"
#include "tbps/eval.hpp"

namespace tbps {

std::string_view tool_version();

/// Dataset named by the config: the seeded toy corpus or a JSONL file.
Dataset load_dataset(const ExperimentConfig& config);

/// Trains on the config's dataset.
FitResult train_experiment(const ExperimentConfig& config, const Dataset& dataset);

struct RunManifest {
  std::string command;
  std::string tool_version;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> artifacts;  // relative path, sha256
  double wall_seconds = 0.0;
  std::string started_utc;
};

/// Timings live under "timings"; everything else is deterministic.
std::string manifest_json(const RunManifest& manifest);

struct RunOptions {
  std::string out_dir;      // exact run directory; empty: derived
  std::string output_root;  // empty: $TBPS_OUTPUT_ROOT, else "runs"
  std::function<void(const std::string&)> log;
};

struct RunResult {
  std::filesystem::path dir;
  RunManifest manifest;
};

/// Writes dataset.jsonl.
RunResult cmd_generate(const ExperimentConfig& config, const RunOptions& options = {});
/// Writes checkpoint.tbps, train_log.csv and warnings.txt.
RunResult cmd_train(const ExperimentConfig& config, const RunOptions& options = {});
/// Writes report.json and report.csv.
RunResult cmd_eval(const ExperimentConfig& config, const std::string& checkpoint,
                   const RunOptions& options = {});

enum class AblationAxis { Augmentation, Loss, Trick };
std::string_view ablation_axis_name(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view name);

struct AblationVariant {
  std::string name;
  ConfigValues changes;
};

/// Rows of the ablation table for `axis`, as changes to the resolved config.
std::vector<AblationVariant> ablation_variants(const ExperimentConfig& config, AblationAxis axis);

struct AblationRow {
  std::string name;
  std::string fingerprint;
  RetrievalReport report;
};

std::vector<AblationRow> run_ablation(const ExperimentConfig& config, AblationAxis axis,
                                      const std::function<void(const std::string&)>& log = {});
std::string ablation_csv(const std::vector<AblationRow>& rows, AblationAxis axis,
                         const std::string& fingerprint, std::uint64_t seed);

/// Writes ablation_<axis>.csv.
RunResult cmd_ablate(const ExperimentConfig& config, AblationAxis axis,
                     const RunOptions& options = {});

struct FewshotRow {
  double fraction = 1.0;
  std::size_t train_rows = 0;
  std::size_t train_identities = 0;
  RetrievalReport report;
};

std::vector<FewshotRow> run_fewshot(const ExperimentConfig& config,
                                    const std::function<void(const std::string&)>& log = {});
std::string fewshot_csv(const std::vector<FewshotRow>& rows, const std::string& fingerprint,
                        std::uint64_t seed);

/// Writes fewshot.csv for the fractions in fewshot.fractions.
RunResult cmd_fewshot(const ExperimentConfig& config, const RunOptions& options = {});
/// Writes contribution.json and contribution.csv for analyze.modules.
RunResult cmd_contribution(const ExperimentConfig& config, const std::string& checkpoint,
                           const RunOptions& options = {});
/// Writes compress.csv and contribution.json (analyze.mode, analyze.x_max).
RunResult cmd_compress(const ExperimentConfig& config, const RunOptions& options = {});

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast internal consistency checks on closed-form cases.
std::vector<CheckResult> selftest_checks();
/// Writes selftest.txt; `passed` reports whether every check held.
RunResult cmd_selftest(const ExperimentConfig& config, bool& passed,
                       const RunOptions& options = {});

}  // namespace tbps
