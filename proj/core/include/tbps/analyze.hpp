// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tbps/data.hpp"
#include "tbps/eval.hpp"
#include "tbps/model.hpp"
#include "tbps/train.hpp"

namespace tbps {

/// Performance of a parameter set, in percentage points (higher is better).
using Metric = std::function<double(const ModelParams&)>;

/// 100 * Rank-1 on `split` of `dataset`, encoding captions with `vocab`.
Metric rank1_metric(const Dataset& dataset, const Vocab& vocab, Split split = Split::Test);

/// Module weights replaced by (1 - alpha) * init + alpha * trained.
/// Throws BadModule, BadParam (alpha outside [0, 1]) or ShapeMismatch.
ModelParams interpolate(const ModelParams& trained, const ModelParams& init,
                        const std::string& module, double alpha);

/// Drops floored at 0 and divided by their maximum; all zeros when no drop
/// is positive.
std::vector<double> c1_normalize(std::span<const double> drops);

struct ModuleScore {
  std::string module;
  double drop = 0.0;  // performance lost when the module is reset to init
  double c1 = 0.0;
  double c2 = 0.0;

  double whole() const { return c1 + c2; }
};

struct ContributionReport {
  std::string metric = "rank1";
  double epsilon = 3.0;
  double baseline = 0.0;
  bool all_zero_drops = false;
  std::vector<ModuleScore> modules;
};

/// Fills drop and c1 for every module; removal resets the module to init.
ContributionReport c1_scores(const ModelParams& trained, const ModelParams& init,
                             std::span<const std::string> modules, const Metric& metric);

/// Smallest alpha (0.01 resolution) with metric(trained) - metric(alpha) < epsilon:
/// a 0.05 grid locates the first passing point, bisection refines it.
double c2_score(const ModelParams& trained, const ModelParams& init, const std::string& module,
                const Metric& metric, double epsilon = 3.0);

/// C1 and C2 for every module.
ContributionReport contribution(const ModelParams& trained, const ModelParams& init,
                                std::span<const std::string> modules, const Metric& metric,
                                double epsilon = 3.0);

struct LayerScore {
  int id = 0;
  double score = 0.0;
};

/// The x ids with the smallest summed score; ties go to the lexicographically
/// smallest id set. Result is sorted. Throws XOutOfRange.
std::vector<int> select_layers(std::span<const LayerScore> scores, std::size_t x);

enum class CompressMode { Drop, Freeze };
std::string_view compress_mode_name(CompressMode mode);
CompressMode parse_compress_mode(std::string_view name);

struct CompressPoint {
  std::size_t x = 0;
  CompressMode mode = CompressMode::Freeze;
  std::vector<int> layers;
  RetrievalReport report;
  std::size_t trainable_parameters = 0;
};

struct CompressResult {
  ContributionReport contribution;  // text hidden layers of the baseline
  std::vector<CompressPoint> series;
};

/// Trains a baseline (unless given), scores its text hidden layers, then
/// retrains with the x lowest-scoring layers frozen or dropped for
/// x = 1..x_max.
CompressResult compress_experiment(const Dataset& dataset, const ModelConfig& model,
                                   const TrainConfig& config, CompressMode mode,
                                   std::size_t x_max, double epsilon = 3.0,
                                   const FitResult* baseline = nullptr);

std::string contribution_json(const ContributionReport& report, const std::string& fingerprint,
                              std::uint64_t seed);
std::string contribution_csv(const ContributionReport& report, const std::string& fingerprint,
                             std::uint64_t seed);
std::string compress_csv(std::span<const CompressPoint> series, const std::string& fingerprint,
                         std::uint64_t seed);

}  // namespace tbps
