// SPDX-License-Identifier: Apache-2.0
#include "tbps/analyze.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "tbps/error.hpp"

namespace tbps {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string header(const std::string& fingerprint, std::uint64_t seed) {
  return "# seed=" + std::to_string(seed) + " config=" + fingerprint + "\n";
}

}  // namespace

Metric rank1_metric(const Dataset& dataset, const Vocab& vocab, Split split) {
  return [&dataset, vocab, split](const ModelParams& params) {
    const Checkpoint ckpt{params, vocab};
    return 100.0 * evaluate_checkpoint(ckpt, dataset, split).rank1;
  };
}

ModelParams interpolate(const ModelParams& trained, const ModelParams& init,
                        const std::string& module, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw Error(ErrorCode::BadParam, "alpha must be in [0, 1]");
  if (!trained.has_module(module) || !init.has_module(module))
    throw Error(ErrorCode::BadModule, "unknown module '" + module + "'");
  ModelParams out = trained;
  for (std::size_t i : trained.tensors_of(module)) {
    const Tensor& t = trained.tensors[i];
    const Mat& w0 = init[t.name];
    if (!w0.same_shape(t.value))
      throw Error(ErrorCode::ShapeMismatch, "init and trained shapes differ for " + t.name);
    auto& dst = out.tensors[i].value.values();
    for (std::size_t k = 0; k < dst.size(); ++k)
      dst[k] = (1.0 - alpha) * w0.values()[k] + alpha * t.value.values()[k];
  }
  return out;
}

std::vector<double> c1_normalize(std::span<const double> drops) {
  std::vector<double> out(drops.size(), 0.0);
  double mx = 0.0;
  for (double d : drops) mx = std::max(mx, d);
  if (mx <= 0.0) return out;
  for (std::size_t i = 0; i < drops.size(); ++i) out[i] = std::max(drops[i], 0.0) / mx;
  return out;
}

ContributionReport c1_scores(const ModelParams& trained, const ModelParams& init,
                             std::span<const std::string> modules, const Metric& metric) {
  if (modules.empty()) throw Error(ErrorCode::BadModule, "no modules to score");
  ContributionReport r;
  r.baseline = metric(trained);
  std::vector<double> drops;
  for (const auto& m : modules) {
    const double removed = metric(interpolate(trained, init, m, 0.0));
    ModuleScore s;
    s.module = m;
    s.drop = r.baseline - removed;
    drops.push_back(s.drop);
    r.modules.push_back(s);
  }
  const auto c1 = c1_normalize(drops);
  r.all_zero_drops = std::none_of(drops.begin(), drops.end(), [](double d) { return d > 0.0; });
  for (std::size_t i = 0; i < c1.size(); ++i) r.modules[i].c1 = c1[i];
  return r;
}

double c2_score(const ModelParams& trained, const ModelParams& init, const std::string& module,
                const Metric& metric, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::BadParam, "epsilon must be > 0");
  const double full = metric(trained);
  // Alphas are handled as integer hundredths so grid points are exact.
  std::map<int, bool> memo;
  const auto passes = [&](int hundredths) {
    const auto it = memo.find(hundredths);
    if (it != memo.end()) return it->second;
    const double a = hundredths / 100.0;
    const bool ok = full - metric(interpolate(trained, init, module, a)) < epsilon;
    memo.emplace(hundredths, ok);
    return ok;
  };
  int first = 100;
  for (int k = 0; k <= 100; k += 5)
    if (passes(k)) {
      first = k;
      break;
    }
  if (first == 0) return 0.0;
  int lo = first - 5;  // fails
  int hi = first;      // passes
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (passes(mid)) hi = mid;
    else lo = mid;
  }
  return hi / 100.0;
}

ContributionReport contribution(const ModelParams& trained, const ModelParams& init,
                                std::span<const std::string> modules, const Metric& metric,
                                double epsilon) {
  ContributionReport r = c1_scores(trained, init, modules, metric);
  r.epsilon = epsilon;
  for (auto& s : r.modules) s.c2 = c2_score(trained, init, s.module, metric, epsilon);
  return r;
}

std::vector<int> select_layers(std::span<const LayerScore> scores, std::size_t x) {
  if (x < 1 || x > scores.size())
    throw Error(ErrorCode::XOutOfRange, "x must be in [1, " + std::to_string(scores.size()) + "]");
  std::vector<LayerScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const LayerScore& a, const LayerScore& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.id < b.id;
  });
  std::vector<int> ids;
  for (std::size_t i = 0; i < x; ++i) ids.push_back(sorted[i].id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string_view compress_mode_name(CompressMode mode) {
  return mode == CompressMode::Drop ? "drop" : "freeze";
}

CompressMode parse_compress_mode(std::string_view name) {
  if (name == "drop") return CompressMode::Drop;
  if (name == "freeze") return CompressMode::Freeze;
  throw Error(ErrorCode::BadParam, "mode must be drop or freeze, got '" + std::string(name) + "'");
}

CompressResult compress_experiment(const Dataset& dataset, const ModelConfig& model,
                                   const TrainConfig& config, CompressMode mode,
                                   std::size_t x_max, double epsilon,
                                   const FitResult* baseline) {
  const auto layers = static_cast<std::size_t>(model.text_layers);
  if (x_max > layers)
    throw Error(ErrorCode::XOutOfRange, "x_max " + std::to_string(x_max) + " exceeds the " +
                                            std::to_string(layers) + " text layers");
  CompressResult result;
  FitResult trained;
  if (!baseline) trained = fit(dataset, model, config);
  const FitResult& base = baseline ? *baseline : trained;
  const Checkpoint& ckpt = base.checkpoint;

  CompressPoint p0;
  p0.x = 0;
  p0.mode = mode;
  p0.report = evaluate_checkpoint(ckpt, dataset);
  p0.trainable_parameters = ckpt.params.trainable_parameter_count();
  result.series.push_back(p0);
  if (x_max == 0) return result;

  std::vector<std::string> modules;
  for (int l = 1; l <= model.text_layers; ++l) modules.push_back(text_hidden_module(l));
  result.contribution = contribution(ckpt.params, base.init, modules,
                                     rank1_metric(dataset, ckpt.vocab), epsilon);
  std::vector<LayerScore> scores;
  for (int l = 1; l <= model.text_layers; ++l)
    scores.push_back({l, result.contribution.modules[static_cast<std::size_t>(l - 1)].whole()});

  for (std::size_t x = 1; x <= x_max; ++x) {
    CompressPoint p;
    p.x = x;
    p.mode = mode;
    p.layers = select_layers(scores, x);
    TrainConfig c = config;
    for (int id : p.layers)
      (mode == CompressMode::Drop ? c.drop_modules : c.freeze_modules).push_back(text_hidden_module(id));
    const FitResult run = fit(dataset, model, c, &ckpt.vocab);
    p.report = evaluate_checkpoint(run.checkpoint, dataset);
    p.trainable_parameters = run.checkpoint.params.trainable_parameter_count();
    result.series.push_back(std::move(p));
  }
  return result;
}

std::string contribution_json(const ContributionReport& r, const std::string& fingerprint,
                              std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["config_fingerprint"] = fingerprint;
  j["seed"] = seed;
  j["metric"] = r.metric;
  j["epsilon"] = r.epsilon;
  j["removal"] = "reset to initial weights";
  j["baseline"] = r.baseline;
  j["all_zero_drops"] = r.all_zero_drops;
  j["modules"] = nlohmann::ordered_json::array();
  for (const auto& m : r.modules) {
    nlohmann::ordered_json e;
    e["module"] = m.module;
    e["drop"] = m.drop;
    e["c1"] = m.c1;
    e["c2"] = m.c2;
    e["whole"] = m.whole();
    j["modules"].push_back(e);
  }
  return j.dump(2) + "\n";
}

std::string contribution_csv(const ContributionReport& r, const std::string& fingerprint,
                             std::uint64_t seed) {
  std::string out = header(fingerprint, seed);
  out += "# metric=" + r.metric + " epsilon=" + num(r.epsilon) + " baseline=" + num(r.baseline) +
         (r.all_zero_drops ? " all_zero_drops" : "") + "\n";
  out += "module,drop,c1,c2,whole\n";
  for (const auto& m : r.modules)
    out += m.module + "," + num(m.drop) + "," + num(m.c1) + "," + num(m.c2) + "," +
           num(m.whole()) + "\n";
  return out;
}

std::string compress_csv(std::span<const CompressPoint> series, const std::string& fingerprint,
                         std::uint64_t seed) {
  std::string out = header(fingerprint, seed);
  out += "x,mode,layers,rank1,rank5,mAP,trainable_params\n";
  for (const auto& p : series) {
    std::string ids;
    for (int id : p.layers) ids += (ids.empty() ? "" : " ") + std::to_string(id);
    out += std::to_string(p.x) + "," + std::string(compress_mode_name(p.mode)) + "," + ids + "," +
           num(p.report.rank1) + "," + num(p.report.rank5) + "," + num(p.report.map) + "," +
           std::to_string(p.trainable_parameters) + "\n";
  }
  return out;
}

}  // namespace tbps
