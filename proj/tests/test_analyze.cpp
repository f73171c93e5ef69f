// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "oracles.hpp"
#include "tbps/analyze.hpp"
#include "tbps/error.hpp"

namespace {

using tbps::CompressMode;
using tbps::ErrorCode;
using tbps::LayerScore;
using tbps::Metric;
using tbps::ModelConfig;
using tbps::ModelParams;
using tbps::Rng;
using tbps::TrainConfig;

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const tbps::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no tbps::Error thrown";
  return ErrorCode::IoError;
}

ModelConfig small_model(int text_layers = 3) {
  ModelConfig c;
  c.image_height = 16;
  c.image_width = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.hidden_dim = 12;
  c.image_layers = 2;
  c.text_layers = text_layers;
  c.dropout = 0.0;
  return c;
}

tbps::Dataset small_corpus(std::uint64_t seed, int identities = 16) {
  tbps::ToySpec spec;
  spec.n_identities = identities;
  spec.images_per_identity = 2;
  spec.captions_per_image = 2;
  spec.image_height = 16;
  spec.image_width = 8;
  spec.test_fraction = 0.25;
  return tbps::generate_toy(spec, Rng(seed, tbps::streams::kToy)).dataset;
}

TrainConfig quick_config() {
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 8;
  t.lr_init = 1e-4;
  t.lr_peak = 1e-2;
  t.lr_final = 1e-3;
  return t;
}

// Trained = init plus a random offset on every entry.
struct Pair {
  ModelParams init, trained;
};

Pair random_pair(std::uint64_t seed) {
  Pair p;
  p.init = tbps::init_params(small_model(), 9, Rng(seed));
  p.trained = p.init;
  Rng rng(seed, 99);
  for (auto& t : p.trained.tensors)
    for (double& v : t.value.values()) v += 0.5 + rng.uniform();
  return p;
}

// Position of a module on the init -> trained segment, read off its first entry.
double alpha_of(const ModelParams& p, const Pair& ref, const std::string& module) {
  const std::size_t i = ref.trained.tensors_of(module).front();
  const double w0 = ref.init.tensors[i].value.values()[0];
  const double w1 = ref.trained.tensors[i].value.values()[0];
  return (p.tensors[i].value.values()[0] - w0) / (w1 - w0);
}

// Exhaustive scan over alpha in hundredths.
double linear_scan_c2(const ModelParams& trained, const ModelParams& init, const std::string& module,
                      const Metric& metric, double epsilon) {
  const double full = metric(trained);
  for (int k = 0; k <= 100; ++k)
    if (full - metric(tbps::interpolate(trained, init, module, k / 100.0)) < epsilon) return k / 100.0;
  return 1.0;
}

TEST(C1, NormalizationExamples) {
  EXPECT_EQ(tbps::c1_normalize(std::vector<double>{2.0, 4.0}), (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(tbps::c1_normalize(std::vector<double>{-1.0, 3.0, 0.0}), (std::vector<double>{0.0, 1.0, 0.0}));
  EXPECT_EQ(tbps::c1_normalize(std::vector<double>{0.0, 0.0}), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(tbps::c1_normalize(std::vector<double>{-2.0, -0.5}), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(tbps::c1_normalize(std::vector<double>{}), std::vector<double>{});
}

TEST(C1, RandomDropsAreInUnitIntervalWithMaxOne) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> drops(1 + rng.below(10));
    for (double& d : drops) d = rng.normal() * 5.0;
    const auto c = tbps::c1_normalize(drops);
    const double mx = *std::max_element(drops.begin(), drops.end());
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_GE(c[i], 0.0);
      EXPECT_LE(c[i], 1.0);
      EXPECT_EQ(c[i], mx > 0.0 ? std::max(drops[i], 0.0) / mx : 0.0);
    }
    if (mx > 0.0) {
      EXPECT_EQ(*std::max_element(c.begin(), c.end()), 1.0);
    }
  }
}

TEST(Interpolate, EndpointsLinearityAndIsolation) {
  const auto pair = random_pair(1);
  const std::string module = "text.hidden.2";
  EXPECT_EQ(tbps::interpolate(pair.trained, pair.init, module, 1.0), pair.trained);
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const double a = rng.uniform();
    const auto p = tbps::interpolate(pair.trained, pair.init, module, a);
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      const bool inside = tbps::module_of(p.tensors[i].name) == module;
      const auto& got = p.tensors[i].value.values();
      const auto& w0 = pair.init.tensors[i].value.values();
      const auto& w1 = pair.trained.tensors[i].value.values();
      for (std::size_t k = 0; k < got.size(); ++k) {
        if (inside) EXPECT_NEAR(got[k], w0[k] + a * (w1[k] - w0[k]), 1e-12);
        else EXPECT_EQ(got[k], w1[k]);
      }
    }
  }
  const auto zero = tbps::interpolate(pair.trained, pair.init, module, 0.0);
  for (std::size_t i : zero.tensors_of(module)) EXPECT_EQ(zero.tensors[i].value, pair.init.tensors[i].value);
}

TEST(Interpolate, Errors) {
  const auto pair = random_pair(2);
  EXPECT_EQ(code_of([&] { tbps::interpolate(pair.trained, pair.init, "text.hidden.9", 0.5); }),
            ErrorCode::BadModule);
  EXPECT_EQ(code_of([&] { tbps::interpolate(pair.trained, pair.init, "text.proj", 1.5); }), ErrorCode::BadParam);
  EXPECT_EQ(code_of([&] { tbps::interpolate(pair.trained, pair.init, "text.proj", -0.1); }), ErrorCode::BadParam);
  ModelConfig wide = small_model();
  wide.embed_dim = 10;
  const auto other = tbps::init_params(wide, 9, Rng(2));
  EXPECT_EQ(code_of([&] { tbps::interpolate(pair.trained, other, "text.proj", 0.5); }), ErrorCode::ShapeMismatch);
}

// metric = 100 - sum_m A_m (1 - alpha_m)^p_m: monotone in each module's alpha.
struct SyntheticMetric {
  Pair pair;
  std::map<std::string, std::pair<double, double>> shape;

  double operator()(const ModelParams& p) const {
    double m = 100.0;
    for (const auto& [module, ap] : shape) {
      const double a = std::clamp(alpha_of(p, pair, module), 0.0, 1.0);
      m -= ap.first * std::pow(1.0 - a, ap.second);
    }
    return m;
  }
};

const std::vector<std::string> kModules = {"text.hidden.1", "text.hidden.2", "text.hidden.3", "text.proj",
                                           "image.proj"};

class C2Oracle : public ::testing::TestWithParam<int> {};

TEST_P(C2Oracle, GridAndBisectionMatchLinearScan) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  SyntheticMetric sm{random_pair(seed), {}};
  Rng rng(seed, 7);
  for (const auto& m : kModules) sm.shape[m] = {rng.uniform() * 40.0, 0.3 + 3.0 * rng.uniform()};
  const Metric metric = sm;
  for (double eps : {0.5, 3.0, 10.0}) {
    for (const auto& m : kModules) {
      const double got = tbps::c2_score(sm.pair.trained, sm.pair.init, m, metric, eps);
      EXPECT_EQ(got, linear_scan_c2(sm.pair.trained, sm.pair.init, m, metric, eps)) << m << " eps " << eps;
      EXPECT_GE(got, 0.0);
      EXPECT_LE(got, 1.0);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Synthetic, C2Oracle, ::testing::Range(1, 21));

TEST(C2, LargeEpsilonAndUntrainedModuleGiveZero) {
  SyntheticMetric sm{random_pair(4), {{"text.proj", {30.0, 1.0}}}};
  const Metric metric = sm;
  EXPECT_EQ(tbps::c2_score(sm.pair.trained, sm.pair.init, "text.proj", metric, 100.0), 0.0);
  EXPECT_EQ(tbps::c2_score(sm.pair.trained, sm.pair.init, "text.proj", metric, 1000.0), 0.0);
  EXPECT_GT(tbps::c2_score(sm.pair.trained, sm.pair.init, "text.proj", metric, 3.0), 0.0);
  // A module the metric ignores needs no interpolation at all.
  EXPECT_EQ(tbps::c2_score(sm.pair.trained, sm.pair.init, "image.proj", metric, 3.0), 0.0);
  // Trained equal to init: every alpha gives the same parameters.
  const auto same = tbps::interpolate(sm.pair.trained, sm.pair.init, "text.proj", 1.0);
  const Metric constant = [](const ModelParams&) { return 42.0; };
  EXPECT_EQ(tbps::c2_score(same, same, "text.proj", constant, 3.0), 0.0);
  EXPECT_EQ(code_of([&] { tbps::c2_score(same, same, "text.proj", constant, 0.0); }), ErrorCode::BadParam);
}

TEST(C2, LinearGapHasClosedForm) {
  // Gap 40 (1 - alpha) < 3 first holds for alpha > 0.925, i.e. 0.93.
  SyntheticMetric sm{random_pair(6), {{"text.proj", {40.0, 1.0}}}};
  EXPECT_DOUBLE_EQ(tbps::c2_score(sm.pair.trained, sm.pair.init, "text.proj", Metric(sm), 3.0), 0.93);
}

TEST(Contribution, SyntheticDropsAndWholeScore) {
  SyntheticMetric sm{random_pair(8), {{"text.hidden.1", {10.0, 1.0}}, {"text.hidden.2", {20.0, 2.0}}}};
  const Metric metric = sm;
  const std::vector<std::string> modules = {"text.hidden.1", "text.hidden.2", "text.hidden.3"};
  const auto r = tbps::contribution(sm.pair.trained, sm.pair.init, modules, metric, 3.0);
  EXPECT_DOUBLE_EQ(r.baseline, 100.0);
  ASSERT_EQ(r.modules.size(), 3u);
  EXPECT_NEAR(r.modules[0].drop, 10.0, 1e-9);
  EXPECT_NEAR(r.modules[1].drop, 20.0, 1e-9);
  EXPECT_EQ(r.modules[2].drop, 0.0);
  EXPECT_NEAR(r.modules[0].c1, 0.5, 1e-12);
  EXPECT_EQ(r.modules[1].c1, 1.0);
  EXPECT_EQ(r.modules[2].c1, 0.0);
  EXPECT_EQ(r.modules[2].c2, 0.0);
  EXPECT_FALSE(r.all_zero_drops);
  for (const auto& s : r.modules) EXPECT_EQ(s.whole(), s.c1 + s.c2);

  const Metric flat = [](const ModelParams&) { return 50.0; };
  const auto z = tbps::c1_scores(sm.pair.trained, sm.pair.init, modules, flat);
  EXPECT_TRUE(z.all_zero_drops);
  for (const auto& s : z.modules) EXPECT_EQ(s.c1, 0.0);
  EXPECT_EQ(code_of([&] { tbps::c1_scores(sm.pair.trained, sm.pair.init, {}, flat); }), ErrorCode::BadModule);

  const auto j = nlohmann::json::parse(tbps::contribution_json(r, "fp", 3));
  EXPECT_EQ(j["config_fingerprint"], "fp");
  EXPECT_EQ(j["seed"], 3);
  EXPECT_EQ(j["modules"].size(), 3u);
  const std::string csv = tbps::contribution_csv(r, "fp", 3);
  EXPECT_EQ(csv.rfind("# seed=3 config=fp", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}

// Real Rank-1 metric on a briefly trained toy model.
TEST(C2, ToyCheckpointMatchesLinearScan) {
  const auto data = small_corpus(11);
  const auto model = small_model();
  const auto run = tbps::fit(data, model, quick_config());
  const Metric metric = tbps::rank1_metric(data, run.checkpoint.vocab);
  for (int l = 1; l <= model.text_layers; ++l) {
    const auto m = tbps::text_hidden_module(l);
    for (double eps : {1.0, 3.0, 10.0})
      EXPECT_EQ(tbps::c2_score(run.checkpoint.params, run.init, m, metric, eps),
                linear_scan_c2(run.checkpoint.params, run.init, m, metric, eps))
          << m << " eps " << eps;
  }
}

TEST(SelectLayers, MatchesBruteForce) {
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<LayerScore> scores(n);
    std::vector<int> ids(n);
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) {
      ids[i] = static_cast<int>(i + 1);
      // Quarter steps make ties between sets frequent.
      vals[i] = t % 2 ? 0.25 * static_cast<double>(rng.below(4)) : rng.uniform();
      scores[i] = {ids[i], vals[i]};
    }
    for (std::size_t x = 1; x <= n; ++x)
      EXPECT_EQ(tbps::select_layers(scores, x), oracle::brute_select(ids, vals, x)) << "n " << n << " x " << x;
  }
}

TEST(SelectLayers, EdgesAndErrors) {
  const std::vector<LayerScore> s = {{1, 0.9}, {2, 0.1}, {3, 0.5}, {4, 0.1}};
  EXPECT_EQ(tbps::select_layers(s, 1), std::vector<int>{2});
  EXPECT_EQ(tbps::select_layers(s, 2), (std::vector<int>{2, 4}));
  EXPECT_EQ(tbps::select_layers(s, 4), (std::vector<int>{1, 2, 3, 4}));
  const std::vector<LayerScore> equal = {{1, 0.0}, {2, 0.0}, {3, 0.0}};
  EXPECT_EQ(tbps::select_layers(equal, 2), (std::vector<int>{1, 2}));
  EXPECT_EQ(code_of([&] { tbps::select_layers(s, 0); }), ErrorCode::XOutOfRange);
  EXPECT_EQ(code_of([&] { tbps::select_layers(s, 5); }), ErrorCode::XOutOfRange);
}

TEST(Compress, ModeNames) {
  EXPECT_EQ(tbps::parse_compress_mode("drop"), CompressMode::Drop);
  EXPECT_EQ(tbps::parse_compress_mode("freeze"), CompressMode::Freeze);
  EXPECT_EQ(tbps::compress_mode_name(CompressMode::Drop), "drop");
  EXPECT_EQ(code_of([&] { tbps::parse_compress_mode("prune"); }), ErrorCode::BadParam);
}

TEST(Compress, DropSeriesShrinksAndBaselineIsReproduced) {
  const auto data = small_corpus(12);
  const auto model = small_model();
  const auto config = quick_config();
  const auto base = tbps::fit(data, model, config);
  const auto r = tbps::compress_experiment(data, model, config, CompressMode::Drop, 3, 3.0, &base);
  ASSERT_EQ(r.series.size(), 4u);
  EXPECT_EQ(r.series[0].x, 0u);
  EXPECT_TRUE(r.series[0].layers.empty());
  EXPECT_EQ(r.series[0].report, tbps::evaluate_checkpoint(base.checkpoint, data));
  for (std::size_t x = 1; x < r.series.size(); ++x) {
    EXPECT_EQ(r.series[x].layers.size(), x);
    EXPECT_LT(r.series[x].trainable_parameters, r.series[x - 1].trainable_parameters);
  }
  EXPECT_EQ(r.series[3].layers, (std::vector<int>{1, 2, 3}));
  ASSERT_EQ(r.contribution.modules.size(), 3u);

  // Without a given baseline the same one is trained internally.
  const auto again = tbps::compress_experiment(data, model, config, CompressMode::Drop, 1, 3.0);
  EXPECT_EQ(again.series[0].report, r.series[0].report);
  EXPECT_EQ(again.series[1].layers, r.series[1].layers);
  EXPECT_EQ(again.series[1].report, r.series[1].report);

  const std::string csv = tbps::compress_csv(r.series, "fp", 1);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2 + 4);
  EXPECT_EQ(code_of([&] { tbps::compress_experiment(data, model, config, CompressMode::Drop, 4, 3.0, &base); }),
            ErrorCode::XOutOfRange);
}

TEST(Compress, FreezeKeepsParameterCountButLowersTrainable) {
  const auto data = small_corpus(13);
  const auto model = small_model(2);
  const auto r = tbps::compress_experiment(data, model, quick_config(), CompressMode::Freeze, 2);
  ASSERT_EQ(r.series.size(), 3u);
  EXPECT_GT(r.series[0].trainable_parameters, r.series[1].trainable_parameters);
  EXPECT_GT(r.series[1].trainable_parameters, r.series[2].trainable_parameters);
  const std::size_t per_layer = model.hidden_dim * model.hidden_dim + model.hidden_dim;
  EXPECT_EQ(r.series[0].trainable_parameters - r.series[2].trainable_parameters, 2 * per_layer);
}

}  // namespace
