// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tbps/config.hpp"
#include "tbps/error.hpp"
#include "tbps/train.hpp"

namespace {

using tbps::Batch;
using tbps::ErrorCode;
using tbps::Image;
using tbps::Mat;
using tbps::ModelConfig;
using tbps::ModelParams;
using tbps::Rng;
using tbps::Schedule;
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

ModelConfig small_model() {
  ModelConfig c;
  c.image_height = 16;
  c.image_width = 8;
  c.patch_size = 4;
  c.embed_dim = 6;
  c.hidden_dim = 8;
  c.image_layers = 2;
  c.text_layers = 2;
  c.dropout = 0.1;
  return c;
}

tbps::Dataset small_corpus(std::uint64_t seed, int identities = 10) {
  tbps::ToySpec spec;
  spec.n_identities = identities;
  spec.images_per_identity = 2;
  spec.captions_per_image = 1;
  spec.image_height = 16;
  spec.image_width = 8;
  spec.test_fraction = 0.2;
  return tbps::generate_toy(spec, Rng(seed, tbps::streams::kToy)).dataset;
}

TrainConfig quick_config() {
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 4;
  t.lr_init = 1e-4;
  t.lr_peak = 1e-2;
  t.lr_final = 1e-3;
  return t;
}

TEST(Schedule, EndpointsAtDefaultRates) {
  const Schedule s = Schedule::with_warmup_fraction(1000, 0.1);
  EXPECT_EQ(s.warmup_steps, 100u);
  EXPECT_NEAR(tbps::lr_at(s, 0), 1e-6, 1e-12);
  EXPECT_NEAR(tbps::lr_at(s, 100), 1e-4, 1e-12);
  EXPECT_NEAR(tbps::lr_at(s, 1000), 5e-6, 1e-12);
  EXPECT_NEAR(tbps::lr_at(s, 50), 1e-6 + 0.5 * (1e-4 - 1e-6), 1e-15);
  EXPECT_NEAR(tbps::lr_at(s, 550), 5e-6 + 0.5 * (1e-4 - 5e-6), 1e-15);
  EXPECT_NEAR(tbps::lr_at(s, 325), 5e-6 + 0.5 * (1e-4 - 5e-6) * (1 + std::cos(M_PI * 0.25)), 1e-15);
  EXPECT_EQ(code_of([&] { tbps::lr_at(s, 1001); }), ErrorCode::StepOutOfRange);
}

TEST(Schedule, ContinuityAndShape) {
  for (std::size_t total : {10u, 37u, 500u}) {
    const Schedule s = Schedule::with_warmup_fraction(total, 0.1);
    if (s.warmup_steps > 0) {
      const double below = tbps::lr_at(s, s.warmup_steps - 1);
      const double at = tbps::lr_at(s, s.warmup_steps);
      EXPECT_LT(below, at);
      EXPECT_NEAR(at, 1e-4, 1e-18);
    }
    for (std::size_t k = 1; k <= total; ++k) {
      const double prev = tbps::lr_at(s, k - 1), cur = tbps::lr_at(s, k);
      if (k <= s.warmup_steps) EXPECT_GE(cur, prev);
      else EXPECT_LE(cur, prev);
    }
  }
  Schedule bad;
  bad.lr_init = 2e-4;
  EXPECT_ANY_THROW(bad.validate());
}

// 1-parameter quadratic (x - 3)^2 against a scalar Adam reference.
TEST(AdamW, MatchesScalarReference) {
  auto p = tbps::init_params(small_model(), 5, Rng(1));
  const std::size_t ti = p.index("text.proj.bias");
  auto state = tbps::adamw_init(p);
  tbps::AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  const ModelParams before = p;
  double x = p.tensors[ti].value(0, 0), m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    auto grads = tbps::zero_grads(p);
    grads[ti](0, 0) = 2.0 * (p.tensors[ti].value(0, 0) - 3.0);
    tbps::adamw_step(p, grads, state, cfg, 0.05);
    const double g = 2.0 * (x - 3.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    ASSERT_NEAR(p.tensors[ti].value(0, 0), x, 1e-10) << "step " << t;
  }
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    if (i == ti) continue;
    EXPECT_EQ(p.tensors[i].value, before.tensors[i].value) << p.tensors[i].name;
  }
}

TEST(AdamW, DecoupledDecayOnWeightsOnly) {
  auto p = tbps::init_params(small_model(), 5, Rng(2));
  const ModelParams before = p;
  auto state = tbps::adamw_init(p);
  tbps::AdamWConfig cfg;
  cfg.weight_decay = 0.5;
  tbps::adamw_step(p, tbps::zero_grads(p), state, cfg, 0.1);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const bool weight = p.tensors[i].name.ends_with(".weight");
    for (std::size_t k = 0; k < p.tensors[i].value.size(); ++k) {
      const double b = before.tensors[i].value.values()[k];
      EXPECT_DOUBLE_EQ(p.tensors[i].value.values()[k], weight ? b * (1 - 0.05) : b);
    }
  }
}

TEST(Batches, SizesCoverRowsEvenly) {
  for (std::size_t n = 2; n < 60; ++n)
    for (std::size_t b = 2; b <= n; ++b) {
      const auto s = tbps::batch_sizes(n, b);
      ASSERT_EQ(s.size(), (n + b - 1) / b);
      ASSERT_EQ(std::accumulate(s.begin(), s.end(), std::size_t{0}), n);
      const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
      ASSERT_LE(*hi - *lo, 1u);
      ASSERT_LE(*hi, b);
    }
}

struct Prepared {
  tbps::Dataset data;
  std::vector<tbps::TokenSeq> tokens;
  tbps::Vocab vocab;
};

Prepared prepare(std::uint64_t seed) {
  Prepared p;
  p.data = small_corpus(seed);
  for (const auto& s : p.data.samples) p.tokens.push_back(tbps::tokenize(s.caption));
  p.vocab = tbps::Vocab::build(p.tokens);
  return p;
}

TEST(AssembleBatch, AlignmentDeterminismAndDisabledAugmentation) {
  const auto p = prepare(3);
  const std::vector<std::size_t> rows{0, 3, 5, 6};
  TrainConfig cfg = quick_config();
  const auto aug = tbps::make_augmenters(cfg);
  const auto a = tbps::assemble_batch(p.data, rows, p.tokens, p.vocab, aug, Rng(4, 3));
  const auto b = tbps::assemble_batch(p.data, rows, p.tokens, p.vocab, aug, Rng(4, 3));
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.images_aug, b.images_aug);
  EXPECT_EQ(a.texts_aug, b.texts_aug);
  ASSERT_EQ(a.size(), 4u);
  ASSERT_EQ(a.images.size(), 4u);
  ASSERT_EQ(a.images_aug.size(), 4u);
  ASSERT_EQ(a.texts.size(), 4u);
  ASSERT_EQ(a.texts_aug.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.identities[i], p.data.samples[rows[i]].identity);
  EXPECT_NE(a.images, a.images_aug);

  cfg.image_aug = tbps::ImageAugMode::None;
  cfg.text_ops.clear();
  const auto none = tbps::assemble_batch(p.data, rows, p.tokens, p.vocab, tbps::make_augmenters(cfg), Rng(4, 3));
  EXPECT_EQ(none.images, none.images_aug);
  EXPECT_EQ(none.texts, none.texts_aug);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(none.images[i], p.data.samples[rows[i]].image);
    EXPECT_EQ(none.texts[i], p.vocab.encode(p.tokens[rows[i]]));
  }

  const std::vector<std::size_t> one{0};
  EXPECT_EQ(code_of([&] { tbps::assemble_batch(p.data, one, p.tokens, p.vocab, aug, Rng(1)); }),
            ErrorCode::BatchTooSmall);
}

Batch random_batch(const ModelConfig& c, std::size_t vocab, Rng& rng) {
  Batch b;
  const std::vector<tbps::IdentityId> ids{0, 1, 0, 2, 3};
  for (auto id : ids) {
    for (auto* dst : {&b.images, &b.images_aug}) {
      Image img(c.image_height, c.image_width);
      for (double& v : img.pixels) v = rng.uniform();
      dst->push_back(img);
    }
    for (auto* dst : {&b.texts, &b.texts_aug}) {
      std::vector<std::size_t> t(1 + rng.below(4));
      for (auto& tok : t) tok = rng.below(vocab);
      dst->push_back(t);
    }
    b.identities.push_back(id);
  }
  return b;
}

// Gradient of the whole production loss stack, through both encoders, on
// every trainable entry including log(tau).
TEST(LossAndGrads, EndToEndFiniteDifferences) {
  const ModelConfig c = small_model();
  Rng rng(5);
  ModelParams p = tbps::init_params(c, 7, Rng(6));
  p.set_log_tau(std::log(0.3));
  const Batch batch = random_batch(c, 7, rng);
  tbps::LossConfig loss = quick_config().loss;
  const Rng dropout(7, tbps::streams::kDropout);
  tbps::Grads grads;
  const auto log = tbps::loss_and_grads(p, batch, loss, dropout, grads);
  EXPECT_EQ(log.terms.size(), 5u);
  double sum = 0.0;
  for (const auto& [name, v] : log.terms) sum += loss.weights.at(name) * v;
  EXPECT_NEAR(log.total, sum, 1e-12);

  auto total = [&](const ModelParams& q) {
    tbps::Grads g;
    return tbps::loss_and_grads(q, batch, loss, dropout, g).total;
  };
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t t = 0; t < p.tensors.size(); ++t)
    for (std::size_t k = 0; k < p.tensors[t].value.size(); k += 3) {
      ModelParams plus = p, minus = p;
      plus.tensors[t].value.values()[k] += 1e-6;
      minus.tensors[t].value.values()[k] -= 1e-6;
      const double fd = (total(plus) - total(minus)) / 2e-6;
      worst = std::max(worst, oracle::rel_err(grads[t].values()[k], fd));
      ++checked;
    }
  EXPECT_GT(checked, 200u);
  EXPECT_LT(worst, 1e-4);
}

TEST(TrainStep, ZeroLrKeepsParamsAndNonFiniteAborts) {
  const ModelConfig c = small_model();
  Rng rng(8);
  ModelParams p = tbps::init_params(c, 7, Rng(9));
  const ModelParams before = p;
  const Batch batch = random_batch(c, 7, rng);
  auto state = tbps::adamw_init(p);
  const auto log = tbps::train_step(p, batch, quick_config().loss, state, tbps::AdamWConfig{}, 0.0,
                                    Rng(1, 4));
  EXPECT_EQ(p, before);
  EXPECT_TRUE(std::isfinite(log.total));

  p["image.proj.weight"](0, 0) = NAN;
  EXPECT_EQ(code_of([&] {
              tbps::train_step(p, batch, quick_config().loss, state, tbps::AdamWConfig{}, 1e-3, Rng(1, 4));
            }),
            ErrorCode::NonFiniteLoss);
}

TEST(Fit, SingleStepDeterminismAndFrozenInvariance) {
  const auto data = small_corpus(10);
  const auto n_train = data.rows(tbps::Split::Train).size();
  TrainConfig one = quick_config();
  one.epochs = 1;
  one.batch_size = n_train;
  EXPECT_EQ(tbps::fit(data, small_model(), one).log.size(), 1u);

  TrainConfig cfg = quick_config();
  cfg.seed = 11;
  cfg.freeze_modules = {"image.patch", "text.hidden.1"};
  const auto a = tbps::fit(data, small_model(), cfg);
  const auto b = tbps::fit(data, small_model(), cfg);
  EXPECT_EQ(a.checkpoint, b.checkpoint);
  EXPECT_EQ(a.log.size(), 2 * tbps::batch_sizes(n_train, 4).size());
  for (const char* m : {"image.patch", "text.hidden.1"})
    for (std::size_t i : a.init.tensors_of(m))
      EXPECT_EQ(a.checkpoint.params.tensors[i].value, a.init.tensors[i].value) << m;
  for (std::size_t i : a.init.tensors_of("image.proj"))
    EXPECT_NE(a.checkpoint.params.tensors[i].value, a.init.tensors[i].value);
  EXPECT_EQ(a.init, tbps::initial_params(small_model(), a.checkpoint.vocab.size(), cfg));

  cfg.seed = 12;
  EXPECT_NE(tbps::fit(data, small_model(), cfg).checkpoint, a.checkpoint);
}

TEST(Fit, LogCsvColumns) {
  tbps::LossConfig simplified;
  simplified.weights = {{"n_itc", 1.0}, {"r_itc", 1.0}};
  const auto terms = tbps::active_terms(simplified);
  EXPECT_EQ(terms, (std::vector<std::string>{"n_itc", "r_itc"}));

  TrainConfig cfg = quick_config();
  cfg.loss = simplified;
  const auto fit = tbps::fit(small_corpus(13), small_model(), cfg);
  for (const auto& rec : fit.log) EXPECT_EQ(rec.terms.size(), 2u);
  std::ostringstream out;
  tbps::write_log_csv(fit.log, terms, out);
  const std::string csv = out.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,lr,n_itc,r_itc,total,tau");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), fit.log.size() + 1);
}

// Default experiment config on the default toy corpus: the mean loss of steps
// 41..50 is below that of steps 1..10 (median over five seeds).
TEST(Fit, DefaultConfigLossDecreasesOverFiftySteps) {
  std::vector<double> deltas;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::vector<std::string> ov{"run.seed=" + std::to_string(seed)};
    const auto cfg = tbps::load_config("", ov);
    const auto data = tbps::generate_toy(cfg.toy, Rng(seed, tbps::streams::kToy)).dataset;
    const auto fit = tbps::fit(data, cfg.model, cfg.train);
    ASSERT_GE(fit.log.size(), 50u);
    double early = 0.0, late = 0.0;
    for (int k = 0; k < 10; ++k) {
      early += fit.log[k].total;
      late += fit.log[40 + k].total;
    }
    deltas.push_back(late - early);
  }
  std::sort(deltas.begin(), deltas.end());
  EXPECT_LT(deltas[2], 0.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  t.batch_size = 1;
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::BatchTooSmall);
  t = TrainConfig{};
  t.epochs = 0;
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::BadConfig);
  t = TrainConfig{};
  t.validate();
  EXPECT_EQ(tbps::active_terms(t.loss),
            (std::vector<std::string>{"n_itc", "r_itc", "c_itc", "ss_i", "mvs_i"}));
}

}  // namespace
