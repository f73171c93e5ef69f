// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tbps/error.hpp"
#include "tbps/model.hpp"

namespace {

using tbps::ErrorCode;
using tbps::Image;
using tbps::Mat;
using tbps::ModelConfig;
using tbps::ModelParams;
using tbps::Rng;

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

ModelConfig small_config() {
  ModelConfig c;
  c.image_height = 8;
  c.image_width = 4;
  c.patch_size = 4;
  c.embed_dim = 5;
  c.hidden_dim = 6;
  c.image_layers = 2;
  c.text_layers = 2;
  c.dropout = 0.0;
  return c;
}

// Counted from the architecture: patch projection with bias and position
// table, residual hidden layers with bias, projections with bias, embedding
// table and log(tau).
std::size_t count_oracle(const ModelConfig& c, std::size_t vocab) {
  const std::size_t h = c.hidden_dim, d = c.embed_dim;
  const std::size_t P = (c.image_height / c.patch_size) * (c.image_width / c.patch_size);
  const std::size_t D = c.patch_size * c.patch_size * 3;
  const std::size_t layer = h * h + h;
  return (h * D + h + P * h) + c.image_layers * layer + (d * h + d) + vocab * h +
         c.text_layers * layer + (d * h + d) + 1;
}

std::vector<Image> random_images(std::size_t n, const ModelConfig& c, Rng& rng) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) {
    Image img(c.image_height, c.image_width);
    for (double& v : img.pixels) v = rng.uniform();
    out.push_back(img);
  }
  return out;
}

void expect_unit_rows(const Mat& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) EXPECT_NEAR(tbps::norm2(m.row(r)), 1.0, 1e-9);
}

TEST(Init, DeterministicTauAndCount) {
  const ModelConfig c;  // 48x24, patch 8, d 32, h 64, L 3
  const auto a = tbps::init_params(c, 50, Rng(3, 1));
  const auto b = tbps::init_params(c, 50, Rng(3, 1));
  const auto other = tbps::init_params(c, 50, Rng(4, 1));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, other);
  EXPECT_NEAR(a.tau(), 0.07, 1e-15);
  EXPECT_EQ(a.parameter_count(), count_oracle(c, 50));
  EXPECT_EQ(tbps::expected_parameter_count(c, 50), count_oracle(c, 50));
  EXPECT_EQ(a.trainable_parameter_count(), a.parameter_count());
  EXPECT_TRUE(a.all_finite());

  for (const auto& t : a.tensors) {
    if (t.name == "temperature.log_tau") continue;
    const double fan_in = t.name == "text.embed.weight" ? 1.0
                          : t.name.starts_with("image.patch") ? c.patch_dim()
                                                              : c.hidden_dim;
    EXPECT_LE(tbps::max_abs(t.value), 1.0 / std::sqrt(fan_in)) << t.name;
  }
}

TEST(Init, ConfigValidation) {
  ModelConfig c;
  c.patch_size = 5;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::BadConfig);
  c = ModelConfig{};
  c.embed_dim = 0;
  EXPECT_EQ(code_of([&] { tbps::init_params(c, 10, Rng(1)); }), ErrorCode::BadConfig);
  c = ModelConfig{};
  c.dropout = 1.0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::BadConfig);
}

TEST(Params, TemperatureClampAndModules) {
  auto p = tbps::init_params(small_config(), 7, Rng(1));
  p.set_log_tau(std::log(0.001));
  EXPECT_NEAR(p.tau(), tbps::kMinTau, 1e-15);
  EXPECT_EQ(tbps::module_of("text.hidden.2.weight"), "text.hidden.2");
  const auto mods = p.modules();
  for (const char* m : {"image.patch", "image.hidden.1", "image.hidden.2", "image.proj", "text.embed",
                        "text.hidden.1", "text.hidden.2", "text.proj", "temperature"})
    EXPECT_NE(std::find(mods.begin(), mods.end(), m), mods.end()) << m;
  EXPECT_EQ(code_of([&] { (void)p["nope.weight"]; }), ErrorCode::BadModule);
}

TEST(Freeze, PaperStyleTextLayerIds) {
  ModelConfig c;
  c.text_layers = 8;
  const auto p = tbps::init_params(c, 40, Rng(2));
  const std::vector<std::string> ids{tbps::text_hidden_module(3), tbps::text_hidden_module(5),
                                     tbps::text_hidden_module(7), tbps::text_hidden_module(8)};
  const auto f = tbps::freeze(p, ids);
  const std::size_t h = c.hidden_dim;
  EXPECT_EQ(f.parameter_count(), p.parameter_count());
  EXPECT_EQ(f.trainable_parameter_count(), p.parameter_count() - 4 * (h * h + h));
  EXPECT_EQ(tbps::freeze(p, {}), p);
  const std::vector<std::string> bad{"text.hidden.9"};
  EXPECT_EQ(code_of([&] { tbps::freeze(p, bad); }), ErrorCode::BadLayerId);
  const std::vector<std::string> bad_drop{"text.proj"};
  EXPECT_EQ(code_of([&] { tbps::drop(p, bad_drop); }), ErrorCode::BadLayerId);

  const auto d = tbps::drop(p, ids);
  EXPECT_EQ(d.trainable_parameter_count(), p.parameter_count() - 4 * (h * h + h));
}

TEST(Encode, UnitNormsZeroImageAndDuplicates) {
  const auto c = small_config();
  const auto p = tbps::init_params(c, 9, Rng(5));
  Rng rng(6);
  auto imgs = random_images(3, c, rng);
  imgs.push_back(Image(c.image_height, c.image_width, 0.0));
  imgs.push_back(imgs[0]);
  const Mat f = tbps::encode_images(p, imgs);
  expect_unit_rows(f);
  EXPECT_TRUE(tbps::all_finite(f.values()));
  for (std::size_t k = 0; k < f.cols(); ++k) EXPECT_EQ(f(0, k), f(4, k));

  const std::vector<std::vector<std::size_t>> ids{{1, 2, 3}, {4}, {1, 2, 3}, {0, 0}};
  const Mat t1 = tbps::encode_texts(p, ids);
  const Mat t2 = tbps::encode_texts(p, ids);
  EXPECT_EQ(t1, t2);
  expect_unit_rows(t1);
  for (std::size_t k = 0; k < t1.cols(); ++k) EXPECT_EQ(t1(0, k), t1(2, k));

  std::vector<Image> wrong{Image(4, 4)};
  EXPECT_EQ(code_of([&] { tbps::encode_images(p, wrong); }), ErrorCode::ShapeMismatch);
  const std::vector<std::vector<std::size_t>> oov{{99}};
  EXPECT_EQ(code_of([&] { tbps::encode_texts(p, oov); }), ErrorCode::ShapeMismatch);
}

TEST(Encode, SingleTokenManualForward) {
  const auto c = small_config();
  const auto p = tbps::init_params(c, 9, Rng(7));
  const std::size_t tok = 4, h = c.hidden_dim, d = c.embed_dim;
  std::vector<double> x(p["text.embed.weight"].row(tok).begin(), p["text.embed.weight"].row(tok).end());
  for (int l = 1; l <= c.text_layers; ++l) {
    const Mat& w = p[tbps::text_hidden_module(l) + ".weight"];
    const Mat& b = p[tbps::text_hidden_module(l) + ".bias"];
    std::vector<double> next = x;
    for (std::size_t i = 0; i < h; ++i) {
      double a = b(0, i);
      for (std::size_t j = 0; j < h; ++j) a += w(i, j) * x[j];
      next[i] += std::max(a, 0.0);
    }
    x = next;
  }
  std::vector<double> y(d);
  for (std::size_t i = 0; i < d; ++i) {
    y[i] = p["text.proj.bias"](0, i);
    for (std::size_t j = 0; j < h; ++j) y[i] += p["text.proj.weight"](i, j) * x[j];
  }
  const double n = tbps::norm2(y);
  const std::vector<std::vector<std::size_t>> ids{{tok}};
  const Mat f = tbps::encode_texts(p, ids);
  for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(f(0, i), y[i] / n, 1e-12);
}

TEST(Encode, DroppedLayerIsBypassed) {
  const auto c = small_config();
  const auto p = tbps::init_params(c, 9, Rng(8));
  const std::vector<std::string> layer{"text.hidden.1"};
  const auto dropped = tbps::drop(p, layer);
  // Same forward as a layer whose ReLU never fires.
  auto dead = p;
  dead["text.hidden.1.weight"] = Mat(c.hidden_dim, c.hidden_dim, 0.0);
  dead["text.hidden.1.bias"] = Mat(1, c.hidden_dim, -1.0);
  const std::vector<std::vector<std::size_t>> ids{{1, 2}, {3}, {5, 6, 7}};
  const Mat a = tbps::encode_texts(dropped, ids);
  const Mat b = tbps::encode_texts(dead, ids);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-14);
}

TEST(Encode, TrainModeDropoutRate) {
  auto c = small_config();
  c.hidden_dim = 64;
  c.text_layers = 3;
  c.dropout = 0.05;
  const auto p = tbps::init_params(c, 20, Rng(9));
  std::vector<std::vector<std::size_t>> ids(600);
  Rng draw(10);
  for (auto& s : ids) s = {draw.below(20), draw.below(20), draw.below(20)};
  Rng dropout(11, 4);
  tbps::TextCache cache;
  const Mat f = tbps::encode_texts(p, ids, &dropout, &cache);
  expect_unit_rows(f);
  std::size_t units = 0, zeros = 0;
  for (const Mat& m : cache.masks)
    for (double v : m.values()) {
      ++units;
      if (v == 0.0) ++zeros;
      else EXPECT_NEAR(v, 1.0 / 0.95, 1e-15);
    }
  ASSERT_GE(units, 100000u);
  EXPECT_NEAR(static_cast<double>(zeros) / units, 0.05, 0.005);
  EXPECT_NE(f, tbps::encode_texts(p, ids));
}

// Loss = sum(w_img .* f_img) + sum(w_txt .* f_txt); every parameter entry
// is checked against central differences.
TEST(Backward, MatchesFiniteDifferences) {
  auto c = small_config();
  c.dropout = 0.2;
  const auto p = tbps::init_params(c, 8, Rng(12));
  Rng rng(13);
  const auto imgs = random_images(2, c, rng);
  const std::vector<std::vector<std::size_t>> ids{{1, 2, 2}, {3, 7}};
  const Mat w_img = oracle::random_mat(2, c.embed_dim, rng);
  const Mat w_txt = oracle::random_mat(2, c.embed_dim, rng);

  auto loss = [&](const ModelParams& q) {
    Rng drop(14, 4);
    const Mat fi = tbps::encode_images(q, imgs);
    const Mat ft = tbps::encode_texts(q, ids, &drop);
    double s = 0.0;
    for (std::size_t k = 0; k < fi.size(); ++k) s += w_img.values()[k] * fi.values()[k];
    for (std::size_t k = 0; k < ft.size(); ++k) s += w_txt.values()[k] * ft.values()[k];
    return s;
  };

  tbps::ImageCache ic;
  tbps::TextCache tc;
  Rng drop(14, 4);
  tbps::encode_images(p, imgs, &ic);
  tbps::encode_texts(p, ids, &drop, &tc);
  auto grads = tbps::zero_grads(p);
  tbps::backward_images(p, ic, w_img, grads);
  tbps::backward_texts(p, tc, w_txt, grads);

  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    if (p.tensors[t].name == "temperature.log_tau") continue;
    for (std::size_t k = 0; k < p.tensors[t].value.size(); ++k) {
      ModelParams plus = p, minus = p;
      plus.tensors[t].value.values()[k] += 1e-6;
      minus.tensors[t].value.values()[k] -= 1e-6;
      const double fd = (loss(plus) - loss(minus)) / 2e-6;
      worst = std::max(worst, oracle::rel_err(grads[t].values()[k], fd));
      ++checked;
    }
  }
  EXPECT_GT(checked, 500u);
  EXPECT_LT(worst, 1e-4);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelConfig c = small_config();
  c.tau_init = 0.05;
  auto p = tbps::init_params(c, 6, Rng(15));
  const std::vector<std::string> f{"image.patch"}, d{"text.hidden.2"};
  p = tbps::drop(tbps::freeze(p, f), d);
  p["image.proj.weight"](0, 0) = 1.0 / 3.0;
  p["image.proj.weight"](0, 1) = -0.0;
  p["image.proj.weight"](0, 2) = 5e-324;
  const tbps::Checkpoint ckpt{p, tbps::Vocab::from_words({"a", "b", "c", "d", "e"})};
  std::stringstream ss;
  tbps::save_checkpoint(ckpt, ss);
  const auto back = tbps::load_checkpoint(ss);
  EXPECT_EQ(back, ckpt);
  EXPECT_TRUE(std::signbit(back.params["image.proj.weight"](0, 1)));
  EXPECT_EQ(back.params.frozen, p.frozen);
  EXPECT_EQ(back.params.dropped, p.dropped);

  std::stringstream again;
  tbps::save_checkpoint(back, again);
  std::stringstream first;
  tbps::save_checkpoint(ckpt, first);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Checkpoint, RejectsCorruptInput) {
  const auto p = tbps::init_params(small_config(), 6, Rng(16));
  const tbps::Checkpoint ckpt{p, tbps::Vocab::from_words({"a", "b", "c", "d", "e"})};
  std::stringstream ss;
  tbps::save_checkpoint(ckpt, ss);
  const std::string text = ss.str();
  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_EQ(code_of([&] { tbps::load_checkpoint(truncated); }), ErrorCode::ParseError);
  std::stringstream garbage("not a checkpoint\n");
  EXPECT_EQ(code_of([&] { tbps::load_checkpoint(garbage); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([&] { tbps::load_checkpoint(std::string("/nonexistent/ckpt.tbps")); }),
            ErrorCode::IoError);
}

}  // namespace
