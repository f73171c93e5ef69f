// SPDX-License-Identifier: Apache-2.0
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tbps/config.hpp"
#include "tbps/error.hpp"

namespace {

using tbps::ErrorCode;
using tbps::ExperimentConfig;

std::pair<ErrorCode, std::string> error_of(const std::string& ini, std::vector<std::string> overrides = {}) {
  try {
    tbps::parse_config(ini, overrides);
  } catch (const tbps::Error& e) {
    return {e.code(), e.what()};
  }
  ADD_FAILURE() << "config accepted: " << ini;
  return {ErrorCode::IoError, ""};
}

std::map<std::string, double> weights(const ExperimentConfig& c) {
  std::map<std::string, double> out;
  for (const auto& [term, w] : c.train.loss.weights)
    if (w != 0.0) out[term] = w;
  return out;
}

TEST(Config, DefaultIsTbpsClipPreset) {
  const auto c = tbps::parse_config("");
  EXPECT_EQ(c.preset, "tbps-clip");
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(weights(c), (std::map<std::string, double>{
                            {"n_itc", 1.0}, {"ss_i", 1.0}, {"mvs_i", 1.0}, {"r_itc", 1.0}, {"c_itc", 0.1}}));
  EXPECT_TRUE(c.train.loss.soft_label_enabled);
  EXPECT_EQ(c.train.image_aug, tbps::ImageAugMode::Pool);
  EXPECT_FALSE(c.train.text_ops.empty());
  EXPECT_EQ(c.toy.n_identities, 200);
  EXPECT_EQ(c.toy.images_per_identity, 3);
  EXPECT_EQ(c.toy.captions_per_image, 2);
  EXPECT_EQ(c.epsilon, 3.0);
  EXPECT_TRUE(c.train.freeze_modules.empty());
}

TEST(Config, PresetsDifferOnlyInTheirLossesAndTricks) {
  for (const auto& name : tbps::preset_names()) {
    const auto c = tbps::parse_config("[run]\npreset = " + name + "\n");
    EXPECT_EQ(c.preset, name);
    EXPECT_FALSE(weights(c).empty()) << name;
  }
  const auto simplified = tbps::parse_config("", std::vector<std::string>{"run.preset=simplified"});
  EXPECT_EQ(weights(simplified), (std::map<std::string, double>{{"n_itc", 1.0}, {"r_itc", 1.0}}));
  const auto nitc = tbps::parse_config("", std::vector<std::string>{"--run.preset=n-itc"});
  EXPECT_EQ(weights(nitc), (std::map<std::string, double>{{"n_itc", 1.0}}));
  const auto clip = tbps::parse_config("", std::vector<std::string>{"run.preset=clip-baseline"});
  EXPECT_EQ(weights(clip), (std::map<std::string, double>{{"itc", 1.0}}));
  EXPECT_EQ(clip.train.image_aug, tbps::ImageAugMode::None);
  EXPECT_TRUE(clip.train.text_ops.empty());
  EXPECT_EQ(clip.model.dropout, 0.0);
  const auto star = tbps::parse_config("", std::vector<std::string>{"run.preset=clip-star"});
  EXPECT_EQ(star.train.freeze_modules, std::vector<std::string>{"image.patch"});
  EXPECT_TRUE(star.train.loss.soft_label_enabled);
  EXPECT_EQ(error_of("[run]\npreset = tbps\n").first, ErrorCode::ConfigError);
}

TEST(Config, FileThenOverridesThenValidation) {
  const std::string ini =
      "# comment\n[run]\nseed = 5\n\n[train]\nepochs = 3\nbatch_size = 16\n[loss]\nc_itc = 0.5\n";
  const auto c = tbps::parse_config(ini);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.batch_size, 16u);
  EXPECT_EQ(weights(c).at("c_itc"), 0.5);
  // Overrides win over the file.
  const auto o = tbps::parse_config(ini, std::vector<std::string>{"train.epochs=7", "--run.seed=9"});
  EXPECT_EQ(o.train.epochs, 7);
  EXPECT_EQ(o.seed, 9u);
  // File values win over the preset.
  const auto p = tbps::parse_config("[run]\npreset = n-itc\n[loss]\nr_itc = 2\n");
  EXPECT_EQ(weights(p), (std::map<std::string, double>{{"n_itc", 1.0}, {"r_itc", 2.0}}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  const auto [code, msg] = error_of("[train]\nepoch = 3\n");
  EXPECT_EQ(code, ErrorCode::ConfigError);
  EXPECT_NE(msg.find("train.epoch"), std::string::npos) << msg;
  EXPECT_EQ(error_of("", {"model.depth=3"}).first, ErrorCode::ConfigError);
  EXPECT_EQ(error_of("", {"train.epochs"}).first, ErrorCode::ConfigError);
  EXPECT_EQ(error_of("seed = 1\n").first, ErrorCode::ConfigError);
  EXPECT_EQ(error_of("[train\n").first, ErrorCode::ConfigError);

  const std::vector<std::pair<std::string, std::string>> bad = {
      {"train.epochs", "0"},           {"train.epochs", "three"},     {"train.batch_size", "1"},
      {"loss.r_itc", "-1"},            {"augment.image_mode", "all"}, {"augment.text_ops", "shout"},
      {"augment.image_pool", "blur"},  {"train.freeze", "text.nope"}, {"eval.split", "dev"},
      {"analyze.epsilon", "0"},        {"analyze.mode", "prune"},     {"analyze.x_max", "9"},
      {"analyze.modules", "foo"},      {"fewshot.fractions", "0"},    {"fewshot.fractions", "1.5"},
      {"data.source", "web"},          {"data.source", "jsonl"},      {"model.dropout", "1.5"},
      {"train.lr_peak", "-1"},
  };
  for (const auto& [key, value] : bad) {
    const auto [c, m] = error_of("", {key + "=" + value});
    EXPECT_EQ(c, ErrorCode::ConfigError) << key << "=" << value;
    EXPECT_NE(m.find(key), std::string::npos) << key << "=" << value << ": " << m;
  }
}

TEST(Config, FingerprintIsStableAndSensitive) {
  const auto a = tbps::parse_config("");
  const auto b = tbps::parse_config("[train]\nepochs = 20\n");
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(a.fingerprint().size(), 64u);
  EXPECT_NE(a.fingerprint(), tbps::parse_config("", std::vector<std::string>{"run.seed=1"}).fingerprint());
  EXPECT_NE(a.fingerprint(), tbps::parse_config("", std::vector<std::string>{"loss.c_itc=0.2"}).fingerprint());
  // Canonical values: equivalent spellings resolve identically.
  EXPECT_EQ(tbps::parse_config("", std::vector<std::string>{"train.lr_peak=3e-3"}).fingerprint(), a.fingerprint());
  // The resolved INI reproduces the same config.
  const auto round = tbps::parse_config(a.to_ini());
  EXPECT_EQ(round.to_ini(), a.to_ini());
  EXPECT_EQ(round.fingerprint(), a.fingerprint());
}

TEST(Config, WithValuesAppliesOnTopOfResolvedConfig) {
  const auto base = tbps::parse_config("", std::vector<std::string>{"run.preset=simplified"});
  const auto c = tbps::with_values(base, {{"augment.image_mode", "none"}, {"augment.text_ops", ""}});
  EXPECT_EQ(c.train.image_aug, tbps::ImageAugMode::None);
  EXPECT_TRUE(c.train.text_ops.empty());
  EXPECT_EQ(weights(c), weights(base));
  try {
    tbps::with_values(base, {{"nope.key", "1"}});
    ADD_FAILURE() << "unknown key accepted";
  } catch (const tbps::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

TEST(Config, Sha256KnownVectors) {
  EXPECT_EQ(tbps::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(tbps::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Config, MissingFile) {
  try {
    tbps::load_config("/nonexistent/tbps.ini");
    ADD_FAILURE() << "missing file accepted";
  } catch (const tbps::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

}  // namespace
