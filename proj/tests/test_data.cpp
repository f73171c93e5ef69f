// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tbps/data.hpp"
#include "tbps/error.hpp"
#include "tbps/text.hpp"

namespace {

namespace fs = std::filesystem;
using tbps::Dataset;
using tbps::ErrorCode;
using tbps::IdentityId;
using tbps::Rng;
using tbps::Split;
using tbps::ToySpec;

template <typename F>
std::pair<ErrorCode, std::string> error_of(F&& f) {
  try {
    f();
  } catch (const tbps::Error& e) {
    return {e.code(), e.what()};
  }
  ADD_FAILURE() << "no tbps::Error thrown";
  return {ErrorCode::IoError, ""};
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tbps_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::set<IdentityId> identities(const Dataset& d, Split split) {
  std::set<IdentityId> out;
  for (const auto& s : d.samples)
    if (s.split == split) out.insert(s.identity);
  return out;
}

TEST(Toy, SingleSample) {
  ToySpec spec;
  spec.n_identities = 1;
  spec.images_per_identity = 1;
  spec.captions_per_image = 1;
  spec.test_fraction = 0.0;
  const auto corpus = tbps::generate_toy(spec, Rng(1, 6));
  ASSERT_EQ(corpus.dataset.size(), 1u);
  EXPECT_EQ(corpus.dataset.samples[0].image.height, 48);
  EXPECT_EQ(corpus.dataset.samples[0].image.width, 24);
}

TEST(Toy, DefaultCorpusShapeSplitsAndDeterminism) {
  const ToySpec spec;
  const auto a = tbps::generate_toy(spec, Rng(2, 6));
  const auto b = tbps::generate_toy(spec, Rng(2, 6));
  EXPECT_EQ(a.dataset, b.dataset);
  EXPECT_NE(a.dataset, tbps::generate_toy(spec, Rng(3, 6)).dataset);
  EXPECT_EQ(a.dataset.size(), 200u * 3 * 2);

  const auto train = identities(a.dataset, Split::Train);
  const auto test = identities(a.dataset, Split::Test);
  EXPECT_EQ(train.size() + test.size(), 200u);
  EXPECT_EQ(test.size(), 40u);
  for (auto id : test) EXPECT_FALSE(train.contains(id));

  std::set<std::vector<int>> tuples;
  for (const auto& [id, attrs] : a.attributes)
    tuples.insert({attrs.upper_color, attrs.upper_garment, attrs.lower_color, attrs.lower_garment,
                   attrs.accessory});
  EXPECT_EQ(tuples.size(), 200u);

  for (const auto& s : a.dataset.samples) {
    EXPECT_GE(tbps::tokenize(s.caption).size(), 3u);
    EXPECT_GE(s.identity, 0);
    for (double v : s.image.pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Toy, SpecTooLarge) {
  ToySpec spec;
  spec.n_identities = static_cast<int>(spec.capacity()) + 1;
  EXPECT_EQ(error_of([&] { tbps::generate_toy(spec, Rng(1)); }).first, ErrorCode::SpecTooLarge);
}

// A caption's attribute words identify its person: among identities whose
// word multiset is contained in the caption, the largest is the right one.
TEST(Toy, BagOfWordsMatcherIsPerfect) {
  const ToySpec spec;
  const auto corpus = tbps::generate_toy(spec, Rng(4, 6));
  const auto test_ids = identities(corpus.dataset, Split::Test);
  std::map<IdentityId, std::multiset<std::string>> bags;
  for (auto id : test_ids) {
    const auto w = tbps::attribute_words(spec, corpus.attributes.at(id));
    bags[id] = {w.begin(), w.end()};
  }
  std::size_t queries = 0, correct = 0;
  for (const auto& s : corpus.dataset.samples) {
    if (s.split != Split::Test) continue;
    const auto tok = tbps::tokenize(s.caption).tokens;
    const std::multiset<std::string> caption(tok.begin(), tok.end());
    IdentityId best = -1;
    std::size_t best_size = 0, ties = 0;
    for (const auto& [id, bag] : bags) {
      if (!std::includes(caption.begin(), caption.end(), bag.begin(), bag.end())) continue;
      if (bag.size() > best_size) {
        best = id;
        best_size = bag.size();
        ties = 1;
      } else if (bag.size() == best_size) {
        ++ties;
      }
    }
    ++queries;
    correct += (best == s.identity && ties == 1);
  }
  EXPECT_GT(queries, 0u);
  EXPECT_EQ(correct, queries);
}

TEST(Jsonl, RoundTripOfToyCorpus) {
  ToySpec spec;
  spec.n_identities = 12;
  const auto d = tbps::generate_toy(spec, Rng(5, 6)).dataset;
  EXPECT_EQ(tbps::parse_jsonl(tbps::to_jsonl(d)), d);
  const auto dir = temp_dir("roundtrip");
  tbps::save_jsonl(d, (dir / "d.jsonl").string());
  EXPECT_EQ(tbps::load_jsonl((dir / "d.jsonl").string()), d);
  fs::remove_all(dir);
}

TEST(Jsonl, EmptyMalformedAndMissing) {
  EXPECT_EQ(tbps::parse_jsonl("").size(), 0u);
  const std::string good =
      R"({"identity":1,"split":"train","caption":"a red shirt","image":{"height":1,"width":1,"encoding":"rgb8-base64","data":"AAAA"}})";
  const auto [code, msg] = error_of([&] { tbps::parse_jsonl(good + "\n" + good + "\n{broken\n"); });
  EXPECT_EQ(code, ErrorCode::ParseError);
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  const std::string missing = R"({"identity":1,"split":"train","image":{"height":1,"width":1,"encoding":"rgb8-base64","data":"AAAA"}})";
  EXPECT_EQ(error_of([&] { tbps::parse_jsonl(missing); }).first, ErrorCode::MissingField);
  const auto one = tbps::parse_jsonl(good + "\n\n");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one.samples[0].image.pixels, std::vector<double>(3, 0.0));
}

TEST(Jsonl, PpmImagePaths) {
  const auto dir = temp_dir("ppm");
  tbps::Image img(2, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i * 10) / 255.0;
  tbps::write_ppm(img, (dir / "p.ppm").string());
  EXPECT_EQ(tbps::read_ppm((dir / "p.ppm").string()), img);
  std::ofstream(dir / "d.jsonl") << R"({"identity":4,"split":"test","caption":"blue coat","image":"p.ppm"})" << "\n";
  const auto d = tbps::load_jsonl((dir / "d.jsonl").string());
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.samples[0].image, img);
  EXPECT_EQ(d.samples[0].split, Split::Test);
  EXPECT_EQ(d.samples[0].image_path, "p.ppm");
  tbps::save_jsonl(d, (dir / "e.jsonl").string());
  EXPECT_EQ(tbps::load_jsonl((dir / "e.jsonl").string()), d);
  fs::remove_all(dir);
}

TEST(Base64, KnownVectorsAndRoundTrip) {
  auto bytes = [](std::string s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  EXPECT_EQ(tbps::base64_encode(bytes("foobar")), "Zm9vYmFy");
  EXPECT_EQ(tbps::base64_encode(bytes("fo")), "Zm8=");
  EXPECT_EQ(tbps::base64_decode("Zm9vYg=="), bytes("foob"));
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::uint8_t> b(rng.below(40));
    for (auto& v : b) v = static_cast<std::uint8_t>(rng.below(256));
    EXPECT_EQ(tbps::base64_decode(tbps::base64_encode(b)), b);
  }
}

TEST(Fewshot, CountingOracleAndDeterminism) {
  const auto d = tbps::generate_toy(ToySpec{}, Rng(7, 6)).dataset;
  const std::size_t n_train = d.rows(Split::Train).size();
  const std::size_t per_identity = 3 * 2;
  EXPECT_EQ(tbps::fewshot_subsample(d, 1.0, Rng(1)), d);
  for (double f : {0.01, 0.05, 0.1, 0.5}) {
    const auto sub = tbps::fewshot_subsample(d, f, Rng(8, 5));
    const std::size_t rows = sub.rows(Split::Train).size();
    EXPECT_GE(static_cast<double>(rows), f * n_train);
    EXPECT_LE(static_cast<double>(rows), f * n_train + per_identity);
    EXPECT_EQ(sub.subset(Split::Test), d.subset(Split::Test));
    EXPECT_EQ(tbps::fewshot_subsample(d, f, Rng(8, 5)), sub);
    // Whole identities only, in original order.
    std::map<IdentityId, std::size_t> counts;
    for (const auto& s : sub.samples)
      if (s.split == Split::Train) ++counts[s.identity];
    for (const auto& [id, c] : counts) EXPECT_EQ(c, per_identity);
    std::size_t j = 0;
    for (const auto& s : d.samples)
      if (j < sub.size() && s == sub.samples[j]) ++j;
    EXPECT_EQ(j, sub.size());
  }
  EXPECT_EQ(error_of([&] { tbps::fewshot_subsample(d, 0.0, Rng(1)); }).first, ErrorCode::FractionOutOfRange);
  EXPECT_EQ(error_of([&] { tbps::fewshot_subsample(d, 1.5, Rng(1)); }).first, ErrorCode::FractionOutOfRange);
}

TEST(Splits, NamesRoundTrip) {
  for (auto s : {Split::Train, Split::Val, Split::Test}) EXPECT_EQ(tbps::parse_split(tbps::split_name(s)), s);
}

}  // namespace
