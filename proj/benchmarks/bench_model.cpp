// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "tbps/model.hpp"

namespace {

tbps::ModelConfig toy_model() {
  tbps::ModelConfig c;
  c.patch_size = 4;
  c.hidden_dim = 96;
  c.embed_dim = 32;
  c.image_layers = 3;
  c.text_layers = 3;
  return c;
}

void BM_EncodeImages(benchmark::State& state) {
  const auto params = tbps::init_params(toy_model(), 64, tbps::Rng(1));
  tbps::Rng rng(2);
  std::vector<tbps::Image> images(static_cast<std::size_t>(state.range(0)), tbps::Image(48, 24));
  for (auto& img : images)
    for (double& v : img.pixels) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(tbps::encode_images(params, images));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeImages)->Arg(32);

void BM_EncodeTexts(benchmark::State& state) {
  const auto params = tbps::init_params(toy_model(), 64, tbps::Rng(1));
  tbps::Rng rng(3);
  std::vector<std::vector<std::size_t>> ids(static_cast<std::size_t>(state.range(0)));
  for (auto& s : ids)
    for (int t = 0; t < 20; ++t) s.push_back(rng.below(64));
  for (auto _ : state) benchmark::DoNotOptimize(tbps::encode_texts(params, ids));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeTexts)->Arg(32);

}  // namespace
