// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "tbps/losses.hpp"
#include "tbps/rng.hpp"

namespace {

using tbps::EmbeddingBatch;
using tbps::Mat;

struct Inputs {
  EmbeddingBatch img, txt, img2, txt2;
  tbps::LabelMatrix labels;
};

Inputs make_inputs(std::size_t n, std::size_t d) {
  tbps::Rng rng(1);
  auto draw = [&] {
    Mat m(n, d);
    for (double& v : m.values()) v = rng.normal();
    return m;
  };
  std::vector<tbps::IdentityId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<tbps::IdentityId>(i / 2);
  Inputs in{EmbeddingBatch::from_raw(draw(), ids), EmbeddingBatch::from_raw(draw(), ids),
            EmbeddingBatch::from_raw(draw(), ids), EmbeddingBatch::from_raw(draw(), ids), {}};
  in.labels = tbps::build_labels(ids, ids);
  return in;
}

void BM_NItc(benchmark::State& state) {
  const auto in = make_inputs(static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(tbps::n_itc(in.img, in.txt, in.labels, 0.07));
}
BENCHMARK(BM_NItc)->Arg(16)->Arg(64)->Arg(128);

void BM_RItc(benchmark::State& state) {
  const auto in = make_inputs(static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(tbps::r_itc(in.img, in.txt, in.labels, 0.07, 1e-8));
}
BENCHMARK(BM_RItc)->Arg(16)->Arg(64)->Arg(128);

void BM_CItc(benchmark::State& state) {
  const auto in = make_inputs(static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(tbps::c_itc(in.img, in.txt));
}
BENCHMARK(BM_CItc)->Arg(16)->Arg(64)->Arg(128);

void BM_MvsTerms(benchmark::State& state) {
  const auto in = make_inputs(static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state)
    benchmark::DoNotOptimize(tbps::mvs_terms(in.img, in.img2, in.txt2, in.txt, in.labels, 0.07));
}
BENCHMARK(BM_MvsTerms)->Arg(16)->Arg(64);

}  // namespace
