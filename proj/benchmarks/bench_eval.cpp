// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "tbps/eval.hpp"

namespace {

tbps::RankingProblem make_problem(std::size_t queries, std::size_t gallery) {
  tbps::Rng rng(4);
  tbps::RankingProblem p;
  auto draw = [&](std::size_t rows) {
    tbps::Mat m(rows, 32);
    for (double& v : m.values()) v = rng.normal();
    return tbps::l2_normalize_rows(m);
  };
  p.queries = draw(queries);
  p.gallery = draw(gallery);
  for (std::size_t g = 0; g < gallery; ++g) p.gallery_ids.push_back(static_cast<tbps::IdentityId>(g / 3));
  for (std::size_t q = 0; q < queries; ++q) p.query_ids.push_back(static_cast<tbps::IdentityId>(q / 6));
  return p;
}

void BM_Evaluate(benchmark::State& state) {
  const auto g = static_cast<std::size_t>(state.range(0));
  const auto p = make_problem(2 * g, g);
  for (auto _ : state) benchmark::DoNotOptimize(tbps::evaluate(p));
}
BENCHMARK(BM_Evaluate)->Arg(120)->Arg(600);

}  // namespace

BENCHMARK_MAIN();
