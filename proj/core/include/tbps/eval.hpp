// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tbps/data.hpp"
#include "tbps/embedding.hpp"
#include "tbps/model.hpp"

namespace tbps {

/// Text queries against an image gallery; rows are unit-norm.
struct RankingProblem {
  Mat queries;
  Mat gallery;
  std::vector<IdentityId> query_ids;
  std::vector<IdentityId> gallery_ids;
};

using Rankings = std::vector<std::vector<std::size_t>>;

/// Gallery indices per query by descending cosine similarity, ties broken by
/// ascending gallery index. Throws EmptyGallery.
Rankings rank_gallery(const RankingProblem& problem);

/// Fraction of queries with a same-identity item in the top k.
double rank_k(const Rankings& rankings, std::span<const IdentityId> query_ids,
              std::span<const IdentityId> gallery_ids, std::size_t k);

/// Per query: mean over positives of precision at the positive's rank.
/// Throws NoPositive.
std::vector<double> average_precisions(const Rankings& rankings,
                                       std::span<const IdentityId> query_ids,
                                       std::span<const IdentityId> gallery_ids);
double mean_ap(const Rankings& rankings, std::span<const IdentityId> query_ids,
               std::span<const IdentityId> gallery_ids);

/// Per query: |positives| / rank of the hardest positive. Throws NoPositive.
std::vector<double> inverse_negative_penalties(const Rankings& rankings,
                                               std::span<const IdentityId> query_ids,
                                               std::span<const IdentityId> gallery_ids);
double mean_inp(const Rankings& rankings, std::span<const IdentityId> query_ids,
                std::span<const IdentityId> gallery_ids);

struct RetrievalReport {
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  double map = 0.0;
  double minp = 0.0;
  std::vector<double> average_precisions;
  std::size_t queries = 0;
  std::size_t gallery = 0;

  friend bool operator==(const RetrievalReport&, const RetrievalReport&) = default;
};

RetrievalReport evaluate(const RankingProblem& problem);

/// Every caption of `split` is a query; the gallery holds the split's distinct
/// images (deduplicated by identity and pixels) in first-appearance order.
RankingProblem build_problem(const Checkpoint& ckpt, const Dataset& dataset,
                             Split split = Split::Test);
RetrievalReport evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& dataset,
                                    Split split = Split::Test);

/// Report with the metric convention, config fingerprint and seed.
std::string report_json(const RetrievalReport& report, const std::string& fingerprint,
                        std::uint64_t seed);
std::string report_csv(const RetrievalReport& report, const std::string& fingerprint,
                       std::uint64_t seed);

}  // namespace tbps
