// SPDX-License-Identifier: Apache-2.0
#include "tbps/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>

#include <json.hpp>

#include "tbps/error.hpp"

namespace tbps {

namespace {

void check_lengths(const Rankings& rankings, std::span<const IdentityId> query_ids) {
  if (rankings.size() != query_ids.size())
    throw Error(ErrorCode::LengthMismatch, "one ranking per query is required");
}

std::size_t count_positives(IdentityId q, std::span<const IdentityId> gallery_ids) {
  return static_cast<std::size_t>(std::count(gallery_ids.begin(), gallery_ids.end(), q));
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Rankings rank_gallery(const RankingProblem& p) {
  if (p.gallery.rows() == 0) throw Error(ErrorCode::EmptyGallery, "gallery is empty");
  if (p.queries.cols() != p.gallery.cols())
    throw Error(ErrorCode::DimMismatch, "query and gallery dimensions differ");
  if (p.query_ids.size() != p.queries.rows() || p.gallery_ids.size() != p.gallery.rows())
    throw Error(ErrorCode::LengthMismatch, "one identity per row is required");
  const Mat sims = matmul_nt(p.queries, p.gallery);
  Rankings out(p.queries.rows());
  for (std::size_t q = 0; q < p.queries.rows(); ++q) {
    auto& order = out[q];
    order.resize(p.gallery.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto row = sims.row(q);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });
  }
  return out;
}

double rank_k(const Rankings& rankings, std::span<const IdentityId> query_ids,
              std::span<const IdentityId> gallery_ids, std::size_t k) {
  check_lengths(rankings, query_ids);
  if (k == 0) throw Error(ErrorCode::BadParam, "k must be >= 1");
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const std::size_t top = std::min(k, rankings[q].size());
    for (std::size_t r = 0; r < top; ++r)
      if (gallery_ids[rankings[q][r]] == query_ids[q]) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

std::vector<double> average_precisions(const Rankings& rankings,
                                       std::span<const IdentityId> query_ids,
                                       std::span<const IdentityId> gallery_ids) {
  check_lengths(rankings, query_ids);
  std::vector<double> out;
  out.reserve(rankings.size());
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const std::size_t positives = count_positives(query_ids[q], gallery_ids);
    if (positives == 0)
      throw Error(ErrorCode::NoPositive, "query " + std::to_string(q) + " has no positive");
    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t r = 0; r < rankings[q].size(); ++r)
      if (gallery_ids[rankings[q][r]] == query_ids[q]) {
        ++seen;
        sum += static_cast<double>(seen) / static_cast<double>(r + 1);
      }
    out.push_back(sum / static_cast<double>(positives));
  }
  return out;
}

double mean_ap(const Rankings& rankings, std::span<const IdentityId> query_ids,
               std::span<const IdentityId> gallery_ids) {
  return mean(average_precisions(rankings, query_ids, gallery_ids));
}

std::vector<double> inverse_negative_penalties(const Rankings& rankings,
                                               std::span<const IdentityId> query_ids,
                                               std::span<const IdentityId> gallery_ids) {
  check_lengths(rankings, query_ids);
  std::vector<double> out;
  out.reserve(rankings.size());
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const std::size_t positives = count_positives(query_ids[q], gallery_ids);
    if (positives == 0)
      throw Error(ErrorCode::NoPositive, "query " + std::to_string(q) + " has no positive");
    std::size_t hardest = 0;
    for (std::size_t r = 0; r < rankings[q].size(); ++r)
      if (gallery_ids[rankings[q][r]] == query_ids[q]) hardest = r + 1;
    out.push_back(static_cast<double>(positives) / static_cast<double>(hardest));
  }
  return out;
}

double mean_inp(const Rankings& rankings, std::span<const IdentityId> query_ids,
                std::span<const IdentityId> gallery_ids) {
  return mean(inverse_negative_penalties(rankings, query_ids, gallery_ids));
}

RetrievalReport evaluate(const RankingProblem& problem) {
  const Rankings rk = rank_gallery(problem);
  RetrievalReport r;
  r.rank1 = rank_k(rk, problem.query_ids, problem.gallery_ids, 1);
  r.rank5 = rank_k(rk, problem.query_ids, problem.gallery_ids, 5);
  r.rank10 = rank_k(rk, problem.query_ids, problem.gallery_ids, 10);
  r.average_precisions = average_precisions(rk, problem.query_ids, problem.gallery_ids);
  r.map = mean(r.average_precisions);
  r.minp = mean_inp(rk, problem.query_ids, problem.gallery_ids);
  r.queries = problem.queries.rows();
  r.gallery = problem.gallery.rows();
  return r;
}

RankingProblem build_problem(const Checkpoint& ckpt, const Dataset& dataset, Split split) {
  constexpr std::size_t kChunk = 256;
  std::vector<std::vector<std::size_t>> query_tokens;
  std::vector<Image> gallery_images;
  RankingProblem p;
  std::map<std::pair<IdentityId, std::vector<double>>, std::size_t> seen;
  for (const auto& s : dataset.samples) {
    if (s.split != split) continue;
    query_tokens.push_back(ckpt.vocab.encode(truncate(tokenize(s.caption))));
    if (query_tokens.back().empty())
      query_tokens.back().push_back(Vocab::kUnk);
    p.query_ids.push_back(s.identity);
    if (seen.emplace(std::make_pair(s.identity, s.image.pixels), gallery_images.size()).second) {
      gallery_images.push_back(s.image);
      p.gallery_ids.push_back(s.identity);
    }
  }
  if (gallery_images.empty()) throw Error(ErrorCode::EmptyGallery, "split has no images");

  const auto stack = [](Mat& into, const Mat& part) {
    if (into.empty()) {
      into = part;
      return;
    }
    Mat next(into.rows() + part.rows(), into.cols());
    std::copy(into.values().begin(), into.values().end(), next.values().begin());
    std::copy(part.values().begin(), part.values().end(),
              next.values().begin() + static_cast<std::ptrdiff_t>(into.size()));
    into = std::move(next);
  };
  for (std::size_t b = 0; b < query_tokens.size(); b += kChunk) {
    const std::size_t n = std::min(kChunk, query_tokens.size() - b);
    stack(p.queries, encode_texts(ckpt.params, std::span(query_tokens).subspan(b, n)));
  }
  for (std::size_t b = 0; b < gallery_images.size(); b += kChunk) {
    const std::size_t n = std::min(kChunk, gallery_images.size() - b);
    stack(p.gallery, encode_images(ckpt.params, std::span(gallery_images).subspan(b, n)));
  }
  return p;
}

RetrievalReport evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& dataset, Split split) {
  return evaluate(build_problem(ckpt, dataset, split));
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

constexpr const char* kConvention =
    "text-to-image; every caption is a query; AP averages precision at each positive; "
    "INP = positives / rank of the hardest positive";

}  // namespace

std::string report_json(const RetrievalReport& r, const std::string& fingerprint,
                        std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["convention"] = kConvention;
  j["config_fingerprint"] = fingerprint;
  j["seed"] = seed;
  j["queries"] = r.queries;
  j["gallery"] = r.gallery;
  j["rank1"] = r.rank1;
  j["rank5"] = r.rank5;
  j["rank10"] = r.rank10;
  j["mAP"] = r.map;
  j["mINP"] = r.minp;
  j["per_query_ap"] = r.average_precisions;
  return j.dump(2) + "\n";
}

std::string report_csv(const RetrievalReport& r, const std::string& fingerprint,
                       std::uint64_t seed) {
  std::string out = "# seed=" + std::to_string(seed) + " config=" + fingerprint + "\n";
  out += "# " + std::string(kConvention) + "\n";
  out += "queries,gallery,rank1,rank5,rank10,mAP,mINP\n";
  out += std::to_string(r.queries) + "," + std::to_string(r.gallery) + "," + num(r.rank1) + "," +
         num(r.rank5) + "," + num(r.rank10) + "," + num(r.map) + "," + num(r.minp) + "\n";
  return out;
}

}  // namespace tbps
