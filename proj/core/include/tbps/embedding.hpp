// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "tbps/numerics.hpp"

namespace tbps {

using IdentityId = std::int64_t;

/// N x d feature rows with one identity label per row.
struct EmbeddingBatch {
  Mat features;
  std::vector<IdentityId> identities;
  bool normalized = false;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }

  /// Builds a batch from raw rows, L2-normalizing each.
  static EmbeddingBatch from_raw(const Mat& raw, std::vector<IdentityId> ids);
};

/// result(i, j) = a_i . b_j. Throws DimMismatch when dimensions differ.
Mat sim_matrix(const EmbeddingBatch& a, const EmbeddingBatch& b);

/// Concatenates rows of two batches with equal dimension.
EmbeddingBatch concat_rows(const EmbeddingBatch& top, const EmbeddingBatch& bottom);

}  // namespace tbps
