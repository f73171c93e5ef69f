// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tbps/embedding.hpp"
#include "tbps/numerics.hpp"

namespace tbps {

/// Ground-truth matching labels keyed on identity.
///
/// q(i, j) = 1 iff image i and text j share an identity. q_hat holds the
/// row-normalized image->text targets and q_hat_t2i the row-normalized
/// text->image targets (rows of q^T). Soft labels replace both targets.
struct LabelMatrix {
  Mat q;
  Mat q_hat;
  Mat q_hat_t2i;
};

/// Scalar loss with gradients on both input batches and on log(tau).
///
/// For losses over a single batch of views (ss_loss) the gradient lives in
/// grad_image and grad_text is empty.
struct LossResult {
  double value = 0.0;
  Mat grad_image;
  Mat grad_text;
  double grad_log_tau = 0.0;
};

struct LossConfig {
  /// Term name -> weight. Known names: itc, n_itc, r_itc, c_itc, ss_i, ss_t,
  /// mvs_i, mvs_t, mvs_it.
  std::map<std::string, double> weights;
  double tau_s = 0.1;
  double eps = 1e-8;
  bool soft_label_enabled = false;  // softens the itc and n_itc targets

  bool active(const std::string& name) const;
  void validate() const;
};

const std::vector<std::string>& known_loss_terms();

/// n_itc, ss_i, mvs_i, r_itc and c_itc, each with weight 1.
LossConfig production_loss();

LabelMatrix build_labels(std::span<const IdentityId> image_ids,
                         std::span<const IdentityId> text_ids);

/// Image->text and text->image matching probabilities at temperature tau.
struct MatchProbabilities {
  Mat image_to_text;
  Mat text_to_image;
};
MatchProbabilities match_probabilities(const EmbeddingBatch& img,
                                       const EmbeddingBatch& txt, double tau);

/// Normalized image-text contrastive loss (multi-positive InfoNCE).
LossResult n_itc(const EmbeddingBatch& img, const EmbeddingBatch& txt,
                 const LabelMatrix& labels, double tau);

/// Vanilla CLIP contrastive loss: the diagonal pair is the only positive.
LossResult itc(const EmbeddingBatch& img, const EmbeddingBatch& txt, double tau);

/// Averages targets with the model's own matching probabilities, which are
/// treated as constants.
LabelMatrix soft_label(const LabelMatrix& labels, const Mat& p_img2txt,
                       const Mat& p_txt2img);

/// Reversed contrastive loss KL(p || q_hat + eps), averaged over both
/// directions.
LossResult r_itc(const EmbeddingBatch& img, const EmbeddingBatch& txt,
                 const LabelMatrix& labels, double tau, double eps);

/// Cyclic consistency: in-modality Gram gap plus cross-modal asymmetry.
LossResult c_itc(const EmbeddingBatch& img, const EmbeddingBatch& txt);

/// i <-> i + n pairing for a batch stacked as [view_a; view_b].
std::vector<std::size_t> two_view_pairing(std::size_t n);

/// SimCLR-style view agreement over 2N rows; `pairing` must be a fixed-point
/// free involution. Gradient is returned in grad_image.
LossResult ss_loss(const EmbeddingBatch& views, std::span<const std::size_t> pairing,
                   double tau_s);

struct MvsTerms {
  LossResult image;  // n_itc(img_aug, txt)
  LossResult text;   // n_itc(img, txt_aug)
  LossResult both;   // n_itc(img_aug, txt_aug)
};
MvsTerms mvs_terms(const EmbeddingBatch& img, const EmbeddingBatch& img_aug,
                   const EmbeddingBatch& txt, const EmbeddingBatch& txt_aug,
                   const LabelMatrix& labels, double tau);

/// Weight-linear combination of named terms. Every term with a positive weight
/// must be present and all included terms must share gradient shapes.
LossResult stack(const LossConfig& config, const std::map<std::string, LossResult>& terms);

}  // namespace tbps
