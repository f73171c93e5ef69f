// SPDX-License-Identifier: Apache-2.0
#include "tbps/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tbps/error.hpp"

namespace tbps {

namespace {

void require_pair(const EmbeddingBatch& img, const EmbeddingBatch& txt) {
  if (img.size() != txt.size() || img.dim() != txt.dim() || img.size() == 0)
    throw Error(ErrorCode::ShapeMismatch,
                "image batch " + std::to_string(img.size()) + "x" +
                    std::to_string(img.dim()) + " vs text batch " +
                    std::to_string(txt.size()) + "x" + std::to_string(txt.dim()));
}

void require_labels(const LabelMatrix& labels, std::size_t n) {
  const auto ok = [n](const Mat& m) { return m.rows() == n && m.cols() == n; };
  if (!ok(labels.q_hat) || !ok(labels.q_hat_t2i))
    throw Error(ErrorCode::ShapeMismatch, "label matrix does not match batch size");
}

Mat row_normalized(const Mat& q) {
  Mat out = q;
  for (std::size_t r = 0; r < q.rows(); ++r) {
    auto row = out.row(r);
    const double s = std::accumulate(row.begin(), row.end(), 0.0);
    if (s <= 0.0)
      throw Error(ErrorCode::NoPositive, "row " + std::to_string(r) + " has no positive");
    for (double& v : row) v /= s;
  }
  return out;
}

// Cross-entropy of targets against log-softmax rows; returns the summed value
// and writes d(value)/d(logits) into `grad`.
double cross_entropy_rows(const Mat& log_p, const Mat& targets, Mat& grad) {
  double total = 0.0;
  grad = Mat(log_p.rows(), log_p.cols());
  for (std::size_t r = 0; r < log_p.rows(); ++r) {
    double target_mass = 0.0;
    for (std::size_t c = 0; c < log_p.cols(); ++c) {
      const double t = targets(r, c);
      target_mass += t;
      if (t != 0.0) total -= t * log_p(r, c);
    }
    for (std::size_t c = 0; c < log_p.cols(); ++c)
      grad(r, c) = std::exp(log_p(r, c)) * target_mass - targets(r, c);
  }
  return total;
}

// Sum over rows of KL(p || q + eps) with p = softmax; gradient w.r.t. logits.
double reverse_kl_rows(const Mat& log_p, const Mat& targets, double eps, Mat& grad) {
  double total = 0.0;
  grad = Mat(log_p.rows(), log_p.cols());
  std::vector<double> c(log_p.cols());
  for (std::size_t r = 0; r < log_p.rows(); ++r) {
    double mean_c = 0.0;
    for (std::size_t j = 0; j < log_p.cols(); ++j) {
      const double p = std::exp(log_p(r, j));
      c[j] = log_p(r, j) - std::log(targets(r, j) + eps);
      if (p != 0.0) {
        total += p * c[j];
        mean_c += p * c[j];
      }
    }
    for (std::size_t j = 0; j < log_p.cols(); ++j) {
      const double p = std::exp(log_p(r, j));
      grad(r, j) = p == 0.0 ? 0.0 : p * (c[j] - mean_c);
    }
  }
  return total;
}

// Shared tail of the two-direction matching losses. `g_i2t` and `g_t2i` are
// gradients w.r.t. the logits sim/tau and sim^T/tau.
LossResult finish_matching(const EmbeddingBatch& img, const EmbeddingBatch& txt,
                           const Mat& sim, Mat g_i2t, const Mat& g_t2i, double tau,
                           double value) {
  const std::size_t n = sim.rows();
  // Fold both directions onto the shared logits.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g_i2t(i, j) += g_t2i(j, i);

  LossResult out;
  out.value = value;
  double g_tau = 0.0;
  for (std::size_t k = 0; k < sim.size(); ++k)
    g_tau -= g_i2t.values()[k] * sim.values()[k] / tau;
  out.grad_log_tau = g_tau;

  g_i2t *= 1.0 / tau;  // now d/dsim
  out.grad_image = matmul(g_i2t, txt.features);
  out.grad_text = matmul_tn(g_i2t, img.features);
  return out;
}

}  // namespace

const std::vector<std::string>& known_loss_terms() {
  static const std::vector<std::string> names = {"itc",  "n_itc", "r_itc",
                                                 "c_itc", "ss_i", "ss_t",
                                                 "mvs_i", "mvs_t", "mvs_it"};
  return names;
}

bool LossConfig::active(const std::string& name) const {
  const auto it = weights.find(name);
  return it != weights.end() && it->second > 0.0;
}

LossConfig production_loss() {
  LossConfig c;
  c.weights = {{"n_itc", 1.0}, {"ss_i", 1.0}, {"mvs_i", 1.0}, {"r_itc", 1.0}, {"c_itc", 1.0}};
  return c;
}

void LossConfig::validate() const {
  bool any = false;
  for (const auto& [name, w] : weights) {
    const auto& known = known_loss_terms();
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw Error(ErrorCode::BadConfig, "unknown loss term '" + name + "'");
    if (!(w >= 0.0) || !std::isfinite(w))
      throw Error(ErrorCode::BadConfig, "loss weight for '" + name + "' must be >= 0");
    any = any || w > 0.0;
  }
  if (!any) throw Error(ErrorCode::BadConfig, "at least one loss weight must be > 0");
  if (!(tau_s > 0.0)) throw Error(ErrorCode::BadConfig, "tau_s must be > 0");
  if (!(eps > 0.0)) throw Error(ErrorCode::BadConfig, "eps must be > 0");
}

LabelMatrix build_labels(std::span<const IdentityId> image_ids,
                         std::span<const IdentityId> text_ids) {
  if (image_ids.size() != text_ids.size())
    throw Error(ErrorCode::LengthMismatch, "image and text id lists differ in length");
  const std::size_t n = image_ids.size();
  LabelMatrix labels;
  labels.q = Mat(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      labels.q(i, j) = image_ids[i] == text_ids[j] ? 1.0 : 0.0;
  labels.q_hat = row_normalized(labels.q);
  labels.q_hat_t2i = row_normalized(labels.q.transposed());
  return labels;
}

MatchProbabilities match_probabilities(const EmbeddingBatch& img,
                                       const EmbeddingBatch& txt, double tau) {
  require_pair(img, txt);
  const Mat sim = sim_matrix(img, txt);
  return {softmax_rows(sim, tau), softmax_rows(sim.transposed(), tau)};
}

LossResult n_itc(const EmbeddingBatch& img, const EmbeddingBatch& txt,
                 const LabelMatrix& labels, double tau) {
  require_pair(img, txt);
  const std::size_t n = img.size();
  require_labels(labels, n);
  const Mat sim = sim_matrix(img, txt);
  const Mat log_p_i2t = log_softmax_rows(sim, tau);
  const Mat log_p_t2i = log_softmax_rows(sim.transposed(), tau);

  Mat g_i2t;
  Mat g_t2i;
  const double total = cross_entropy_rows(log_p_i2t, labels.q_hat, g_i2t) +
                       cross_entropy_rows(log_p_t2i, labels.q_hat_t2i, g_t2i);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  g_i2t *= scale;
  g_t2i *= scale;
  return finish_matching(img, txt, sim, std::move(g_i2t), g_t2i, tau, total * scale);
}

LossResult itc(const EmbeddingBatch& img, const EmbeddingBatch& txt, double tau) {
  require_pair(img, txt);
  std::vector<IdentityId> idx(img.size());
  std::iota(idx.begin(), idx.end(), IdentityId{0});
  return n_itc(img, txt, build_labels(idx, idx), tau);
}

LabelMatrix soft_label(const LabelMatrix& labels, const Mat& p_img2txt,
                       const Mat& p_txt2img) {
  if (!labels.q_hat.same_shape(p_img2txt) || !labels.q_hat_t2i.same_shape(p_txt2img))
    throw Error(ErrorCode::ShapeMismatch, "pseudo-label shape differs from labels");
  LabelMatrix out = labels;
  out.q_hat = 0.5 * (p_img2txt + labels.q_hat);
  out.q_hat_t2i = 0.5 * (p_txt2img + labels.q_hat_t2i);
  return out;
}

LossResult r_itc(const EmbeddingBatch& img, const EmbeddingBatch& txt,
                 const LabelMatrix& labels, double tau, double eps) {
  require_pair(img, txt);
  if (!(eps > 0.0)) throw Error(ErrorCode::BadParam, "r_itc eps must be > 0");
  const std::size_t n = img.size();
  require_labels(labels, n);
  const Mat sim = sim_matrix(img, txt);
  const Mat log_p_i2t = log_softmax_rows(sim, tau);
  const Mat log_p_t2i = log_softmax_rows(sim.transposed(), tau);

  Mat g_i2t;
  Mat g_t2i;
  const double total = reverse_kl_rows(log_p_i2t, labels.q_hat, eps, g_i2t) +
                       reverse_kl_rows(log_p_t2i, labels.q_hat_t2i, eps, g_t2i);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  g_i2t *= scale;
  g_t2i *= scale;
  return finish_matching(img, txt, sim, std::move(g_i2t), g_t2i, tau, total * scale);
}

LossResult c_itc(const EmbeddingBatch& img, const EmbeddingBatch& txt) {
  require_pair(img, txt);
  const std::size_t n = img.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  const Mat gram_gap = sim_matrix(img, img) - sim_matrix(txt, txt);
  const Mat cross = sim_matrix(img, txt);
  Mat asym(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) asym(i, j) = cross(i, j) - cross(j, i);

  LossResult out;
  double in_modality = 0.0;
  double cross_modality = 0.0;
  for (double v : gram_gap.values()) in_modality += v * v;
  for (double v : asym.values()) cross_modality += v * v;
  out.value = inv_n * (in_modality + cross_modality);

  // d/dF_I = 4/N (D F_I + E F_T);  d/dF_T = -4/N (D F_T + E F_I)
  const double k = 4.0 * inv_n;
  out.grad_image = k * (matmul(gram_gap, img.features) + matmul(asym, txt.features));
  out.grad_text = -k * (matmul(gram_gap, txt.features) + matmul(asym, img.features));
  return out;
}

std::vector<std::size_t> two_view_pairing(std::size_t n) {
  std::vector<std::size_t> pairing(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    pairing[i] = i + n;
    pairing[i + n] = i;
  }
  return pairing;
}

LossResult ss_loss(const EmbeddingBatch& views, std::span<const std::size_t> pairing,
                   double tau_s) {
  const std::size_t m = views.size();
  if (!(tau_s > 0.0)) throw Error(ErrorCode::NonPositiveTemperature, "tau_s must be > 0");
  if (m < 2 || m % 2 != 0 || pairing.size() != m)
    throw Error(ErrorCode::BadPairing, "need an even number of views with one partner each");
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = pairing[i];
    if (j >= m || j == i || pairing[j] != i)
      throw Error(ErrorCode::BadPairing,
                  "pairing is not a fixed-point free involution at row " + std::to_string(i));
  }

  const Mat sim = sim_matrix(views, views);
  const double inv_m = 1.0 / static_cast<double>(m);
  Mat g(m, m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k)
      if (k != i) mx = std::max(mx, sim(i, k) / tau_s);
    double sum = 0.0;
    for (std::size_t k = 0; k < m; ++k)
      if (k != i) sum += std::exp(sim(i, k) / tau_s - mx);
    const double lse = mx + std::log(sum);
    total -= sim(i, pairing[i]) / tau_s - lse;
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      const double r = std::exp(sim(i, k) / tau_s - lse);
      g(i, k) = (r - (k == pairing[i] ? 1.0 : 0.0)) * inv_m / tau_s;
    }
  }

  LossResult out;
  out.value = total * inv_m;
  out.grad_image = matmul(g + g.transposed(), views.features);
  return out;
}

MvsTerms mvs_terms(const EmbeddingBatch& img, const EmbeddingBatch& img_aug,
                   const EmbeddingBatch& txt, const EmbeddingBatch& txt_aug,
                   const LabelMatrix& labels, double tau) {
  return {n_itc(img_aug, txt, labels, tau), n_itc(img, txt_aug, labels, tau),
          n_itc(img_aug, txt_aug, labels, tau)};
}

LossResult stack(const LossConfig& config, const std::map<std::string, LossResult>& terms) {
  LossResult out;
  bool first = true;
  for (const auto& [name, w] : config.weights) {
    const auto it = terms.find(name);
    if (it == terms.end()) {
      if (w > 0.0) throw Error(ErrorCode::MissingTerm, "loss term '" + name + "' not computed");
      continue;
    }
    const LossResult& t = it->second;
    if (first) {
      out.grad_image = Mat(t.grad_image.rows(), t.grad_image.cols());
      out.grad_text = Mat(t.grad_text.rows(), t.grad_text.cols());
      first = false;
    }
    if (!out.grad_image.same_shape(t.grad_image) || !out.grad_text.same_shape(t.grad_text))
      throw Error(ErrorCode::ShapeMismatch, "term '" + name + "' gradient shape differs");
    out.value += w * t.value;
    out.grad_image.axpy(w, t.grad_image);
    out.grad_text.axpy(w, t.grad_text);
    out.grad_log_tau += w * t.grad_log_tau;
  }
  if (first) throw Error(ErrorCode::MissingTerm, "no weighted loss terms present");
  return out;
}

}  // namespace tbps
