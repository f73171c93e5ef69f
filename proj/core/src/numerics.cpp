// SPDX-License-Identifier: Apache-2.0
#include "tbps/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tbps/embedding.hpp"
#include "tbps/error.hpp"

namespace tbps {

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw Error(ErrorCode::ShapeMismatch,
                "matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                    " given " + std::to_string(values_.size()) + " values");
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::transposed() const {
  Mat t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Mat& Mat::operator+=(const Mat& other) {
  axpy(1.0, other);
  return *this;
}

Mat& Mat::operator-=(const Mat& other) {
  axpy(-1.0, other);
  return *this;
}

Mat& Mat::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

void Mat::axpy(double s, const Mat& other) {
  if (!same_shape(other)) throw Error(ErrorCode::ShapeMismatch, "axpy operands differ");
  const double* src = other.values_.data();
  double* dst = values_.data();
  for (std::size_t i = 0; i < values_.size(); ++i) dst[i] += s * src[i];
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(double s, Mat a) { return a *= s; }

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul inner dims");
  Mat out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "matmul_nt inner dims");
  Mat out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ar, b.row(j));
  }
  return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul_tn inner dims");
  Mat out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* br = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimMismatch, "dot operand lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double max_abs(const Mat& m) {
  double best = 0.0;
  for (double v : m.values()) best = std::max(best, std::abs(v));
  return best;
}

Vec l2_normalize(std::span<const double> v) {
  if (!all_finite(v)) throw Error(ErrorCode::NonFinite, "l2_normalize input");
  const double n = norm2(v);
  if (n < 1e-12) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  Vec out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Mat l2_normalize_rows(const Mat& m, std::vector<double>* norms) {
  Mat out(m.rows(), m.cols());
  if (norms) norms->assign(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const Vec u = l2_normalize(m.row(r));
    std::copy(u.begin(), u.end(), out.row(r).begin());
    if (norms) (*norms)[r] = norm2(m.row(r));
  }
  return out;
}

Mat l2_normalize_rows_backward(const Mat& normalized, std::span<const double> norms,
                               const Mat& grad) {
  if (!normalized.same_shape(grad) || norms.size() != grad.rows())
    throw Error(ErrorCode::ShapeMismatch, "normalize backward shapes");
  Mat out(grad.rows(), grad.cols());
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    const auto u = normalized.row(r);
    const auto g = grad.row(r);
    const double gu = dot(g, u);
    auto o = out.row(r);
    for (std::size_t c = 0; c < g.size(); ++c) o[c] = (g[c] - gu * u[c]) / norms[r];
  }
  return out;
}

Mat log_softmax_rows(const Mat& logits, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::NonPositiveTemperature, "tau must be > 0");
  Mat out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : in) mx = std::max(mx, x / tau);
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = in[c] / tau - mx;
      sum += std::exp(o[c]);
    }
    const double lse = std::log(sum);
    for (double& x : o) x -= lse;
  }
  return out;
}

Mat softmax_rows(const Mat& logits, double tau) {
  Mat out = log_softmax_rows(logits, tau);
  for (double& x : out.values()) x = std::exp(x);
  return out;
}

double kl_rows(const Mat& p, const Mat& q, double eps) {
  if (!p.same_shape(q)) throw Error(ErrorCode::ShapeMismatch, "kl_rows operands differ");
  if (!(eps > 0.0)) throw Error(ErrorCode::BadParam, "kl_rows eps must be > 0");
  if (p.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t c = 0; c < p.cols(); ++c) {
      const double pv = p(r, c);
      if (pv == 0.0) continue;
      total += pv * std::log(pv / (q(r, c) + eps));
    }
  }
  return total / static_cast<double>(p.rows());
}

EmbeddingBatch EmbeddingBatch::from_raw(const Mat& raw, std::vector<IdentityId> ids) {
  if (ids.size() != raw.rows())
    throw Error(ErrorCode::LengthMismatch, "identity count != row count");
  return EmbeddingBatch{l2_normalize_rows(raw), std::move(ids), true};
}

Mat sim_matrix(const EmbeddingBatch& a, const EmbeddingBatch& b) {
  if (a.dim() != b.dim())
    throw Error(ErrorCode::DimMismatch, "embedding dims " + std::to_string(a.dim()) +
                                            " vs " + std::to_string(b.dim()));
  return matmul_nt(a.features, b.features);
}

EmbeddingBatch concat_rows(const EmbeddingBatch& top, const EmbeddingBatch& bottom) {
  if (top.dim() != bottom.dim()) throw Error(ErrorCode::DimMismatch, "concat dims");
  EmbeddingBatch out;
  out.features = Mat(top.size() + bottom.size(), top.dim());
  auto& v = out.features.values();
  std::copy(top.features.values().begin(), top.features.values().end(), v.begin());
  std::copy(bottom.features.values().begin(), bottom.features.values().end(),
            v.begin() + static_cast<std::ptrdiff_t>(top.features.size()));
  out.identities = top.identities;
  out.identities.insert(out.identities.end(), bottom.identities.begin(),
                        bottom.identities.end());
  out.normalized = top.normalized && bottom.normalized;
  return out;
}

}  // namespace tbps
