// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tbps {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Mat identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Mat& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  Mat transposed() const;

  Mat& operator+=(const Mat& other);
  Mat& operator-=(const Mat& other);
  Mat& operator*=(double s);
  /// this += s * other
  void axpy(double s, const Mat& other);

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(double s, Mat a);

/// a * b
Mat matmul(const Mat& a, const Mat& b);
/// a * b^T
Mat matmul_nt(const Mat& a, const Mat& b);
/// a^T * b
Mat matmul_tn(const Mat& a, const Mat& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
bool all_finite(std::span<const double> v);
double max_abs(const Mat& m);

/// Throws ZeroVector when ||v|| < 1e-12 and NonFinite on NaN/Inf entries.
Vec l2_normalize(std::span<const double> v);

/// Normalizes every row; returns the pre-normalization row norms in `norms`
/// when non-null.
Mat l2_normalize_rows(const Mat& m, std::vector<double>* norms = nullptr);

/// Pulls a gradient on normalized rows back to the raw rows:
/// g_raw = (g - (g . u) u) / ||x||.
Mat l2_normalize_rows_backward(const Mat& normalized,
                               std::span<const double> norms, const Mat& grad);

/// Row-wise temperature softmax with per-row max subtraction.
Mat softmax_rows(const Mat& logits, double tau);

/// Row-wise log-softmax of logits / tau.
Mat log_softmax_rows(const Mat& logits, double tau);

/// Mean over rows of sum_j p_ij log(p_ij / (q_ij + eps)); 0 log 0 := 0.
double kl_rows(const Mat& p, const Mat& q, double eps);

}  // namespace tbps
