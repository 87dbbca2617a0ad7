#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "apm/errors.hpp"

namespace apm {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

/// Unit-norm copy of v. Throws ZeroVector when ||v|| < 1e-12.
Vec l2_normalize(std::span<const double> v);

/// Cosines between x and each class vector. Class vectors are the ROWS of
/// `classes` (C x D); both sides are assumed unit-norm. Output clamped to [-1, 1].
Vec cosine_logits(const Mat& classes, std::span<const double> x);

double log_sum_exp(std::span<const double> z);
Vec stable_softmax(std::span<const double> z);

/// Central-difference gradient (f(x + eps e_i) - f(x - eps e_i)) / 2 eps.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x,
                     double eps = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor). Used to compare analytic and numeric gradients.
double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor = 1e-8);

// Kernels used by the model. Weights are stored out x in (row i maps the
// input onto output unit i). All accumulate into their output argument.

// out += W x
void gemv_add(const Mat& w, std::span<const double> x, std::span<double> out);
// out += W^T g
void gemv_t_add(const Mat& w, std::span<const double> g, std::span<double> out);
// W += alpha g x^T
void outer_add(Mat& w, std::span<const double> g, std::span<const double> x, double alpha = 1.0);
// C (T x N) += A (T x K) W^T, W is N x K
void matmul_nt_add(const Mat& a, const Mat& w, Mat& c);
// dA (T x K) += dC (T x N) W, W is N x K
void matmul_nn_add(const Mat& dc, const Mat& w, Mat& da);
// dW (N x K) += dC^T (N x T) A (T x K)
void matmul_tn_add(const Mat& dc, const Mat& a, Mat& dw);

bool all_finite(std::span<const double> v) noexcept;

}  // namespace apm
