#include "apm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace apm {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::ThetaOutOfRange: return "ThetaOutOfRange";
    case ErrorCode::EmptyPosterior: return "EmptyPosterior";
    case ErrorCode::InvalidPosterior: return "InvalidPosterior";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::SegmentTooShort: return "SegmentTooShort";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::ChunkTooLong: return "ChunkTooLong";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::EmptyLanguage: return "EmptyLanguage";
    case ErrorCode::UnknownLanguage: return "UnknownLanguage";
    case ErrorCode::UnknownUtterance: return "UnknownUtterance";
    case ErrorCode::NoTrials: return "NoTrials";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
  }
  return "Unknown";
}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::DimensionMismatch,
                "matrix payload has " + std::to_string(data_.size()) + " elements, expected " +
                    std::to_string(rows_ * cols_));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch, "dot of " + std::to_string(a.size()) + " and " +
                                                  std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vec l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n >= 1e-12)) throw Error(ErrorCode::ZeroVector, "cannot normalize vector with norm < 1e-12");
  Vec out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Vec cosine_logits(const Mat& classes, std::span<const double> x) {
  if (classes.cols() != x.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "class vectors have dim " + std::to_string(classes.cols()) + ", input has " +
                    std::to_string(x.size()));
  }
  Vec out(classes.rows());
  for (std::size_t j = 0; j < classes.rows(); ++j) {
    out[j] = std::clamp(dot(classes.row(j), x), -1.0, 1.0);
  }
  return out;
}

double log_sum_exp(std::span<const double> z) {
  if (z.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

Vec stable_softmax(std::span<const double> z) {
  Vec out(z.size());
  if (z.empty()) return out;
  const double mx = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    acc += out[i];
  }
  for (double& p : out) p /= acc;
  return out;
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double eps) {
  Vec grad(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "relative_error sizes differ");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

void gemv_add(const Mat& w, std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const auto r = w.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) acc += r[k] * x[k];
    out[i] += acc;
  }
}

void gemv_t_add(const Mat& w, std::span<const double> g, std::span<double> out) {
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const auto r = w.row(i);
    const double gi = g[i];
    for (std::size_t k = 0; k < r.size(); ++k) out[k] += gi * r[k];
  }
}

void outer_add(Mat& w, std::span<const double> g, std::span<const double> x, double alpha) {
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto r = w.row(i);
    const double gi = alpha * g[i];
    for (std::size_t k = 0; k < r.size(); ++k) r[k] += gi * x[k];
  }
}

void matmul_nt_add(const Mat& a, const Mat& w, Mat& c) {
  const std::size_t t_len = a.rows(), k_len = a.cols(), n_len = w.rows();
  // Transposed copy keeps the inner loop a contiguous axpy.
  Mat wt(k_len, n_len);
  for (std::size_t n = 0; n < n_len; ++n)
    for (std::size_t k = 0; k < k_len; ++k) wt(k, n) = w(n, k);
  for (std::size_t t = 0; t < t_len; ++t) {
    double* crow = c.row(t).data();
    const double* arow = a.row(t).data();
    for (std::size_t k = 0; k < k_len; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* wrow = wt.row(k).data();
      for (std::size_t n = 0; n < n_len; ++n) crow[n] += av * wrow[n];
    }
  }
}

void matmul_nn_add(const Mat& dc, const Mat& w, Mat& da) {
  const std::size_t t_len = dc.rows(), n_len = dc.cols(), k_len = w.cols();
  for (std::size_t t = 0; t < t_len; ++t) {
    double* arow = da.row(t).data();
    const double* crow = dc.row(t).data();
    for (std::size_t n = 0; n < n_len; ++n) {
      const double g = crow[n];
      if (g == 0.0) continue;
      const double* wrow = w.row(n).data();
      for (std::size_t k = 0; k < k_len; ++k) arow[k] += g * wrow[k];
    }
  }
}

void matmul_tn_add(const Mat& dc, const Mat& a, Mat& dw) {
  const std::size_t t_len = dc.rows(), n_len = dc.cols(), k_len = a.cols();
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* crow = dc.row(t).data();
    const double* arow = a.row(t).data();
    for (std::size_t n = 0; n < n_len; ++n) {
      const double g = crow[n];
      if (g == 0.0) continue;
      double* wrow = dw.row(n).data();
      for (std::size_t k = 0; k < k_len; ++k) wrow[k] += g * arow[k];
    }
  }
}

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace apm
