#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "acquire/image.hpp"

namespace acquire {

/// ||x - x*|| / ||x*||.
inline double relative_error(const Vector& x, const Vector& x_star) {
  detail::require_same_size(static_cast<std::size_t>(x.size()), static_cast<std::size_t>(x_star.size()),
                            "relative_error");
  const double ref = x_star.norm();
  detail::require(ref > 0.0, "relative_error: reference has zero norm");
  return (x - x_star).norm() / ref;
}

inline double relative_error(const Image& x, const Image& x_star) {
  if (!(x.shape() == x_star.shape())) throw DimensionMismatch("relative_error: image shapes differ");
  return relative_error(x.data(), x_star.data());
}

inline double flux_ratio(const Image& x, const Image& x_star) {
  if (!(x.shape() == x_star.shape())) throw DimensionMismatch("flux_ratio: image shapes differ");
  return x.sum() / x_star.sum();
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

namespace detail {

inline std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = 0.5 * (size - 1);
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable 'valid' filtering of a column-major rows x cols array.
inline std::vector<double> filter_valid(const std::vector<double>& in, std::size_t rows, std::size_t cols,
                                        const std::vector<double>& taps) {
  const std::size_t m = taps.size();
  const std::size_t vr = rows - m + 1, vc = cols - m + 1;
  std::vector<double> tmp(vr * cols, 0.0);
  for (std::size_t l = 0; l < cols; ++l)
    for (std::size_t k = 0; k < vr; ++k) {
      double s = 0.0;
      for (std::size_t t = 0; t < m; ++t) s += taps[t] * in[l * rows + k + t];
      tmp[l * vr + k] = s;
    }
  std::vector<double> out(vr * vc, 0.0);
  for (std::size_t l = 0; l < vc; ++l)
    for (std::size_t k = 0; k < vr; ++k) {
      double s = 0.0;
      for (std::size_t t = 0; t < m; ++t) s += taps[t] * tmp[(l + t) * vr + k];
      out[l * vr + k] = s;
    }
  return out;
}

}  // namespace detail

/// Mean structural similarity over all fully contained Gaussian windows,
/// with dynamic range L = max(x*) - min(x*).
inline double mssim(const Image& x, const Image& x_star, const SsimParams& params = {}) {
  if (!(x.shape() == x_star.shape())) throw DimensionMismatch("mssim: image shapes differ");
  const auto w = static_cast<std::size_t>(params.window);
  if (x.rows() < w || x.cols() < w) throw std::invalid_argument("mssim: image smaller than the window");
  const double range = x_star.max() - x_star.min();
  detail::require(range > 0.0, "mssim: reference image is constant");
  const double c1 = std::pow(params.k1 * range, 2);
  const double c2 = std::pow(params.k2 * range, 2);

  const std::size_t n = x.size();
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = x.data()[static_cast<Eigen::Index>(i)];
    b[i] = x_star.data()[static_cast<Eigen::Index>(i)];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto taps = detail::gaussian_taps(params.window, params.sigma);
  const auto f = [&](const std::vector<double>& v) { return detail::filter_valid(v, x.rows(), x.cols(), taps); };
  const auto mu1 = f(a), mu2 = f(b), s11 = f(aa), s22 = f(bb), s12 = f(ab);

  double total = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double m1 = mu1[i], m2 = mu2[i];
    const double v1 = s11[i] - m1 * m1, v2 = s22[i] - m2 * m2, cov = s12[i] - m1 * m2;
    total += ((2.0 * m1 * m2 + c1) * (2.0 * cov + c2)) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
  }
  return total / static_cast<double>(mu1.size());
}

struct MetricReport {
  double relative_error = 0.0;
  double mssim = 0.0;
  double flux_ratio = 0.0;
};

inline MetricReport evaluate_restoration(const Image& x, const Image& x_star) {
  return {relative_error(x, x_star), mssim(x, x_star), flux_ratio(x, x_star)};
}

}  // namespace acquire
