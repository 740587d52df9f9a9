#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <utility>
#include <numbers>
#include <stdexcept>

#include "acquire/image.hpp"

namespace acquire {

/// Point spread function on a small odd-sized support. The kernel is
/// nonnegative and sums to one; its centre pixel is (rows/2, cols/2).
class Psf {
 public:
  /// Takes any nonnegative kernel with odd dimensions and normalizes it.
  explicit Psf(const Image& kernel) {
    detail::require(kernel.rows() % 2 == 1 && kernel.cols() % 2 == 1, "Psf: kernel dimensions must be odd");
    detail::require(kernel.min() >= 0.0, "Psf: kernel entries must be nonnegative");
    const double total = kernel.sum();
    detail::require(total > 0.0 && std::isfinite(total), "Psf: kernel must have positive finite mass");
    kernel_ = Image(kernel.shape(), kernel.data() / total);
  }

  const Image& kernel() const { return kernel_; }
  std::size_t rows() const { return kernel_.rows(); }
  std::size_t cols() const { return kernel_.cols(); }
  std::size_t center_row() const { return kernel_.rows() / 2; }
  std::size_t center_col() const { return kernel_.cols() / 2; }
  double operator()(std::size_t k, std::size_t l) const { return kernel_(k, l); }

 private:
  Image kernel_;
};

inline Psf delta_psf() {
  Vector one(1);
  one[0] = 1.0;
  return Psf(Image(1, 1, one));
}

/// Isotropic Gaussian sampled at pixel centres on a size x size support.
inline Psf gaussian_psf(int size, double sigma) {
  detail::require(size >= 3 && size % 2 == 1, "gaussian_psf: size must be odd and >= 3");
  detail::require(sigma > 0.0, "gaussian_psf: sigma must be positive");
  const auto n = static_cast<std::size_t>(size);
  const double c = static_cast<double>(size / 2);
  Vector values(size * size);
  for (std::size_t l = 0; l < n; ++l) {
    for (std::size_t k = 0; k < n; ++k) {
      const double dk = static_cast<double>(k) - c;
      const double dl = static_cast<double>(l) - c;
      values[static_cast<Eigen::Index>(l * n + k)] = std::exp(-(dk * dk + dl * dl) / (2.0 * sigma * sigma));
    }
  }
  return Psf(Image(n, n, std::move(values)));
}

/// Linear camera motion: a segment of `length` pixels through the centre at
/// `angle_deg` degrees counter-clockwise from the column axis. The segment
/// is sampled 64 times per pixel of length and each sample is binned into
/// the pixel containing it.
inline Psf motion_psf(int length, double angle_deg) {
  detail::require(length >= 1, "motion_psf: length must be >= 1");
  constexpr int kSamplesPerPixel = 64;
  const double phi = angle_deg * std::numbers::pi / 180.0;
  const double cos_phi = std::cos(phi);
  const double sin_phi = std::sin(phi);
  const double half = 0.5 * length;
  const int samples = kSamplesPerPixel * length;

  auto sample_offset = [&](int i) {
    const double t = -half + (i + 0.5) * (static_cast<double>(length) / samples);
    // Rows grow downwards, so a counter-clockwise angle moves up.
    return std::pair<long, long>{std::lround(-t * sin_phi), std::lround(t * cos_phi)};
  };

  long row_radius = 0, col_radius = 0;
  for (int i = 0; i < samples; ++i) {
    const auto [dk, dl] = sample_offset(i);
    row_radius = std::max(row_radius, std::labs(dk));
    col_radius = std::max(col_radius, std::labs(dl));
  }
  const auto rows = static_cast<std::size_t>(2 * row_radius + 1);
  const auto cols = static_cast<std::size_t>(2 * col_radius + 1);
  Vector counts = Vector::Zero(static_cast<Eigen::Index>(rows * cols));
  for (int i = 0; i < samples; ++i) {
    const auto [dk, dl] = sample_offset(i);
    const auto k = static_cast<std::size_t>(dk + row_radius);
    const auto l = static_cast<std::size_t>(dl + col_radius);
    counts[static_cast<Eigen::Index>(l * rows + k)] += 1.0;
  }
  return Psf(Image(rows, cols, std::move(counts)));
}

/// Out-of-focus blur: each pixel holds the fraction of its area covered by
/// a disk of the given radius centred on the kernel centre. Pixels cut by
/// the circle are integrated on a 33 x 33 sub-grid.
inline Psf disk_psf(double radius) {
  detail::require(radius > 0.0, "disk_psf: radius must be positive");
  constexpr int kSub = 33;
  const long half = static_cast<long>(std::floor(radius + 0.5));
  const auto n = static_cast<std::size_t>(2 * half + 1);
  const double r2 = radius * radius;
  Vector cover = Vector::Zero(static_cast<Eigen::Index>(n * n));

  for (long dl = -half; dl <= half; ++dl) {
    for (long dk = -half; dk <= half; ++dk) {
      const double y0 = dk - 0.5, y1 = dk + 0.5;
      const double x0 = dl - 0.5, x1 = dl + 0.5;
      const double ny = std::clamp(0.0, y0, y1), nx = std::clamp(0.0, x0, x1);
      const double fy = std::max(std::abs(y0), std::abs(y1)), fx = std::max(std::abs(x0), std::abs(x1));
      double fraction;
      if (fy * fy + fx * fx <= r2) {
        fraction = 1.0;
      } else if (ny * ny + nx * nx >= r2) {
        fraction = 0.0;
      } else {
        int inside = 0;
        for (int a = 0; a < kSub; ++a) {
          const double y = y0 + (a + 0.5) / kSub;
          for (int b = 0; b < kSub; ++b) {
            const double x = x0 + (b + 0.5) / kSub;
            if (x * x + y * y <= r2) ++inside;
          }
        }
        fraction = static_cast<double>(inside) / (kSub * kSub);
      }
      const auto k = static_cast<std::size_t>(dk + half);
      const auto l = static_cast<std::size_t>(dl + half);
      cover[static_cast<Eigen::Index>(l * n + k)] = fraction;
    }
  }
  return Psf(Image(n, n, std::move(cover)));
}

}  // namespace acquire
