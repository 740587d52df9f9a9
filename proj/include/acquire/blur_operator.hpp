#pragma once

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <memory>
#include <mutex>
#include <vector>

#include "acquire/image.hpp"
#include "acquire/psf.hpp"

namespace acquire {

namespace detail {

// FFTW planning is not thread-safe; execution with the new-array interface is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

inline FftwBuffer<double> alloc_real(std::size_t n) { return FftwBuffer<double>(fftw_alloc_real(n)); }
inline FftwBuffer<fftw_complex> alloc_complex(std::size_t n) {
  return FftwBuffer<fftw_complex>(fftw_alloc_complex(n));
}

/// Real-to-complex and complex-to-real 2D transforms for one grid size.
/// A column-major rows x cols image is a row-major cols x rows array, which
/// is what FFTW is given; the DFT itself does not care about axis order.
class RealFft2d {
 public:
  explicit RealFft2d(GridShape shape)
      : shape_(shape), spectrum_size_(shape.cols * (shape.rows / 2 + 1)) {
    auto real = alloc_real(shape_.size());
    auto spec = alloc_complex(spectrum_size_);
    const int n0 = static_cast<int>(shape_.cols);
    const int n1 = static_cast<int>(shape_.rows);
    std::lock_guard lock(fftw_planner_mutex());
    forward_ = fftw_plan_dft_r2c_2d(n0, n1, real.get(), spec.get(), FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_2d(n0, n1, spec.get(), real.get(), FFTW_ESTIMATE);
  }

  ~RealFft2d() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }

  RealFft2d(const RealFft2d&) = delete;
  RealFft2d& operator=(const RealFft2d&) = delete;

  std::size_t spectrum_size() const { return spectrum_size_; }
  const GridShape& shape() const { return shape_; }

  /// Computes spectrum = DFT(x). Scratch is per call.
  void forward(const Vector& x, fftw_complex* spectrum) const {
    auto real = alloc_real(shape_.size());
    std::memcpy(real.get(), x.data(), sizeof(double) * shape_.size());
    fftw_execute_dft_r2c(forward_, real.get(), spectrum);
  }

  /// Unnormalized inverse; destroys `spectrum`.
  Vector inverse(fftw_complex* spectrum) const {
    auto real = alloc_real(shape_.size());
    fftw_execute_dft_c2r(inverse_, spectrum, real.get());
    Vector out(static_cast<Eigen::Index>(shape_.size()));
    std::memcpy(out.data(), real.get(), sizeof(double) * shape_.size());
    return out;
  }

 private:
  GridShape shape_;
  std::size_t spectrum_size_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

}  // namespace detail

/// Periodic convolution with a PSF, applied through its optical transfer
/// function. apply(delta at pixel 0) reproduces the PSF centred at pixel 0.
/// Immutable after construction and cheap to copy.
class BlurOperator {
 public:
  BlurOperator(GridShape shape, const Psf& psf) : shape_(shape), psf_(psf) {
    detail::require(shape.rows > 0 && shape.cols > 0, "BlurOperator: empty grid");
    if (psf.rows() > shape.rows || psf.cols() > shape.cols)
      throw DimensionMismatch("BlurOperator: PSF support exceeds the image grid");
    fft_ = std::make_shared<detail::RealFft2d>(shape);

    // Zero-pad and circularly shift so the kernel centre sits at pixel 0.
    Vector padded = Vector::Zero(static_cast<Eigen::Index>(shape.size()));
    const long cr = static_cast<long>(psf.center_row());
    const long cc = static_cast<long>(psf.center_col());
    const long r = static_cast<long>(shape.rows);
    const long s = static_cast<long>(shape.cols);
    for (std::size_t l = 0; l < psf.cols(); ++l) {
      for (std::size_t k = 0; k < psf.rows(); ++k) {
        const long kk = ((static_cast<long>(k) - cr) % r + r) % r;
        const long ll = ((static_cast<long>(l) - cc) % s + s) % s;
        padded[ll * r + kk] += psf(k, l);
      }
    }
    auto spectrum = detail::alloc_complex(fft_->spectrum_size());
    fft_->forward(padded, spectrum.get());
    auto otf = std::make_shared<std::vector<std::complex<double>>>(fft_->spectrum_size());
    for (std::size_t i = 0; i < otf->size(); ++i) (*otf)[i] = {spectrum[i][0], spectrum[i][1]};
    otf_ = std::move(otf);
  }

  BlurOperator(std::size_t rows, std::size_t cols, const Psf& psf) : BlurOperator(GridShape{rows, cols}, psf) {}

  const GridShape& shape() const { return shape_; }
  const Psf& psf() const { return psf_; }
  const std::vector<std::complex<double>>& otf() const { return *otf_; }

  Vector apply(const Vector& x) const { return filter(x, false); }
  Vector apply_adjoint(const Vector& y) const { return filter(y, true); }

  Image apply(const Image& x) const {
    check(x.shape());
    return Image(shape_, apply(x.data()));
  }
  Image apply_adjoint(const Image& y) const {
    check(y.shape());
    return Image(shape_, apply_adjoint(y.data()));
  }

 private:
  void check(const GridShape& other) const {
    if (!(other == shape_)) throw DimensionMismatch("BlurOperator: image dimensions do not match the operator");
  }

  Vector filter(const Vector& x, bool conjugate) const {
    detail::require_same_size(static_cast<std::size_t>(x.size()), shape_.size(), "BlurOperator input");
    auto spectrum = detail::alloc_complex(fft_->spectrum_size());
    fft_->forward(x, spectrum.get());
    const auto& h = *otf_;
    for (std::size_t i = 0; i < h.size(); ++i) {
      const std::complex<double> z(spectrum[i][0], spectrum[i][1]);
      const std::complex<double> w = z * (conjugate ? std::conj(h[i]) : h[i]);
      spectrum[i][0] = w.real();
      spectrum[i][1] = w.imag();
    }
    Vector out = fft_->inverse(spectrum.get());
    out /= static_cast<double>(shape_.size());
    return out;
  }

  GridShape shape_;
  Psf psf_;
  std::shared_ptr<const detail::RealFft2d> fft_;
  std::shared_ptr<const std::vector<std::complex<double>>> otf_;
};

}  // namespace acquire
