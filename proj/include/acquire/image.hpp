#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <utility>

#include "acquire/errors.hpp"

namespace acquire {

using Vector = Eigen::VectorXd;

/// Grid dimensions plus the periodic neighbour rule used by the difference
/// stencils and the convolution. Indices are zero-based; pixel (k, l) lives
/// at linear index l * rows + k (columns are stacked).
struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  std::size_t index(std::size_t k, std::size_t l) const { return l * rows + k; }
  std::size_t row_of(std::size_t i) const { return i % rows; }
  std::size_t col_of(std::size_t i) const { return i / rows; }

  // Periodic successors: the last row/column wraps to the first.
  std::size_t next_row(std::size_t k) const { return k + 1 == rows ? 0 : k + 1; }
  std::size_t next_col(std::size_t l) const { return l + 1 == cols ? 0 : l + 1; }

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// A single-channel image with nonnegative-by-convention intensities.
/// Stored column-major so that data()[l * rows + k] == (*this)(k, l).
class Image {
 public:
  Image() = default;

  Image(std::size_t rows, std::size_t cols) : shape_{rows, cols}, data_(Vector::Zero(rows * cols)) {
    detail::require(rows > 0 && cols > 0, "Image: dimensions must be positive");
  }

  Image(std::size_t rows, std::size_t cols, Vector data) : shape_{rows, cols}, data_(std::move(data)) {
    detail::require(rows > 0 && cols > 0, "Image: dimensions must be positive");
    detail::require_same_size(static_cast<std::size_t>(data_.size()), rows * cols, "Image data");
  }

  Image(GridShape shape, Vector data) : Image(shape.rows, shape.cols, std::move(data)) {}

  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return shape_.size(); }
  const GridShape& shape() const { return shape_; }

  const Vector& data() const { return data_; }

  double operator()(std::size_t k, std::size_t l) const {
    return data_[static_cast<Eigen::Index>(shape_.index(k, l))];
  }

  double max() const { return data_.maxCoeff(); }
  double min() const { return data_.minCoeff(); }
  double sum() const { return data_.sum(); }

 private:
  GridShape shape_{};
  Vector data_;
};

inline Vector to_vector(const Image& image) { return image.data(); }

inline Image from_vector(Vector v, std::size_t rows, std::size_t cols) {
  if (static_cast<std::size_t>(v.size()) != rows * cols) {
    throw DimensionMismatch("from_vector: length " + std::to_string(v.size()) + " is not " +
                            std::to_string(rows) + "x" + std::to_string(cols));
  }
  return Image(rows, cols, std::move(v));
}

inline Image from_vector(Vector v, const GridShape& shape) {
  return from_vector(std::move(v), shape.rows, shape.cols);
}

/// Builds an image from a row-major buffer (the layout of most file formats).
inline Image from_row_major(const double* values, std::size_t rows, std::size_t cols) {
  Vector v(static_cast<Eigen::Index>(rows * cols));
  for (std::size_t k = 0; k < rows; ++k)
    for (std::size_t l = 0; l < cols; ++l) v[static_cast<Eigen::Index>(l * rows + k)] = values[k * cols + l];
  return Image(rows, cols, std::move(v));
}

/// Divides by the largest intensity. Returns the scaled image and the divisor.
inline std::pair<Image, double> scale_to_unit_max(const Image& image) {
  const double peak = image.max();
  if (!(peak > 0.0)) throw std::invalid_argument("scale_to_unit_max: image has no positive intensity");
  return {Image(image.shape(), image.data() / peak), peak};
}

}  // namespace acquire
