#pragma once

#include <cmath>
#include <string>

#include "acquire/blur_operator.hpp"
#include "acquire/image.hpp"

namespace acquire {

/// Observed counts y, background b > 0 and the blur A. The data-fidelity
/// term is the generalized Kullback-Leibler divergence of Ax + b from y.
class PoissonData {
 public:
  PoissonData(BlurOperator op, Vector observed, Vector background)
      : op_(std::move(op)), y_(std::move(observed)), b_(std::move(background)) {
    const auto n = op_.shape().size();
    detail::require_same_size(static_cast<std::size_t>(y_.size()), n, "PoissonData observed");
    detail::require_same_size(static_cast<std::size_t>(b_.size()), n, "PoissonData background");
    detail::require(y_.minCoeff() >= 0.0, "PoissonData: observed counts must be nonnegative");
    detail::require(b_.minCoeff() > 0.0, "PoissonData: background must be strictly positive");
    floor_ = 1e-15 * b_.maxCoeff();
  }

  PoissonData(BlurOperator op, const Image& observed, double background)
      : PoissonData(std::move(op), observed.data(), Vector::Constant(observed.data().size(), background)) {}

  const BlurOperator& op() const { return op_; }
  const GridShape& shape() const { return op_.shape(); }
  const Vector& observed() const { return y_; }
  const Vector& background() const { return b_; }

  /// Ax + b with entries floored at 1e-15 * max(b). The floor only engages
  /// on FFT round-off for feasible x.
  Vector mean_counts(const Vector& x) const { return mean_counts_from_blurred(op_.apply(x)); }

  Vector mean_counts_from_blurred(Vector ax) const {
    ax += b_;
    for (Eigen::Index j = 0; j < ax.size(); ++j) {
      if (!std::isfinite(ax[j])) throw NumericalDomainError("KL term: non-finite value of Ax + b");
      if (ax[j] < floor_) ax[j] = floor_;
    }
    return ax;
  }

  /// Divergence evaluated from precomputed Ax + b.
  double kl_from_mean(const Vector& mean) const {
    double total = 0.0;
    for (Eigen::Index j = 0; j < mean.size(); ++j) {
      const double yj = y_[j];
      total += mean[j] - yj;
      if (yj > 0.0) total += yj * std::log(yj / mean[j]);
    }
    return total;
  }

  Vector kl_gradient_from_mean(const Vector& mean) const {
    return op_.apply_adjoint((1.0 - (y_.array() / mean.array())).matrix());
  }

 private:
  BlurOperator op_;
  Vector y_;
  Vector b_;
  double floor_ = 0.0;
};

inline double kl_value(const PoissonData& data, const Vector& x) { return data.kl_from_mean(data.mean_counts(x)); }

inline Vector kl_gradient(const PoissonData& data, const Vector& x) {
  return data.kl_gradient_from_mean(data.mean_counts(x));
}

/// A^T diag(y / (Ax + b)^2) A v.
inline Vector kl_hessian_vec(const PoissonData& data, const Vector& x, const Vector& v) {
  const Vector mean = data.mean_counts(x);
  const Vector curvature = (data.observed().array() / mean.array().square()).matrix();
  return data.op().apply_adjoint(curvature.cwiseProduct(data.op().apply(v)));
}

inline double kl_value(const PoissonData& data, const Image& x) { return kl_value(data, x.data()); }
inline Image kl_gradient(const PoissonData& data, const Image& x) {
  return Image(x.shape(), kl_gradient(data, x.data()));
}
inline Image kl_hessian_vec(const PoissonData& data, const Image& x, const Image& v) {
  return Image(x.shape(), kl_hessian_vec(data, x.data(), v.data()));
}

/// Second-order model of the KL term anchored at x_k, with the curvature
/// A^T U(x_k)^2 A + gamma I frozen at the anchor.
class KlQuadraticModel {
 public:
  KlQuadraticModel(const PoissonData& data, Vector anchor, double gamma)
      : data_(&data), anchor_(std::move(anchor)), gamma_(gamma) {
    detail::require(gamma >= 0.0, "KlQuadraticModel: gamma must be nonnegative");
    const Vector mean = data.mean_counts(anchor_);
    value_ = data.kl_from_mean(mean);
    gradient_ = data.kl_gradient_from_mean(mean);
    curvature_ = (data.observed().array() / mean.array().square()).matrix();
  }

  const Vector& anchor() const { return anchor_; }
  double anchor_value() const { return value_; }
  const Vector& anchor_gradient() const { return gradient_; }
  /// Diagonal of U(x_k)^2, that is y / (A x_k + b)^2.
  const Vector& curvature_weights() const { return curvature_; }
  double gamma() const { return gamma_; }

  Vector hessian_vec(const Vector& v) const {
    Vector out = data_->op().apply_adjoint(curvature_.cwiseProduct(data_->op().apply(v)));
    out += gamma_ * v;
    return out;
  }

  double value(const Vector& x) const {
    const Vector step = x - anchor_;
    return value_ + step.dot(gradient_) + 0.5 * step.dot(hessian_vec(step));
  }

  Vector gradient(const Vector& x) const { return gradient_ + hessian_vec(x - anchor_); }

 private:
  const PoissonData* data_;
  Vector anchor_;
  double gamma_;
  double value_ = 0.0;
  Vector gradient_;
  Vector curvature_;
};

inline KlQuadraticModel build_kl_model(const PoissonData& data, const Vector& anchor, double gamma) {
  return KlQuadraticModel(data, anchor, gamma);
}

}  // namespace acquire
