#pragma once

#include <algorithm>
#include <cmath>

#include "acquire/image.hpp"

namespace acquire {

/// Per-pixel forward differences with periodic wrap: vertical[i] is
/// X(k+1, l) - X(k, l) and horizontal[i] is X(k, l+1) - X(k, l).
struct PixelDifferences {
  Vector vertical;
  Vector horizontal;

  Vector norms() const { return (vertical.array().square() + horizontal.array().square()).sqrt().matrix(); }
};

inline PixelDifferences differences(const Vector& x, const GridShape& g) {
  detail::require_same_size(static_cast<std::size_t>(x.size()), g.size(), "differences");
  PixelDifferences d{Vector(x.size()), Vector(x.size())};
  for (std::size_t l = 0; l < g.cols; ++l) {
    const std::size_t ln = g.next_col(l);
    for (std::size_t k = 0; k < g.rows; ++k) {
      const auto i = static_cast<Eigen::Index>(g.index(k, l));
      const double xi = x[i];
      d.vertical[i] = x[static_cast<Eigen::Index>(g.index(g.next_row(k), l))] - xi;
      d.horizontal[i] = x[static_cast<Eigen::Index>(g.index(k, ln))] - xi;
    }
  }
  return d;
}

/// sum_i D_i^T p_i for a field of per-pixel pairs p_i = (vertical, horizontal).
inline Vector differences_adjoint(const Vector& vertical, const Vector& horizontal, const GridShape& g) {
  Vector out = Vector::Zero(static_cast<Eigen::Index>(g.size()));
  for (std::size_t l = 0; l < g.cols; ++l) {
    const std::size_t ln = g.next_col(l);
    for (std::size_t k = 0; k < g.rows; ++k) {
      const auto i = static_cast<Eigen::Index>(g.index(k, l));
      out[i] -= vertical[i] + horizontal[i];
      out[static_cast<Eigen::Index>(g.index(g.next_row(k), l))] += vertical[i];
      out[static_cast<Eigen::Index>(g.index(k, ln))] += horizontal[i];
    }
  }
  return out;
}

/// Isotropic discrete total variation, sum_i ||D_i x||.
inline double tv_value(const Vector& x, const GridShape& g) { return differences(x, g).norms().sum(); }
inline double tv_value(const Image& x) { return tv_value(x.data(), x.shape()); }

/// Huber-like smoothing of |z|: quadratic below mu, linear above.
inline double huber(double z, double mu) {
  const double a = std::abs(z);
  return a > mu ? a : 0.5 * (z * z / mu + mu);
}

/// phi_mu'(t) / t, the factor multiplying D_i^T D_i x in the gradient.
inline double huber_derivative_factor(double norm, double mu) { return 1.0 / std::max(norm, mu); }

inline double tv_mu_value(const Vector& x, const GridShape& g, double mu) {
  detail::require(mu > 0.0, "tv_mu_value: mu must be positive");
  const Vector n = differences(x, g).norms();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n.size(); ++i) total += huber(n[i], mu);
  return total;
}

inline Vector tv_mu_gradient(const Vector& x, const GridShape& g, double mu) {
  detail::require(mu > 0.0, "tv_mu_gradient: mu must be positive");
  PixelDifferences d = differences(x, g);
  const Vector n = d.norms();
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    const double f = huber_derivative_factor(n[i], mu);
    d.vertical[i] *= f;
    d.horizontal[i] *= f;
  }
  return differences_adjoint(d.vertical, d.horizontal, g);
}

inline double tv_mu_value(const Image& x, double mu) { return tv_mu_value(x.data(), x.shape(), mu); }
inline Image tv_mu_gradient(const Image& x, double mu) {
  return Image(x.shape(), tv_mu_gradient(x.data(), x.shape(), mu));
}

/// Iteratively reweighted quadratic model of TV_mu anchored at x_k:
///   0.5 * sum_i w_i ||D_i x||^2 + 0.5 * TV_mu(x_k),
/// with w_i = 1 / ||D_i x_k|| above mu and 1 / mu otherwise.
class TvQuadraticModel {
 public:
  TvQuadraticModel(const Vector& anchor, const GridShape& shape, double mu) : shape_(shape), mu_(mu) {
    detail::require(mu > 0.0, "TvQuadraticModel: mu must be positive");
    const Vector n = differences(anchor, shape).norms();
    weights_.resize(n.size());
    double anchor_tv = 0.0;
    for (Eigen::Index i = 0; i < n.size(); ++i) {
      // Ties at mu go to the capped branch; both give 1/mu.
      weights_[i] = n[i] > mu ? 1.0 / n[i] : 1.0 / mu;
      anchor_tv += huber(n[i], mu);
    }
    constant_ = 0.5 * anchor_tv;
  }

  const Vector& weights() const { return weights_; }
  double mu() const { return mu_; }
  const GridShape& shape() const { return shape_; }

  double value(const Vector& x) const {
    const Vector n = differences(x, shape_).norms();
    return 0.5 * weights_.dot(n.cwiseAbs2()) + constant_;
  }

  Vector hessian_vec(const Vector& v) const {
    PixelDifferences d = differences(v, shape_);
    d.vertical.array() *= weights_.array();
    d.horizontal.array() *= weights_.array();
    return differences_adjoint(d.vertical, d.horizontal, shape_);
  }

  // The model is homogeneous quadratic, so its gradient is the Hessian action.
  Vector gradient(const Vector& x) const { return hessian_vec(x); }

 private:
  GridShape shape_;
  double mu_;
  Vector weights_;
  double constant_ = 0.0;
};

inline TvQuadraticModel build_tv_model(const Vector& anchor, const GridShape& shape, double mu) {
  return TvQuadraticModel(anchor, shape, mu);
}

}  // namespace acquire
