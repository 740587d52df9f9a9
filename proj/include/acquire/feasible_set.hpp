#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "acquire/image.hpp"

namespace acquire {

/// Positive diagonal scaling d with known bounds lo <= d_i <= hi.
class DiagonalMetric {
 public:
  DiagonalMetric(Vector diagonal, double lo, double hi) : d_(std::move(diagonal)), lo_(lo), hi_(hi) {
    detail::require(lo > 0.0 && lo <= hi, "DiagonalMetric: need 0 < lo <= hi");
    detail::require(d_.size() == 0 || (d_.minCoeff() >= lo && d_.maxCoeff() <= hi),
                    "DiagonalMetric: entries outside [lo, hi]");
  }

  static DiagonalMetric identity(Eigen::Index n) { return DiagonalMetric(Vector::Ones(n), 1.0, 1.0); }

  const Vector& diagonal() const { return d_; }
  double lower() const { return lo_; }
  double upper() const { return hi_; }

 private:
  Vector d_;
  double lo_;
  double hi_;
};

/// Nonnegative orthant, optionally intersected with the flux hyperplane
/// sum(x) = c. Active constraints are the exact zeros of x: every iterate
/// in this library comes out of a projection, which produces exact zeros.
class FeasibleSet {
 public:
  enum class Kind { Nonnegative, NonnegativeFlux };

  static FeasibleSet nonnegative() { return FeasibleSet(Kind::Nonnegative, 0.0); }
  static FeasibleSet nonnegative_flux(double flux) {
    detail::require(flux > 0.0 && std::isfinite(flux), "FeasibleSet: flux must be positive");
    return FeasibleSet(Kind::NonnegativeFlux, flux);
  }

  Kind kind() const { return kind_; }
  bool has_flux() const { return kind_ == Kind::NonnegativeFlux; }
  double flux() const { return flux_; }

  bool contains(const Vector& x, double flux_rtol = 1e-10) const {
    if (x.size() > 0 && x.minCoeff() < 0.0) return false;
    return !has_flux() || std::abs(x.sum() - flux_) <= flux_rtol * flux_;
  }

  /// Euclidean projection.
  Vector project(const Vector& v) const {
    if (!has_flux()) return v.cwiseMax(0.0);
    return shifted_clamp(v, Vector::Ones(v.size()));
  }

  /// Projection in the norm sum (x_i - v_i)^2 / d_i.
  Vector project_weighted(const DiagonalMetric& metric, const Vector& v) const {
    detail::require_same_size(static_cast<std::size_t>(metric.diagonal().size()), static_cast<std::size_t>(v.size()),
                              "project_weighted metric");
    // The box part is separable, so the metric only matters with the flux row.
    if (!has_flux()) return v.cwiseMax(0.0);
    return shifted_clamp(v, metric.diagonal());
  }

  /// Projection of -grad onto the tangent cone at feasible x.
  Vector projected_gradient(const Vector& x, const Vector& grad) const {
    detail::require_same_size(static_cast<std::size_t>(x.size()), static_cast<std::size_t>(grad.size()),
                              "projected_gradient");
    if (x.size() > 0 && x.minCoeff() < 0.0) throw std::invalid_argument("projected_gradient: x is infeasible");
    const Eigen::Index n = x.size();
    Vector out(n);
    if (!has_flux()) {
      for (Eigen::Index i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? -grad[i] : std::max(-grad[i], 0.0);
      return out;
    }
    // Tangent cone {v : sum v = 0, v_i >= 0 where x_i = 0}. KKT gives
    // v_i = nu - g_i on free coordinates and max(nu - g_i, 0) on active ones,
    // with nu the root of the increasing piecewise-linear sum(v)(nu).
    double free_sum = 0.0;
    Eigen::Index free_count = 0;
    std::vector<double> active;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (x[i] > 0.0) {
        free_sum += grad[i];
        ++free_count;
      } else {
        active.push_back(grad[i]);
      }
    }
    if (free_count == 0) throw std::invalid_argument("projected_gradient: x is infeasible for the flux set");
    std::sort(active.begin(), active.end());
    double nu = 0.0;
    double sum = free_sum;
    for (std::size_t j = 0; j <= active.size(); ++j) {
      nu = sum / static_cast<double>(free_count + static_cast<Eigen::Index>(j));
      const double next = j < active.size() ? active[j] : std::numeric_limits<double>::infinity();
      if (nu <= next) break;
      sum += active[j];
    }
    for (Eigen::Index i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? nu - grad[i] : std::max(nu - grad[i], 0.0);
    return out;
  }

  double projected_gradient_norm(const Vector& x, const Vector& grad) const {
    return projected_gradient(x, grad).norm();
  }

  bool is_stationary(const Vector& x, const Vector& grad, double tol) const {
    return projected_gradient_norm(x, grad) <= tol;
  }

 private:
  FeasibleSet(Kind kind, double flux) : kind_(kind), flux_(flux) {}

  // max(v - tau * d, 0) with tau the root of sum max(v_i - tau d_i, 0) = c.
  // The sum is piecewise linear and decreasing in tau with breakpoints v_i/d_i.
  Vector shifted_clamp(const Vector& v, const Vector& d) const {
    const Eigen::Index n = v.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] / d[a] > v[b] / d[b]; });
    double sv = 0.0, sd = 0.0, tau = 0.0;
    for (std::size_t j = 0; j < order.size(); ++j) {
      const Eigen::Index i = order[j];
      sv += v[i];
      sd += d[i];
      tau = (sv - flux_) / sd;
      const double next = j + 1 < order.size() ? v[order[j + 1]] / d[order[j + 1]]
                                               : -std::numeric_limits<double>::infinity();
      if (tau >= next) break;
    }
    return (v - tau * d).cwiseMax(0.0);
  }

  Kind kind_;
  double flux_;
};

}  // namespace acquire
