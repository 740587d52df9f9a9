#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "acquire/feasible_set.hpp"
#include "acquire/image.hpp"

namespace acquire {

template <typename M>
concept SmoothObjective = requires(const M& m, const Vector& x) {
  { m.value(x) } -> std::convertible_to<double>;
  { m.gradient(x) } -> std::convertible_to<Vector>;
};

/// A quadratic exposes its constant Hessian; SGP then evaluates the line
/// search and the next gradient in closed form from one product per step.
template <typename M>
concept QuadraticObjective = SmoothObjective<M> && requires(const M& m, const Vector& v) {
  { m.hessian_vec(v) } -> std::convertible_to<Vector>;
};

struct SgpConfig {
  int max_iters = 10;             // 0 means no iteration cap
  double armijo = 1e-4;           // sufficient-decrease fraction
  double backtrack = 0.5;
  int max_backtracks = 50;
  double scaling_lower = 1e-4;
  double scaling_upper = 1e4;
  bool identity_scaling = false;
  double step_min = 1e-10;
  double step_max = 1e10;
  std::size_t memory = 3;         // BB2 steplengths kept for ABB_min
  double tau_init = 0.5;
  double tau_shrink = 0.9;
  double tau_grow = 1.1;
  int gradient_refresh = 25;      // quadratic path: recompute the gradient every so many steps
  int hard_iteration_limit = 100000;

  void validate() const {
    detail::require(armijo > 0.0 && armijo < 1.0, "SgpConfig: armijo must lie in (0,1)");
    detail::require(backtrack > 0.0 && backtrack < 1.0, "SgpConfig: backtrack must lie in (0,1)");
    detail::require(step_min > 0.0 && step_min < step_max, "SgpConfig: need 0 < step_min < step_max");
    detail::require(scaling_lower > 0.0 && scaling_lower <= scaling_upper, "SgpConfig: bad scaling bounds");
    detail::require(memory >= 1, "SgpConfig: memory must be >= 1");
    detail::require(max_iters >= 0, "SgpConfig: max_iters must be >= 0");
  }
};

template <typename M>
concept JointEvaluation = requires(const M& m, const Vector& x) {
  { m.value_and_gradient(x) } -> std::convertible_to<std::pair<double, Vector>>;
};

template <SmoothObjective M>
std::pair<double, Vector> evaluate(const M& m, const Vector& x) {
  if constexpr (JointEvaluation<M>) {
    return m.value_and_gradient(x);
  } else {
    return {m.value(x), m.gradient(x)};
  }
}

/// Steplength memory shared by consecutive solves: the last steplength used
/// and the most recent BB2 values, so a new call picks up where the previous
/// one stopped instead of restarting from the default.
struct SteplengthState {
  std::deque<double> bb2_history;
  std::optional<double> last_step;
  double tau = 0.5;

  explicit SteplengthState(double tau_init = 0.5) : tau(tau_init) {}
};

/// Diagonal scaling: the iterate clamped into [lower, upper].
inline DiagonalMetric scaling_matrix(const Vector& z, double lower, double upper) {
  return DiagonalMetric(z.cwiseMax(lower).cwiseMin(upper), lower, upper);
}

/// Scaled ABB_min rule. s and w are the latest iterate and gradient
/// differences; `metric` is the scaling for the coming step.
inline double abbmin_steplength(SteplengthState& state, const Vector& s, const Vector& w, const DiagonalMetric& metric,
                                const SgpConfig& config) {
  const auto& d = metric.diagonal();
  const double s_dinv_w = (s.array() * w.array() / d.array()).sum();
  const double dw_dw = (d.array() * w.array()).square().sum();
  const double s_d_w = (s.array() * d.array() * w.array()).sum();
  if (s_dinv_w <= 0.0 || dw_dw <= 0.0 || s_d_w <= 0.0) {
    state.last_step = config.step_max;
    return config.step_max;
  }
  const double bb1 = std::clamp((s.array() / d.array()).square().sum() / s_dinv_w, config.step_min, config.step_max);
  const double bb2 = std::clamp(s_d_w / dw_dw, config.step_min, config.step_max);

  state.bb2_history.push_back(bb2);
  while (state.bb2_history.size() > config.memory) state.bb2_history.pop_front();

  double step;
  if (bb2 / bb1 < state.tau) {
    step = *std::min_element(state.bb2_history.begin(), state.bb2_history.end());
    state.tau *= config.tau_shrink;
  } else {
    step = bb1;
    state.tau *= config.tau_grow;
  }
  step = std::clamp(step, config.step_min, config.step_max);
  state.last_step = step;
  return step;
}

/// Gradient change restricted to the face holding the new iterate z:
/// coordinates pinned at zero drop out, and with the flux row the component
/// along e is removed in the scaled metric. The steplength then measures
/// curvature only along directions the projected step can move in.
inline Vector face_secant(const FeasibleSet& set, const Vector& z, const Vector& s, Vector w,
                          const DiagonalMetric& metric) {
  const auto& d = metric.diagonal();
  double dw = 0.0, dsum = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z[i] == 0.0 && s[i] == 0.0) {
      w[i] = 0.0;
      continue;
    }
    dw += d[i] * w[i];
    dsum += d[i];
  }
  if (set.has_flux() && dsum > 0.0) {
    const double c = dw / dsum;
    for (Eigen::Index i = 0; i < z.size(); ++i)
      if (!(z[i] == 0.0 && s[i] == 0.0)) w[i] -= c;
  }
  return w;
}

/// Stopping rule for one SGP run.
struct SgpStop {
  /// Stop once ||projected gradient|| falls to this value.
  double projected_gradient_target = 0.0;
  /// Stop when ||z_{j+1} - z_j|| <= relative_change * ||z_j||; 0 disables.
  double relative_change = 0.0;
};

/// State after an accepted step, handed to an observer.
struct SgpIterate {
  int iteration;
  const Vector& z;
  const Vector& gradient;
  double value;
  double relative_change;
  double rho;
};

/// Returning false ends the run.
using SgpObserver = std::function<bool(const SgpIterate&)>;

struct SgpResult {
  Vector z;
  double value = 0.0;
  Vector gradient;
  double projected_gradient_norm = 0.0;
  int iterations = 0;
  int backtracks = 0;
  bool cap_hit = false;
  bool target_reached = false;
  std::vector<double> values;  // objective at z_0, z_1, ...
  std::vector<double> first_order_slopes;  // grad^T (p_j - z_j) of accepted steps
};

/// Scaled gradient projection:
///   z_{j+1} = z_j + rho_j (P_{S, C_j^{-1}}(z_j - nu_j C_j grad(z_j)) - z_j)
/// with monotone Armijo backtracking on rho_j and ABB_min steplengths.
template <SmoothObjective Objective>
SgpResult sgp_solve(const Objective& objective, const FeasibleSet& set, const Vector& z0, SteplengthState& state,
                    const SgpConfig& config, const SgpStop& stop, const SgpObserver& observer = {}) {
  config.validate();
  constexpr bool kQuadratic = QuadraticObjective<Objective>;
  const Eigen::Index n = z0.size();

  SgpResult result;
  Vector z = z0;
  double f;
  Vector g;
  std::tie(f, g) = evaluate(objective, z);
  result.values.push_back(f);

  auto metric_at = [&](const Vector& point) {
    return config.identity_scaling ? DiagonalMetric::identity(n)
                                   : scaling_matrix(point, config.scaling_lower, config.scaling_upper);
  };

  DiagonalMetric metric = metric_at(z);
  double step = std::clamp(state.last_step.value_or(1.0), config.step_min, config.step_max);
  int since_refresh = 0;

  for (int j = 0;; ++j) {
    result.projected_gradient_norm = set.projected_gradient_norm(z, g);
    if (result.projected_gradient_norm <= stop.projected_gradient_target) {
      result.target_reached = true;
      break;
    }
    if ((config.max_iters > 0 && j >= config.max_iters) || j >= config.hard_iteration_limit) {
      result.cap_hit = true;
      break;
    }

    const Vector trial = set.project_weighted(metric, z - step * metric.diagonal().cwiseProduct(g));
    const Vector dir = trial - z;
    const double slope = g.dot(dir);
    // No descent left in the scaled projected direction: z is stationary
    // up to round-off.
    if (!(slope < 0.0)) {
      result.target_reached = dir.squaredNorm() == 0.0;
      break;
    }

    double rho = 1.0;
    double f_new = 0.0;
    // A slope this small relative to f cannot be resolved by the Armijo test
    // in floating point; running out of halvings then means convergence.
    const bool at_round_off = std::abs(slope) <= 1e-8 * (1.0 + std::abs(f));
    bool stalled = false;
    Vector hd;
    Vector g_trial;
    if constexpr (kQuadratic) {
      hd = objective.hessian_vec(dir);
      const double curvature = dir.dot(hd);
      for (int bt = 0;; ++bt) {
        f_new = f + rho * slope + 0.5 * rho * rho * curvature;
        if (f_new <= f + config.armijo * rho * slope) break;
        if (bt >= config.max_backtracks) {
          if (!at_round_off) throw LineSearchFailure("sgp_solve: sufficient decrease not reached");
          stalled = true;
          break;
        }
        rho *= config.backtrack;
        ++result.backtracks;
      }
    } else {
      for (int bt = 0;; ++bt) {
        if constexpr (JointEvaluation<Objective>) {
          std::tie(f_new, g_trial) = objective.value_and_gradient(z + rho * dir);
        } else {
          f_new = objective.value(z + rho * dir);
        }
        if (f_new <= f + config.armijo * rho * slope) break;
        if (bt >= config.max_backtracks) {
          if (!at_round_off) throw LineSearchFailure("sgp_solve: sufficient decrease not reached");
          stalled = true;
          break;
        }
        rho *= config.backtrack;
        ++result.backtracks;
      }
    }

    if (stalled) break;

    Vector z_new = z + rho * dir;
    if (set.has_flux()) {
      // Convex combination of feasible points; repair round-off below zero.
      z_new = z_new.cwiseMax(0.0);
    }
    Vector g_new;
    if constexpr (kQuadratic) {
      if (++since_refresh >= config.gradient_refresh) {
        std::tie(f_new, g_new) = evaluate(objective, z_new);
        since_refresh = 0;
      } else {
        g_new = g + rho * hd;
      }
    } else if constexpr (JointEvaluation<Objective>) {
      // The clamp only touches round-off below zero, so the trial gradient stands.
      g_new = std::move(g_trial);
    } else {
      g_new = objective.gradient(z_new);
    }

    const Vector s = z_new - z;
    const Vector w = g_new - g;
    const double z_norm = z.norm();
    const double rel_change = z_norm > 0.0 ? s.norm() / z_norm : s.norm();

    result.first_order_slopes.push_back(slope);
    z = std::move(z_new);
    g = std::move(g_new);
    f = f_new;
    result.values.push_back(f);
    result.iterations = j + 1;

    metric = metric_at(z);
    step = abbmin_steplength(state, s, face_secant(set, z, s, w, metric), metric, config);

    if (observer && !observer(SgpIterate{j + 1, z, g, f, rel_change, rho})) break;
    if (stop.relative_change > 0.0 && rel_change <= stop.relative_change) break;
  }

  // Long quadratic runs hand back an exact gradient; the recursive update
  // drifts by round-off only after many steps.
  if constexpr (kQuadratic) {
    if (since_refresh > 0 && result.iterations >= config.gradient_refresh) {
      std::tie(f, g) = evaluate(objective, z);
    }
  }
  if (result.iterations > 0) {
    result.projected_gradient_norm = set.projected_gradient_norm(z, g);
    result.target_reached = result.projected_gradient_norm <= stop.projected_gradient_target;
  }
  result.z = std::move(z);
  result.value = f;
  result.gradient = std::move(g);
  return result;
}

}  // namespace acquire
