#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>

#include "acquire/feasible_set.hpp"
#include "acquire/poisson_model.hpp"
#include "acquire/restoration.hpp"
#include "acquire/sgp.hpp"
#include "acquire/tv_model.hpp"

namespace acquire {

struct AcquireConfig {
  double lambda = 0.0;
  double mu = 1e-2;
  double gamma = 1e-5;
  double eta = 1e-5;        // Armijo slope fraction
  double delta = 0.5;       // backtracking factor
  int memory = 5;           // nonmonotone reference window
  bool monotone = false;    // forces memory 1
  double theta = 0.1;       // inner stopping ratio
  int inner_max_iters = 10; // 0 leaves the inner solver uncapped
  double tol = 1e-4;        // relative-change stopping tolerance
  int max_iters = 1000;
  double max_time = 25.0;   // seconds; <= 0 disables
  int max_backtracks = 60;
  SgpConfig inner{};

  void validate() const {
    detail::require(lambda > 0.0, "AcquireConfig: lambda must be positive");
    detail::require(mu > 0.0, "AcquireConfig: mu must be positive");
    detail::require(gamma >= 0.0, "AcquireConfig: gamma must be nonnegative");
    detail::require(eta > 0.0 && eta < 1.0, "AcquireConfig: eta must lie in (0,1)");
    detail::require(delta > 0.0 && delta < 1.0, "AcquireConfig: delta must lie in (0,1)");
    detail::require(memory >= 1, "AcquireConfig: memory must be >= 1");
    detail::require(theta > 0.0 && theta < 1.0, "AcquireConfig: theta must lie in (0,1)");
    detail::require(tol >= 0.0, "AcquireConfig: tol must be nonnegative");
    detail::require(inner_max_iters >= 0, "AcquireConfig: inner_max_iters must be >= 0");
    detail::require(max_iters >= 1, "AcquireConfig: max_iters must be >= 1");
  }
};

/// F_k = D_KL^(k) + lambda * TV_mu^(k): the KL second-order model plus the
/// reweighted TV quadratic, both anchored at x_k. Evaluated through its
/// anchor expansion so that value and gradient share one Hessian product.
class OuterModel {
 public:
  OuterModel(const PoissonData& data, const Vector& anchor, double lambda, double mu, double gamma)
      : kl_(data, anchor, gamma), tv_(anchor, data.shape(), mu), lambda_(lambda) {
    anchor_gradient_ = kl_.anchor_gradient() + lambda_ * tv_.gradient(anchor);
    anchor_value_ = kl_.anchor_value() + lambda_ * tv_.value(anchor);
  }

  const KlQuadraticModel& kl() const { return kl_; }
  const TvQuadraticModel& tv() const { return tv_; }
  const Vector& anchor() const { return kl_.anchor(); }
  double anchor_value() const { return anchor_value_; }
  const Vector& anchor_gradient() const { return anchor_gradient_; }

  Vector hessian_vec(const Vector& v) const {
    Vector out = kl_.hessian_vec(v);
    out += lambda_ * tv_.hessian_vec(v);
    return out;
  }

  std::pair<double, Vector> value_and_gradient(const Vector& x) const {
    const Vector step = x - anchor();
    Vector hs = hessian_vec(step);
    const double f = anchor_value_ + step.dot(anchor_gradient_) + 0.5 * step.dot(hs);
    hs += anchor_gradient_;
    return {f, std::move(hs)};
  }

  double value(const Vector& x) const { return value_and_gradient(x).first; }
  Vector gradient(const Vector& x) const { return value_and_gradient(x).second; }

 private:
  KlQuadraticModel kl_;
  TvQuadraticModel tv_;
  double lambda_;
  Vector anchor_gradient_;
  double anchor_value_ = 0.0;
};

inline OuterModel build_outer_model(const PoissonData& data, const Vector& anchor, double lambda, double mu,
                                    double gamma) {
  return OuterModel(data, anchor, lambda, mu, gamma);
}

/// Current outer iterate with its objective value and gradient.
struct OuterIterate {
  Vector x;
  double value = 0.0;
  Vector gradient;
};

struct AcquireStep {
  Vector x_next;
  double value_next = 0.0;
  double alpha = 1.0;
  int backtracks = 0;
  Vector inner_solution;         // x-hat
  double direction_norm = 0.0;   // ||x-hat - x_k||
  double direction_slope = 0.0;  // grad F(x_k)^T d_k
  double reference_value = 0.0;  // max of the recent objective values
  int inner_iters = 0;
  bool inner_cap_hit = false;
  double inner_pg_norm = 0.0;    // ||grad_S F_k(x-hat)||
  bool stagnated = false;        // inner solve failed to decrease F_k
};

/// One outer iteration: approximately minimize F_k over the feasible set
/// from x_k, then backtrack along d_k = x-hat - x_k until
///   F(x_k + alpha d_k) <= max(recent F) + eta * alpha * grad F(x_k)^T d_k.
inline AcquireStep acquire_step(const SmoothedObjective& objective, const FeasibleSet& set,
                                const OuterIterate& current, std::span<const double> recent_values,
                                SteplengthState& steplength, const AcquireConfig& config, double inner_target) {
  const OuterModel model(objective.data(), current.x, objective.lambda(), objective.mu(), config.gamma);

  SgpConfig inner = config.inner;
  inner.max_iters = config.inner_max_iters;
  const SgpResult solved = sgp_solve(model, set, current.x, steplength, inner, SgpStop{inner_target, 0.0});

  AcquireStep step;
  step.inner_iters = solved.iterations;
  step.inner_cap_hit = solved.cap_hit;
  step.inner_pg_norm = solved.projected_gradient_norm;
  step.inner_solution = solved.z;
  // The inner solver is monotone, so this only triggers on round-off.
  if (solved.iterations > 0 && model.value(solved.z) > model.anchor_value()) {
    step.inner_solution = current.x;
    step.stagnated = true;
  }

  const Vector d = step.inner_solution - current.x;
  step.direction_norm = d.norm();
  step.direction_slope = current.gradient.dot(d);
  step.reference_value = recent_values.empty() ? current.value
                                                : *std::max_element(recent_values.begin(), recent_values.end());

  if (step.direction_norm == 0.0) {
    step.x_next = current.x;
    step.value_next = current.value;
    return step;
  }

  double alpha = 1.0;
  for (int bt = 0;; ++bt) {
    Vector trial = current.x + alpha * d;
    const double f = objective.value(trial);
    if (f <= step.reference_value + config.eta * alpha * step.direction_slope) {
      step.x_next = std::move(trial);
      step.value_next = f;
      break;
    }
    if (bt >= config.max_backtracks)
      throw LineSearchFailure("acquire_step: no acceptable steplength after " + std::to_string(bt) + " halvings");
    alpha *= config.delta;
    ++step.backtracks;
  }
  step.alpha = alpha;
  if (set.has_flux()) step.x_next = step.x_next.cwiseMax(0.0);
  return step;
}

/// Runs ACQUIRE from a feasible x0 until the relative change drops below
/// config.tol, the iteration cap, or the time budget.
inline RestorationResult acquire_solve(const PoissonData& data, const FeasibleSet& set, const Vector& x0,
                                       const AcquireConfig& config,
                                       const std::optional<Vector>& ground_truth = std::nullopt,
                                       const IterationCallback& on_iteration = {}) {
  config.validate();
  detail::require(set.contains(x0, 1e-8), "acquire_solve: starting point must be feasible");
  const detail::Stopwatch clock;
  const SmoothedObjective objective(data, config.lambda, config.mu);
  const int window = config.monotone ? 1 : config.memory;

  OuterIterate current;
  current.x = x0;
  std::tie(current.value, current.gradient) = objective.value_and_gradient(current.x);
  // F_1 is anchored at x0 and tangent to F there, so this is ||grad_S F_1(x0)||.
  const double initial_pg = set.projected_gradient_norm(current.x, current.gradient);

  RestorationResult result;
  result.trace.initial_objective = current.value;
  if (ground_truth) result.trace.initial_rel_error = relative_difference(current.x, *ground_truth);
  detail::BestIterate best(ground_truth);
  SteplengthState steplength(config.inner.tau_init);
  std::deque<double> recent{current.value};

  double threshold = initial_pg;
  for (int k = 1;; ++k) {
    threshold *= config.theta;
    const std::vector<double> window_values(recent.begin(), recent.end());
    AcquireStep step = acquire_step(objective, set, current, window_values, steplength, config, threshold);

    const double x_norm = current.x.norm();
    const double change = (step.x_next - current.x).norm();

    current.x = std::move(step.x_next);
    std::tie(current.value, current.gradient) = objective.value_and_gradient(current.x);
    recent.push_back(current.value);
    while (static_cast<int>(recent.size()) > window) recent.pop_front();

    TraceRow row;
    row.iter = k;
    row.objective = current.value;
    row.rel_change = x_norm > 0.0 ? change / x_norm : change;
    row.alpha = step.alpha;
    row.inner_iters = step.inner_iters;
    row.pg_norm = set.projected_gradient_norm(current.x, current.gradient);
    row.rel_error = best.observe(k, current.x);
    row.inner_cap_hit = step.inner_cap_hit;
    row.stagnated = step.stagnated;
    row.backtracks = step.backtracks;
    row.inner_target = threshold;
    row.inner_pg_norm = step.inner_pg_norm;
    row.direction_norm = step.direction_norm;
    row.direction_slope = step.direction_slope;
    row.reference_value = step.reference_value;
    row.time_s = clock.seconds();
    result.trace.rows.push_back(row);
    if (on_iteration) on_iteration(row, current.x);

    if (change <= config.tol * x_norm) {
      result.reason = StopReason::Tolerance;
      break;
    }
    if (k >= config.max_iters) {
      result.reason = StopReason::MaxIterations;
      break;
    }
    if (config.max_time > 0.0 && row.time_s >= config.max_time) {
      result.reason = StopReason::TimeBudget;
      break;
    }
  }
  result.x = std::move(current.x);
  best.finish(result);
  return result;
}

}  // namespace acquire
