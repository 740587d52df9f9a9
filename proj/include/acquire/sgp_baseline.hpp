#pragma once

#include <algorithm>
#include <optional>

#include "acquire/feasible_set.hpp"
#include "acquire/poisson_model.hpp"
#include "acquire/restoration.hpp"
#include "acquire/sgp.hpp"

namespace acquire {

struct SgpBaselineConfig {
  double lambda = 0.0;
  double mu = 1e-2;
  double tol = 1e-4;       // relative-change stopping tolerance
  int max_iters = 100000;
  double max_time = 25.0;  // seconds; <= 0 disables
  SgpConfig sgp{};

  void validate() const {
    detail::require(lambda > 0.0, "SgpBaselineConfig: lambda must be positive");
    detail::require(mu > 0.0, "SgpBaselineConfig: mu must be positive");
    detail::require(tol >= 0.0, "SgpBaselineConfig: tol must be nonnegative");
    detail::require(max_iters >= 1, "SgpBaselineConfig: max_iters must be >= 1");
  }
};

/// Scaled gradient projection applied directly to F = D_KL + lambda TV_mu,
/// stopped on the relative change of the iterate. One trace row per SGP step.
inline RestorationResult sgp_baseline_solve(const PoissonData& data, const FeasibleSet& set, const Vector& x0,
                                            const SgpBaselineConfig& config,
                                            const std::optional<Vector>& ground_truth = std::nullopt,
                                            const IterationCallback& on_iteration = {}) {
  config.validate();
  detail::require(set.contains(x0, 1e-8), "sgp_baseline_solve: starting point must be feasible");
  const detail::Stopwatch clock;
  const SmoothedObjective objective(data, config.lambda, config.mu);

  RestorationResult result;
  if (ground_truth) result.trace.initial_rel_error = relative_difference(x0, *ground_truth);
  detail::BestIterate best(ground_truth);

  SgpConfig sgp = config.sgp;
  sgp.max_iters = config.max_iters;
  sgp.hard_iteration_limit = std::max(sgp.hard_iteration_limit, config.max_iters);
  result.reason = StopReason::MaxIterations;

  auto observer = [&](const SgpIterate& it) {
    TraceRow row;
    row.iter = it.iteration;
    row.objective = it.value;
    row.rel_change = it.relative_change;
    row.alpha = it.rho;
    row.inner_iters = 1;
    row.pg_norm = set.projected_gradient_norm(it.z, it.gradient);
    row.rel_error = best.observe(it.iteration, it.z);
    row.time_s = clock.seconds();
    result.trace.rows.push_back(row);
    if (on_iteration) on_iteration(row, it.z);
    if (it.relative_change <= config.tol) {
      result.reason = StopReason::Tolerance;
      return false;
    }
    if (config.max_time > 0.0 && row.time_s >= config.max_time) {
      result.reason = StopReason::TimeBudget;
      return false;
    }
    return true;
  };

  SteplengthState state(sgp.tau_init);
  SgpResult solved = sgp_solve(objective, set, x0, state, sgp, SgpStop{0.0, 0.0}, observer);
  if (solved.target_reached) result.reason = StopReason::Tolerance;
  result.trace.initial_objective = solved.values.front();
  result.x = std::move(solved.z);
  best.finish(result);
  return result;
}

}  // namespace acquire
