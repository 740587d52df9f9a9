#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "acquire/poisson_model.hpp"
#include "acquire/tv_model.hpp"

namespace acquire {

/// F(x) = D_KL(x) + lambda * TV_mu(x), the smoothed restoration objective.
class SmoothedObjective {
 public:
  SmoothedObjective(const PoissonData& data, double lambda, double mu) : data_(&data), lambda_(lambda), mu_(mu) {
    detail::require(lambda > 0.0, "SmoothedObjective: lambda must be positive");
    detail::require(mu > 0.0, "SmoothedObjective: mu must be positive");
  }

  const PoissonData& data() const { return *data_; }
  double lambda() const { return lambda_; }
  double mu() const { return mu_; }

  double value(const Vector& x) const {
    return data_->kl_from_mean(data_->mean_counts(x)) + lambda_ * tv_mu_value(x, data_->shape(), mu_);
  }

  Vector gradient(const Vector& x) const { return value_and_gradient(x).second; }

  std::pair<double, Vector> value_and_gradient(const Vector& x) const {
    const Vector mean = data_->mean_counts(x);
    const double f = data_->kl_from_mean(mean) + lambda_ * tv_mu_value(x, data_->shape(), mu_);
    Vector g = data_->kl_gradient_from_mean(mean);
    g += lambda_ * tv_mu_gradient(x, data_->shape(), mu_);
    return {f, std::move(g)};
  }

 private:
  const PoissonData* data_;
  double lambda_;
  double mu_;
};

/// One row per outer iteration; row k describes the iterate x_k.
struct TraceRow {
  int iter = 0;
  double objective = 0.0;
  double rel_change = 0.0;
  double alpha = 1.0;
  int inner_iters = 0;
  double pg_norm = 0.0;
  double rel_error = std::numeric_limits<double>::quiet_NaN();
  double time_s = 0.0;

  // Diagnostics kept in memory only.
  bool inner_cap_hit = false;
  bool stagnated = false;
  int backtracks = 0;
  double inner_target = 0.0;
  double inner_pg_norm = 0.0;
  double direction_norm = 0.0;
  double direction_slope = 0.0;
  double reference_value = 0.0;
};

struct SolverTrace {
  double initial_objective = 0.0;
  double initial_rel_error = std::numeric_limits<double>::quiet_NaN();
  std::vector<TraceRow> rows;

  static constexpr const char* kCsvHeader = "iter,objective,rel_change,alpha,inner_iters,pg_norm,rel_error,time_s";

  void write_csv(std::ostream& out, bool include_time = true) const {
    out << kCsvHeader << '\n';
    char buf[512];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%.6f\n", r.iter, r.objective,
                    r.rel_change, r.alpha, r.inner_iters, r.pg_norm, r.rel_error, include_time ? r.time_s : 0.0);
      out << buf;
    }
  }

  void write_csv(const std::filesystem::path& path, bool include_time = true) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_csv(out, include_time);
  }

  static SolverTrace read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kCsvHeader) throw std::runtime_error(path.string() + ": unexpected trace header");
    SolverTrace trace;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string field;
      std::vector<std::string> f;
      while (std::getline(ss, field, ',')) f.push_back(field);
      if (f.size() != 8) throw std::runtime_error(path.string() + ": malformed trace row");
      TraceRow r;
      r.iter = std::stoi(f[0]);
      r.objective = std::stod(f[1]);
      r.rel_change = std::stod(f[2]);
      r.alpha = std::stod(f[3]);
      r.inner_iters = std::stoi(f[4]);
      r.pg_norm = std::stod(f[5]);
      r.rel_error = std::stod(f[6]);
      r.time_s = std::stod(f[7]);
      trace.rows.push_back(r);
    }
    return trace;
  }
};

enum class StopReason { Tolerance, MaxIterations, TimeBudget };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::Tolerance: return "tolerance";
    case StopReason::MaxIterations: return "max_iterations";
    case StopReason::TimeBudget: return "time_budget";
  }
  return "unknown";
}

struct RestorationResult {
  Vector x;
  SolverTrace trace;
  StopReason reason = StopReason::MaxIterations;
  // Iterate with the smallest relative error, when a ground truth was given.
  std::optional<Vector> best_x;
  int best_iter = 0;
};

/// Called after every recorded iteration with the row and the new iterate.
using IterationCallback = std::function<void(const TraceRow&, const Vector&)>;

inline double relative_difference(const Vector& a, const Vector& b) {
  const double nb = b.norm();
  return nb > 0.0 ? (a - b).norm() / nb : (a - b).norm();
}

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Tracks the iterate closest to the ground truth.
class BestIterate {
 public:
  explicit BestIterate(const std::optional<Vector>& truth) : truth_(truth) {}

  double observe(int iter, const Vector& x) {
    if (!truth_) return std::numeric_limits<double>::quiet_NaN();
    const double e = relative_difference(x, *truth_);
    if (!best_x_ || e < best_error_) {
      best_error_ = e;
      best_x_ = x;
      best_iter_ = iter;
    }
    return e;
  }

  void finish(RestorationResult& result) {
    result.best_x = std::move(best_x_);
    result.best_iter = best_iter_;
  }

 private:
  const std::optional<Vector>& truth_;
  std::optional<Vector> best_x_;
  double best_error_ = std::numeric_limits<double>::infinity();
  int best_iter_ = 0;
};

}  // namespace detail
}  // namespace acquire
