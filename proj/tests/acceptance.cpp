// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "acquire/acquire.hpp"
#include "acquire/experiment.hpp"
#include "oracles.hpp"

using namespace acquire;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ------------------------------------------------------------ phantom runs

struct SeedResult {
  double acquire_err = 0, acquire_mssim = 0, acquire_err10 = 0, acquire_time = 0;
  double sgp_err = 0, sgp_mssim = 0;
  double measured_snr = 0;
};

RunConfig phantom_config(double snr, double lambda, std::uint64_t seed, const std::string& method) {
  RunConfig c;
  c.problem.name = "phantom";
  c.problem.size = 256;
  c.problem.phantom_variant = "modified";
  c.problem.blur.sigma = 2.0;
  c.problem.snr = snr;
  c.problem.seed = seed;
  c.solver.methods = {method};
  c.solver.lambda = lambda;
  c.solver.mu = 1e-2;
  c.solver.constraint = "s1";
  c.solver.tols = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7};
  c.solver.reuse_trajectory = true;
  c.budget.max_time = 25.0;
  c.threads = 1;
  return c;
}

// Min rel err and its MSSIM over the whole tolerance sweep.
std::pair<double, double> sweep_minimum(const std::vector<RunRecord>& records, const TestProblem& p,
                                        const RunConfig& c) {
  double err = std::numeric_limits<double>::infinity(), ssim = 0.0;
  for (const auto& r : records) {
    const SummaryRow s = summarize(r, p, c.problem.name, false);
    if (s.min_rel_err < err) {
      err = s.min_rel_err;
      ssim = s.mssim;
    }
  }
  return {err, ssim};
}

SeedResult run_seed(double snr, double lambda, std::uint64_t seed) {
  SeedResult out;
  const RunConfig ca = phantom_config(snr, lambda, seed, "acquire");
  const TestProblem p = build_problem(ca);
  out.measured_snr = p.measured_snr();

  const auto t0 = std::chrono::steady_clock::now();
  const auto acq = run_all(ca, p);
  out.acquire_time = seconds_since(t0);
  std::tie(out.acquire_err, out.acquire_mssim) = sweep_minimum(acq, p, ca);
  const auto& rows = acq.back().trace.rows;
  out.acquire_err10 = rows.size() >= 10 ? rows[9].rel_error : rows.back().rel_error;

  const RunConfig cs = phantom_config(snr, lambda, seed, "sgp");
  std::tie(out.sgp_err, out.sgp_mssim) = sweep_minimum(run_all(cs, p), p, cs);
  std::printf("  snr %.0f seed %llu: acquire %.4f (mssim %.4f, iter-10 %.4f, %.1f s)  sgp %.4f (mssim %.4f)\n", snr,
              static_cast<unsigned long long>(seed), out.acquire_err, out.acquire_mssim, out.acquire_err10,
              out.acquire_time, out.sgp_err, out.sgp_mssim);
  std::fflush(stdout);
  return out;
}

// ---------------------------------------------------------- small checks

struct SmallInstance {
  PoissonData data;
  Vector truth;
};

SmallInstance small_instance() {
  std::mt19937_64 rng(7);
  const BlurOperator op(8, 8, gaussian_psf(3, 0.8));
  const Vector truth = oracle::random_vector(rng, 64, 0.5, 3.0);
  Vector y = op.apply(truth) + Vector::Constant(64, 0.05);
  y = y.cwiseProduct(oracle::random_vector(rng, 64, 0.9, 1.1));  // perturbed, still y > 0
  return {PoissonData(op, y, Vector::Constant(64, 0.05)), truth};
}

void oracle_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::Index n = std::uniform_int_distribution<Eigen::Index>(1, 6)(rng);
    const Vector v = oracle::random_vector(rng, n, -2, 2);
    const Vector d = oracle::random_vector(rng, n, 0.1, 10);
    const double c = std::uniform_real_distribution<double>(0.1, 5)(rng);
    const DiagonalMetric m(d, 1e-4, 1e4);
    const FeasibleSet s1 = FeasibleSet::nonnegative(), s2 = FeasibleSet::nonnegative_flux(c);
    const Vector ones = Vector::Ones(n);
    worst = std::max(worst, (s1.project(v) - oracle::projection_kkt(v, ones, std::nullopt)).norm());
    worst = std::max(worst, (s2.project(v) - oracle::projection_kkt(v, ones, c)).norm());
    worst = std::max(worst, (s1.project_weighted(m, v) - oracle::projection_kkt(v, d, std::nullopt)).norm());
    worst = std::max(worst, (s2.project_weighted(m, v) - oracle::projection_kkt(v, d, c)).norm());
    Vector x = oracle::random_vector(rng, n, 0, 2);
    for (Eigen::Index i = 0; i < n; ++i)
      if (rng() % 3 == 0) x[i] = 0.0;
    if (x.sum() == 0.0) x[0] = 1.0;
    const Vector g = oracle::random_vector(rng, n);
    worst = std::max(worst, (s1.projected_gradient(x, g) - oracle::tangent_projection_kkt(x, g, false)).norm());
    const FeasibleSet sx = FeasibleSet::nonnegative_flux(x.sum());
    worst = std::max(worst, (sx.projected_gradient(x, g) - oracle::tangent_projection_kkt(x, g, true)).norm());
  }
  double op_worst = 0.0;
  for (const Psf& psf : {gaussian_psf(5, 1.2), motion_psf(5, 30.0), disk_psf(2.0), gaussian_psf(7, 2.0)}) {
    const oracle::Matrix a = oracle::circulant(psf, 8, 8);
    const BlurOperator op(8, 8, psf);
    for (int k = 0; k < 5; ++k) {
      const Vector x = oracle::random_vector(rng, 64);
      op_worst = std::max(op_worst, (op.apply(x) - a * x).norm());
      op_worst = std::max(op_worst, (op.apply_adjoint(x) - a.transpose() * x).norm());
    }
  }
  const double t = seconds_since(t0);
  report(5, worst <= 1e-10 && op_worst <= 1e-10 && t <= 10.0,
         fmt("projection vs KKT max err %.2e, FFT vs circulant max err %.2e, %.2f s", worst, op_worst, t));
}

void derivative_suite() {
  std::mt19937_64 rng(202);
  const SmallInstance inst = small_instance();
  const GridShape g = inst.data.shape();
  const double lambda = 0.03, mu = 1e-2;
  const Vector x = oracle::random_vector(rng, 64, 0.5, 2.0);

  const double kl = oracle::rel_diff(kl_gradient(inst.data, x),
                                     oracle::fd_gradient([&](const Vector& z) { return kl_value(inst.data, z); }, x));
  const double tv = oracle::rel_diff(tv_mu_gradient(x, g, mu),
                                     oracle::fd_gradient([&](const Vector& z) { return tv_mu_value(z, g, mu); }, x));
  const OuterModel model(inst.data, x, lambda, mu, 1e-5);
  const Vector p = oracle::random_vector(rng, 64, 0.5, 2.0);
  const double mg =
      oracle::rel_diff(model.gradient(p), oracle::fd_gradient([&](const Vector& z) { return model.value(z); }, p));
  const Vector v = oracle::random_vector(rng, 64);
  const double h = 1e-6;
  const Vector fd_h =
      (kl_gradient(inst.data, Vector(x + h * v)) - kl_gradient(inst.data, Vector(x - h * v))) / (2 * h);
  const double hess = oracle::rel_diff(kl_hessian_vec(inst.data, x, v), fd_h);
  const SmoothedObjective f(inst.data, lambda, mu);
  const double tangency = oracle::rel_diff(model.anchor_gradient(), f.gradient(x));
  const bool ok = kl <= 1e-6 && tv <= 1e-6 && mg <= 1e-6 && hess <= 1e-5 && tangency <= 1e-12;
  report(6, ok,
         fmt("FD rel err kl %.1e tv_mu %.1e model %.1e; hessian %.1e; tangency %.1e", kl, tv, mg, hess, tangency));
}

void convergence_suite() {
  const SmallInstance inst = small_instance();
  AcquireConfig c;
  c.lambda = 1e-2;
  c.tol = 1e-12;
  c.max_iters = 500;
  c.max_time = 0.0;
  const FeasibleSet set = FeasibleSet::nonnegative();
  const SmoothedObjective f(inst.data, c.lambda, c.mu);
  std::vector<Vector> iterates;
  const RestorationResult r =
      acquire_solve(inst.data, set, Vector::Ones(64), c, std::nullopt,
                    [&](const TraceRow&, const Vector& x) { iterates.push_back(x); });
  const double pg = set.projected_gradient_norm(r.x, f.gradient(r.x));
  bool gll = true;
  int max_bt = 0;
  for (std::size_t k = 0; k < r.trace.rows.size(); ++k) {
    const TraceRow& row = r.trace.rows[k];
    const double fresh = f.value(iterates[k]);
    if (!(fresh <= row.reference_value + c.eta * row.alpha * row.direction_slope)) gll = false;
    max_bt = std::max(max_bt, row.backtracks);
  }
  const double d0 = r.trace.rows.front().direction_norm;
  double dmin = d0;
  for (const auto& row : r.trace.rows) dmin = std::min(dmin, row.direction_norm);
  const bool ok = pg <= 1e-6 && gll && max_bt <= 60 && dmin <= 1e-6 * d0;
  report(7, ok,
         fmt("%zu iterations, final projected gradient %.2e, GLL %s, max backtracks %d, direction ratio %.1e",
             r.trace.rows.size(), pg, gll ? "held" : "violated", max_bt, dmin / d0));
}

void inner_stop_suite() {
  const SmallInstance inst = small_instance();
  AcquireConfig c;
  c.lambda = 1e-2;
  c.tol = 1e-10;
  // theta^12 G0 is about 1e-12 G0; past that the target sits below what
  // double precision can resolve for this instance.
  c.max_iters = 12;
  c.max_time = 0.0;
  c.inner_max_iters = 0;
  const FeasibleSet set = FeasibleSet::nonnegative();
  const Vector x0 = Vector::Ones(64);
  const SmoothedObjective f(inst.data, c.lambda, c.mu);
  const double g0 = set.projected_gradient_norm(x0, f.gradient(x0));
  const RestorationResult r = acquire_solve(inst.data, set, x0, c);
  double worst = 0.0;
  for (std::size_t k = 0; k < r.trace.rows.size(); ++k) {
    const double bound = std::pow(c.theta, static_cast<double>(k + 1)) * g0;
    worst = std::max(worst, r.trace.rows[k].inner_pg_norm / bound);
  }
  report(8, worst <= 1.0,
         fmt("%zu outer iterations, max inner ratio ||grad_S F_k(x-hat)|| / (theta^k G0) = %.3f", r.trace.rows.size(),
             worst));
}

void noise_suite(const std::vector<double>& snr_errors) {
  double worst_snr = 0.0;
  for (double e : snr_errors) worst_snr = std::max(worst_snr, e);
  CounterRng zero(1, 1);
  const bool zero_ok = poisson_draw(0.0, zero) == 0;
  CounterRng rng(17, 3);
  double s = 0, s2 = 0;
  const int m = 100000;
  for (int i = 0; i < m; ++i) {
    const double v = static_cast<double>(poisson_draw(7.0, rng));
    s += v;
    s2 += v * v;
  }
  const double mean = s / m, var = s2 / m - mean * mean;
  const bool ok = worst_snr <= 0.1 && zero_ok && std::abs(mean - 7) <= 0.05 && std::abs(var - 7) <= 0.2;
  report(9, ok,
         fmt("max |measured - target| SNR %.4f dB over %zu problems; Poisson(7) mean %.4f var %.4f; Poisson(0) %s",
             worst_snr, snr_errors.size(), mean, var, zero_ok ? "ok" : "nonzero"));
}

}  // namespace

int main() {
  std::printf("acceptance run\n");
  oracle_suite();
  derivative_suite();
  convergence_suite();
  inner_stop_suite();

  std::vector<double> snr_errors;
  std::vector<SeedResult> r35, r40;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) r35.push_back(run_seed(35.0, 6e-3, seed));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) r40.push_back(run_seed(40.0, 4e-3, seed));
  for (const auto& r : r35) snr_errors.push_back(std::abs(r.measured_snr - 35.0));
  for (const auto& r : r40) snr_errors.push_back(std::abs(r.measured_snr - 40.0));

  auto col = [](const std::vector<SeedResult>& v, double SeedResult::*f) {
    std::vector<double> out;
    for (const auto& r : v) out.push_back(r.*f);
    return out;
  };
  {
    const double err = median(col(r35, &SeedResult::acquire_err));
    const double ssim = median(col(r35, &SeedResult::acquire_mssim));
    double total = 0;
    for (const auto& r : r35) total += r.acquire_time;
    report(1, err >= 0.12 && err <= 0.165 && ssim >= 0.95 && total <= 180.0,
           fmt("SNR 35 median min rel err %.4f in [0.12, 0.165], median MSSIM %.4f >= 0.95, ACQUIRE time %.1f s <= 180",
               err, ssim, total));
  }
  {
    const double err = median(col(r40, &SeedResult::acquire_err));
    const double ssim = median(col(r40, &SeedResult::acquire_mssim));
    report(2, err >= 0.11 && err <= 0.15 && ssim >= 0.96,
           fmt("SNR 40 median min rel err %.4f in [0.11, 0.15], median MSSIM %.4f >= 0.96", err, ssim));
  }
  {
    double worst = 0;
    for (const auto* set : {&r35, &r40})
      for (const auto& r : *set) worst = std::max(worst, std::abs(r.sgp_err - r.acquire_err) / r.acquire_err);
    report(3, worst <= 0.05, fmt("max relative gap between SGP and ACQUIRE min rel err %.4f <= 0.05 over 10 instances",
                                 worst));
  }
  {
    double worst = 0;
    for (const auto& r : r35) worst = std::max(worst, r.acquire_err10 / r.acquire_err);
    report(4, worst <= 1.25, fmt("max over SNR 35 seeds of err(iter 10) / min err = %.4f <= 1.25", worst));
  }
  noise_suite(snr_errors);

  std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
