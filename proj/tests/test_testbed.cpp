#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "acquire/acquire.hpp"
#include "acquire/metrics.hpp"
#include "acquire/testbed.hpp"
#include "oracles.hpp"

using namespace acquire;

namespace {

// Direct windowed SSIM with a 2-D Gaussian weight per valid position.
double ssim_oracle(const Image& x, const Image& ref) {
  const int m = 11;
  const double sigma = 1.5;
  std::vector<double> w(m * m);
  double total = 0.0;
  for (int p = 0; p < m; ++p)
    for (int q = 0; q < m; ++q) {
      const double d2 = (p - 5.0) * (p - 5.0) + (q - 5.0) * (q - 5.0);
      w[p * m + q] = std::exp(-d2 / (2 * sigma * sigma));
      total += w[p * m + q];
    }
  for (double& v : w) v /= total;
  const double range = ref.max() - ref.min();
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double sum = 0.0;
  int count = 0;
  for (std::size_t l = 0; l + m <= x.cols(); ++l)
    for (std::size_t k = 0; k + m <= x.rows(); ++k) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int q = 0; q < m; ++q)
        for (int p = 0; p < m; ++p) {
          const double a = x(k + p, l + q), b = ref(k + p, l + q), wt = w[p * m + q];
          ma += wt * a;
          mb += wt * b;
          saa += wt * a * a;
          sbb += wt * b * b;
          sab += wt * a * b;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return sum / count;
}

}  // namespace

TEST(Phantom, CornersAreZeroAndRangeIsUnit) {
  for (auto variant : {PhantomVariant::Original, PhantomVariant::Modified}) {
    const Image p = shepp_logan(64, variant);
    EXPECT_EQ(p(0, 0), 0.0);
    EXPECT_EQ(p(63, 0), 0.0);
    EXPECT_EQ(p(0, 63), 0.0);
    EXPECT_EQ(p(63, 63), 0.0);
    EXPECT_GE(p.min(), 0.0);
    EXPECT_LE(p.max(), 1.0 + 1e-12);
    EXPECT_NEAR(p.max(), 1.0, 1e-12);
  }
}

TEST(Phantom, MatchesMembershipOracle) {
  const auto ellipses = shepp_logan_ellipses(PhantomVariant::Modified);
  const std::size_t n = 128;
  const Image p = shepp_logan(n, PhantomVariant::Modified);
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = rng() % n, l = rng() % n;
    const double x = -1.0 + 2.0 * static_cast<double>(l) / (n - 1);
    const double y = 1.0 - 2.0 * static_cast<double>(k) / (n - 1);
    double v = 0.0;
    for (const auto& e : ellipses) {
      const double t = -e.phi_deg * std::numbers::pi / 180.0;
      // Rotate the point into the ellipse frame.
      const double dx = x - e.x0, dy = y - e.y0;
      const double u = std::cos(t) * dx - std::sin(t) * dy, w = std::sin(t) * dx + std::cos(t) * dy;
      if ((u / e.a) * (u / e.a) + (w / e.b) * (w / e.b) <= 1.0) v += e.intensity;
    }
    EXPECT_NEAR(p(k, l), std::max(v, 0.0), 1e-12) << k << "," << l;
  }
  // Center lies inside the two outer ellipses only.
  const Image odd = shepp_logan(129, PhantomVariant::Modified);
  EXPECT_NEAR(odd(64, 64), 0.2, 1e-12);
}

TEST(Phantom, MirrorSymmetricAwayFromAsymmetricFeatures) {
  // Ellipses 3/4 and the small bottom trio are not mirror images, so
  // compare only the rows above them in the outer band |x| > 0.45.
  const std::size_t n = 96;
  const Image p = shepp_logan(n, PhantomVariant::Original);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l) {
      const double x = phantom_axis(l, n);
      if (std::abs(x) < 0.45) continue;
      EXPECT_NEAR(p(k, l), p(k, n - 1 - l), 1e-12);
    }
}

TEST(Snr, TotalCountExamples) {
  EXPECT_NEAR(snr_total_counts(0.0, 40.0), 1e8, 1e-4);
  EXPECT_NEAR(snr_total_counts(0.0, 35.0), 1e7, 1e-5);
  const double t = snr_total_counts(100.0, 20.0);
  EXPECT_NEAR(t / std::sqrt(t + 100.0), 100.0, 1e-9);
  EXPECT_NEAR(snr_db(t, 100.0), 20.0, 1e-12);
}

TEST(Poisson, ZeroMeanAndMoments) {
  CounterRng rng(1, 2);
  EXPECT_EQ(poisson_draw(0.0, rng), 0u);
  for (double lambda : {7.0, 250.0}) {
    CounterRng r(3, static_cast<std::uint64_t>(lambda));
    const int m = 100000;
    double s = 0, s2 = 0;
    for (int i = 0; i < m; ++i) {
      const double v = static_cast<double>(poisson_draw(lambda, r));
      s += v;
      s2 += v * v;
    }
    const double mean = s / m, var = s2 / m - mean * mean;
    // Five standard errors of the sample mean and variance.
    EXPECT_NEAR(mean, lambda, 5 * std::sqrt(lambda / m)) << lambda;
    EXPECT_NEAR(var, lambda, 5 * lambda * std::sqrt(2.0 / m) + 5 * std::sqrt(lambda / m)) << lambda;
  }
  CounterRng r7(9, 9);
  double s = 0, s2 = 0;
  for (int i = 0; i < 100000; ++i) {
    const double v = static_cast<double>(poisson_draw(7.0, r7));
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / 1e5, 7.0, 0.05);
  EXPECT_NEAR(s2 / 1e5 - (s / 1e5) * (s / 1e5), 7.0, 0.2);
}

TEST(Poisson, DeterministicPerSeed) {
  const Image mean(8, 8, Vector::Constant(64, 12.0));
  EXPECT_EQ(poisson_sample(mean, 5).data(), poisson_sample(mean, 5).data());
  EXPECT_NE(poisson_sample(mean, 5).data(), poisson_sample(mean, 6).data());
}

TEST(Problem, MeasuredSnrAndFlux) {
  const Image ref = shepp_logan(64, PhantomVariant::Modified);
  const TestProblem p = make_problem(ref, gaussian_psf(9, 1.5), 35.0, 1);
  EXPECT_NEAR(p.measured_snr(), 35.0, 0.1);
  EXPECT_NEAR(p.observed.max(), 1.0, 1e-15);
  EXPECT_NEAR(p.flux, p.observed.sum() - p.background * 64 * 64, 1e-9);
  // Truth flux tracks the data flux up to Poisson fluctuation.
  EXPECT_NEAR(p.ground_truth.sum() / p.flux, 1.0, 1e-2);
  const TestProblem q = make_problem(ref, gaussian_psf(9, 1.5), 35.0, 1);
  EXPECT_EQ(p.observed.data(), q.observed.data());
}

TEST(Problem, NoiselessSmallInstanceIsRecovered) {
  std::mt19937_64 rng(42);
  const Image ref(16, 16, oracle::random_vector(rng, 256, 0.5, 1.5));
  ProblemOptions opts;
  opts.noiseless = true;
  opts.background = 1e-3;
  const TestProblem p = make_problem(ref, gaussian_psf(3, 0.5), 0.0, 0, opts);
  AcquireConfig c;
  c.lambda = 1e-9;
  c.tol = 1e-12;
  c.max_iters = 400;
  c.max_time = 0.0;
  const RestorationResult r =
      acquire_solve(p.data(), FeasibleSet::nonnegative(), initial_guess(p, StartRule::Observed, FeasibleSet::nonnegative()), c);
  EXPECT_LE(relative_error(r.x, p.ground_truth.data()), 1e-3);
}

TEST(Problem, BundleRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "acquire_bundle_test";
  std::filesystem::remove_all(dir);
  const TestProblem p = make_problem(shepp_logan(32), gaussian_psf(5, 1.0), 30.0, 3);
  save_problem(p, dir, {{"name", "phantom"}});
  nlohmann::json meta;
  const TestProblem q = load_problem(dir, &meta);
  EXPECT_EQ(q.observed.data(), p.observed.data());
  EXPECT_EQ(q.ground_truth.data(), p.ground_truth.data());
  EXPECT_EQ(q.psf.kernel().data(), p.psf.kernel().data());
  EXPECT_EQ(q.flux, p.flux);
  EXPECT_EQ(meta.at("name"), "phantom");
  std::filesystem::remove_all(dir);
}

TEST(Problem, StartingGuesses) {
  const TestProblem p = make_problem(shepp_logan(32), gaussian_psf(5, 1.0), 30.0, 3);
  const FeasibleSet s2 = make_feasible_set(p, true);
  EXPECT_TRUE(s2.contains(initial_guess(p, StartRule::Observed, s2), 1e-10));
  const Vector flat = initial_guess(p, StartRule::Flat, s2);
  EXPECT_NEAR(flat.maxCoeff() - flat.minCoeff(), 0.0, 1e-15);
  EXPECT_TRUE(s2.contains(flat, 1e-10));
}

TEST(Metrics, SsimIdentityAndShiftOracle) {
  const Image ref = shepp_logan(48, PhantomVariant::Modified);
  EXPECT_NEAR(mssim(ref, ref), 1.0, 1e-12);
  Vector shifted(ref.size());
  for (std::size_t l = 0; l < 48; ++l)
    for (std::size_t k = 0; k < 48; ++k) shifted[static_cast<Eigen::Index>(l * 48 + k)] = ref((k + 1) % 48, l);
  const Image x(48, 48, shifted);
  const double s = mssim(x, ref);
  EXPECT_GT(s, 0.0);
  EXPECT_LT(s, 1.0);
  EXPECT_NEAR(s, ssim_oracle(x, ref), 1e-10);
}

TEST(Metrics, RelativeErrorAndErrors) {
  const Image ref = shepp_logan(32);
  EXPECT_NEAR(relative_error(Image(32, 32, Vector(2.0 * ref.data())), ref), 1.0, 1e-15);
  EXPECT_NEAR(flux_ratio(Image(32, 32, Vector(2.0 * ref.data())), ref), 2.0, 1e-15);
  EXPECT_THROW(relative_error(ref, Image(32, 32)), std::invalid_argument);
  EXPECT_THROW(relative_error(ref, Image(16, 16)), DimensionMismatch);
  EXPECT_THROW(mssim(Image(8, 8), Image(8, 8)), std::invalid_argument);
  EXPECT_THROW(mssim(ref, Image(32, 32, Vector::Ones(1024))), std::invalid_argument);
}
