#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "acquire/sgp.hpp"
#include "oracles.hpp"

using namespace acquire;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// 0.5 x^T H x - b^T x
struct Quadratic {
  oracle::Matrix h;
  Vector b;
  double value(const Vector& x) const { return 0.5 * x.dot(h * x) - b.dot(x); }
  Vector gradient(const Vector& x) const { return h * x - b; }
  Vector hessian_vec(const Vector& v) const { return h * v; }
};

// Same quadratic without the Hessian, forcing the generic backtracking path.
struct OpaqueQuadratic {
  Quadratic q;
  double value(const Vector& x) const { return q.value(x); }
  Vector gradient(const Vector& x) const { return q.gradient(x); }
};

// sum exp(x_i) - a^T x + 0.5 ||x||^2, strictly convex and not quadratic.
struct ExpObjective {
  Vector a;
  double value(const Vector& x) const { return x.array().exp().sum() - a.dot(x) + 0.5 * x.squaredNorm(); }
  Vector gradient(const Vector& x) const { return (x.array().exp().matrix() - a + x); }
};

Quadratic random_quadratic(std::mt19937_64& rng, Eigen::Index n) {
  oracle::Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = std::uniform_real_distribution<double>(-1, 1)(rng);
  return {m.transpose() * m + 0.2 * oracle::Matrix::Identity(n, n), oracle::random_vector(rng, n, -2, 2)};
}

}  // namespace

TEST(Scaling, ClampsIterate) {
  const DiagonalMetric d = scaling_matrix(vec({1e-6, 1, 1e6, 0}), 1e-4, 1e4);
  EXPECT_EQ(d.diagonal(), vec({1e-4, 1, 1e4, 1e-4}));
}

TEST(Abbmin, Examples) {
  const SgpConfig config;
  const DiagonalMetric id = DiagonalMetric::identity(2);
  SteplengthState a;
  EXPECT_DOUBLE_EQ(abbmin_steplength(a, vec({1, 2}), vec({1, 2}), id, config), 1.0);
  SteplengthState b;
  EXPECT_DOUBLE_EQ(abbmin_steplength(b, vec({1, 0}), vec({2, 0}), id, config), 0.5);
  SteplengthState c;
  EXPECT_DOUBLE_EQ(abbmin_steplength(c, vec({1, 0}), vec({-1, 0}), id, config), config.step_max);
  EXPECT_EQ(*c.last_step, config.step_max);
}

TEST(Abbmin, PicksBb2MinimumWhenRatioSmall) {
  SgpConfig config;
  const DiagonalMetric id = DiagonalMetric::identity(2);
  SteplengthState st(0.5);
  // bb1 = 4 and bb2 = 0.4, well below tau.
  const Vector s = vec({1, 1}), w = vec({1, -0.5});
  const double bb1 = s.squaredNorm() / s.dot(w), bb2 = s.dot(w) / w.squaredNorm();
  ASSERT_LT(bb2 / bb1, 0.5);
  EXPECT_DOUBLE_EQ(abbmin_steplength(st, s, w, id, config), bb2);
  EXPECT_DOUBLE_EQ(st.tau, 0.5 * config.tau_shrink);
}

TEST(FaceSecant, DropsPinnedCoordinatesAndFluxComponent) {
  const DiagonalMetric d(vec({1, 2, 1}), 1e-4, 1e4);
  const Vector z = vec({0, 1, 1}), s = vec({0, 0.5, -0.5}), w = vec({3, 2, 1});
  EXPECT_EQ(face_secant(FeasibleSet::nonnegative(), z, s, w, d), vec({0, 2, 1}));
  // c = (2*2 + 1*1) / (2 + 1) = 5/3
  const Vector f = face_secant(FeasibleSet::nonnegative_flux(2), z, s, w, d);
  EXPECT_DOUBLE_EQ(f[0], 0.0);
  EXPECT_DOUBLE_EQ(f[1], 2.0 - 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(f[2], 1.0 - 5.0 / 3.0);
}

TEST(SgpSolve, OneDimensionalQuadratic) {
  const Quadratic q{oracle::Matrix::Identity(1, 1), vec({3})};
  SteplengthState st;
  SgpConfig config;
  config.max_iters = 10;
  for (const bool identity : {true, false}) {
    config.identity_scaling = identity;
    SteplengthState fresh;
    const SgpResult r = sgp_solve(q, FeasibleSet::nonnegative(), vec({0}), fresh, config, SgpStop{1e-10, 0});
    EXPECT_LE(r.iterations, 10);
    EXPECT_NEAR(r.z[0], 3.0, 1e-8) << (identity ? "identity" : "scaled");
  }
  const SgpResult r = sgp_solve(q, FeasibleSet::nonnegative(), vec({1}), st, config, SgpStop{1e-10, 0});
  EXPECT_TRUE(r.target_reached);
  EXPECT_NEAR(r.z[0], 3.0, 1e-10);
}

TEST(SgpSolve, StationaryStartTakesNoSteps) {
  const Quadratic q{oracle::Matrix::Identity(2, 2), vec({-1, 2})};
  SteplengthState st;
  const SgpResult r = sgp_solve(q, FeasibleSet::nonnegative(), vec({0, 2}), st, SgpConfig{}, SgpStop{1e-12, 0});
  EXPECT_EQ(r.iterations, 0);
  EXPECT_TRUE(r.target_reached);
  EXPECT_EQ(r.z, vec({0, 2}));
}

TEST(SgpSolve, MatchesKktOracleOnFluxQp) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Quadratic q = random_quadratic(rng, 3);
    const double c = 2.0;
    const Vector expect = oracle::qp_kkt(q.h, q.b, c);
    SteplengthState st;
    SgpConfig config;
    config.max_iters = 200;
    const SgpResult r =
        sgp_solve(q, FeasibleSet::nonnegative_flux(c), Vector::Constant(3, c / 3), st, config, SgpStop{1e-12, 0});
    EXPECT_LE((r.z - expect).norm(), 1e-6) << "trial " << trial;
  }
}

TEST(SgpSolve, GenericPathMatchesQuadraticPath) {
  std::mt19937_64 rng(22);
  const Quadratic q = random_quadratic(rng, 6);
  SgpConfig config;
  config.max_iters = 300;
  SteplengthState s1, s2;
  const Vector z0 = Vector::Constant(6, 0.5);
  const SgpResult a = sgp_solve(q, FeasibleSet::nonnegative(), z0, s1, config, SgpStop{1e-10, 0});
  const SgpResult b = sgp_solve(OpaqueQuadratic{q}, FeasibleSet::nonnegative(), z0, s2, config, SgpStop{1e-10, 0});
  const Vector expect = oracle::qp_kkt(q.h, q.b, std::nullopt);
  EXPECT_LE((a.z - expect).norm(), 1e-8);
  EXPECT_LE((b.z - expect).norm(), 1e-8);
}

TEST(SgpSolve, FeasibleMonotoneDescent) {
  std::mt19937_64 rng(23);
  const ExpObjective f{oracle::random_vector(rng, 10, -1, 3)};
  for (const FeasibleSet& set : {FeasibleSet::nonnegative(), FeasibleSet::nonnegative_flux(4.0)}) {
    SteplengthState st;
    SgpConfig config;
    config.max_iters = 50;
    int seen = 0;
    const SgpResult r = sgp_solve(f, set, Vector::Constant(10, 0.4), st, config, SgpStop{0, 0},
                                  [&](const SgpIterate& it) {
                                    EXPECT_TRUE(set.contains(it.z, 1e-9));
                                    EXPECT_GT(it.rho, 0.0);
                                    EXPECT_LE(it.rho, 1.0);
                                    ++seen;
                                    return true;
                                  });
    EXPECT_EQ(seen, r.iterations);
    for (std::size_t j = 1; j < r.values.size(); ++j) EXPECT_LE(r.values[j], r.values[j - 1]);
    for (double slope : r.first_order_slopes) EXPECT_LT(slope, 0.0);
    EXPECT_LE(r.projected_gradient_norm, 1e-6);
  }
}

TEST(SgpSolve, SteplengthStateCarriesOver) {
  std::mt19937_64 rng(24);
  const Quadratic q = random_quadratic(rng, 8);
  const Vector z0 = Vector::Constant(8, 1.0);
  SgpConfig config;
  config.max_iters = 10;
  config.gradient_refresh = 1;  // exact gradients so both runs match to round-off
  SteplengthState whole;
  const SgpResult full = sgp_solve(q, FeasibleSet::nonnegative(), z0, whole, config, SgpStop{0, 0});
  config.max_iters = 5;
  SteplengthState split;
  const SgpResult first = sgp_solve(q, FeasibleSet::nonnegative(), z0, split, config, SgpStop{0, 0});
  const SgpResult second = sgp_solve(q, FeasibleSet::nonnegative(), first.z, split, config, SgpStop{0, 0});
  EXPECT_LE((second.z - full.z).norm(), 1e-10 * (1.0 + full.z.norm()));
  EXPECT_EQ(split.tau, whole.tau);
  EXPECT_TRUE(split.last_step.has_value());
}

TEST(SgpSolve, ObserverCanStop) {
  const Quadratic q{oracle::Matrix::Identity(2, 2), vec({5, 5})};
  SteplengthState st;
  const SgpResult r = sgp_solve(q, FeasibleSet::nonnegative(), vec({1, 1}), st, SgpConfig{}, SgpStop{0, 0},
                                [](const SgpIterate&) { return false; });
  EXPECT_EQ(r.iterations, 1);
}

TEST(SgpConfig, Validation) {
  SgpConfig c;
  c.armijo = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SgpConfig{};
  c.step_min = c.step_max;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
