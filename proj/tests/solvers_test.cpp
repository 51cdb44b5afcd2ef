#include <gtest/gtest.h>

#include "bld/objective.hpp"
#include "bld/solvers.hpp"
#include "test_support.hpp"

using bld::Matrix;
using bld::test::relative_difference;

TEST(Armijo, LinearFunctionTakesFullStep) {
  const auto r = bld::armijo_linesearch([](double a) { return 3.0 - 2.0 * a; }, 3.0, -2.0, {});
  EXPECT_EQ(r.step, 1.0);
  EXPECT_EQ(r.evaluations, 1u);
}

TEST(Armijo, SquareFromOneHalvesOnce) {
  // f(w) = w^2 at w = 1 along d = -2.
  const bld::ArmijoParams p{1.0, 1e-4, 0.5, 60};
  std::vector<double> tried;
  const auto phi = [&](double a) {
    tried.push_back(a);
    const double w = 1.0 - 2.0 * a;
    return w * w;
  };
  const auto r = bld::armijo_linesearch(phi, 1.0, -4.0, p);
  EXPECT_EQ(r.step, 0.5);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(tried, (std::vector<double>{1.0, 0.5}));
  EXPECT_LE(r.value, 1.0 + p.gamma * r.step * -4.0);
}

TEST(Armijo, NonDescentSlopeRejected) {
  EXPECT_THROW(bld::armijo_linesearch([](double) { return 0.0; }, 0.0, 0.0, {}), bld::PreconditionError);
  EXPECT_THROW(bld::armijo_linesearch([](double) { return 0.0; }, 0.0, 1.0, {}), bld::PreconditionError);
}

TEST(Armijo, ExhaustedHalvingsRaise) {
  const bld::ArmijoParams p{1.0, 1e-4, 0.5, 5};
  EXPECT_THROW(bld::armijo_linesearch([](double) { return 1.0; }, 0.0, -1.0, p), bld::LinesearchError);
}

TEST(Armijo, InequalityHoldsAtReturnedStep) {
  bld::SeededRng rng(3);
  for (int t = 0; t < 200; ++t) {
    const double c = rng.uniform(0.1, 50.0), w0 = rng.uniform(-5.0, 5.0);
    const double g = 2.0 * c * w0;
    if (g == 0.0) continue;
    const auto phi = [&](double a) { const double w = w0 - a * g; return c * w * w + std::sin(w); };
    const double phi0 = phi(0.0);
    const double slope = -g * g + std::cos(w0) * -g;
    if (!(slope < 0.0)) continue;
    const auto r = bld::armijo_linesearch(phi, phi0, slope, {});
    EXPECT_LE(phi(r.step), phi0 + 1e-4 * r.step * slope);
  }
}

namespace {

struct Quadratic {
  Matrix a;  // SPD
  std::vector<double> b;
  double operator()(std::span<const double> x, std::span<double> g) const {
    const std::size_t n = b.size();
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double ax = 0.0;
      for (std::size_t j = 0; j < n; ++j) ax += a(i, j) * x[j];
      g[i] = ax - b[i];
      f += 0.5 * x[i] * ax - b[i] * x[i];
    }
    return f;
  }
};

Quadratic random_quadratic(std::size_t n, std::uint64_t seed) {
  bld::SeededRng rng(seed);
  Matrix r(n, n);
  for (double& v : r.values()) v = rng.uniform(-1.0, 1.0);
  Matrix a = bld::matmul_tn(r, r);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += 1.0;
  std::vector<double> b(n);
  for (double& v : b) v = rng.uniform(-1.0, 1.0);
  return {a, b};
}

}  // namespace

TEST(Lbfgs, StationaryStartTakesNoIterations) {
  const auto q = random_quadratic(6, 1);
  const Matrix xstar = bld::cholesky_solve(q.a, Matrix(6, 1, q.b));
  std::vector<double> start(xstar.values().begin(), xstar.values().end());
  // Replace b by A x* so the start is exactly stationary in floating point.
  Quadratic exact = q;
  for (std::size_t i = 0; i < 6; ++i) {
    double ax = 0.0;
    for (std::size_t j = 0; j < 6; ++j) ax += q.a(i, j) * start[j];
    exact.b[i] = ax;
  }
  const auto r = bld::lbfgs_minimize(exact, start, {10, 1e-12, 50, 0.5});
  EXPECT_EQ(r.iterations, 0u);
  EXPECT_EQ(r.x, start);
}

TEST(Lbfgs, MatchesClosedFormQuadraticMinimizer) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto q = random_quadratic(10, seed);
    const Matrix xstar = bld::cholesky_solve(q.a, Matrix(10, 1, q.b));
    const auto r = bld::lbfgs_minimize(q, std::vector<double>(10, 0.0), {10, 1e-11, 500, 0.5});
    ASSERT_FALSE(r.degraded);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(r.x[i], xstar(i, 0), 1e-8);
    EXPECT_TRUE(bld::test::non_increasing(r.trajectory));
  }
}

TEST(Lbfgs, RosenbrockConverges) {
  auto rosen = [](std::span<const double> x, std::span<double> g) {
    const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
    g[0] = -2.0 * a - 400.0 * x[0] * b;
    g[1] = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  const auto r = bld::lbfgs_minimize(rosen, {-1.2, 1.0}, {5, 1e-8, 1000, 0.5});
  EXPECT_NEAR(r.x[0], 1.0, 1e-6);
  EXPECT_NEAR(r.x[1], 1.0, 1e-6);
  EXPECT_TRUE(bld::test::non_increasing(r.trajectory));
}

TEST(Lbfgs, RespectsIterationCap) {
  const auto q = random_quadratic(10, 4);
  const auto r = bld::lbfgs_minimize(q, std::vector<double>(10, 0.0), {10, 1e-14, 3, 0.5});
  EXPECT_EQ(r.iterations, 3u);
}

TEST(Lbfgs, RejectsBadParams) {
  const auto q = random_quadratic(2, 4);
  EXPECT_THROW(bld::lbfgs_minimize(q, {0.0, 0.0}, {0, 1e-3, 30, 0.5}), bld::PreconditionError);
  EXPECT_THROW(bld::lbfgs_minimize(q, {0.0, 0.0}, {10, 0.0, 30, 0.5}), bld::PreconditionError);
}

TEST(Llsq, ScalarHandExample) {
  EXPECT_DOUBLE_EQ(bld::llsq_last_layer(Matrix::from_rows({{1}}), Matrix::from_rows({{1}}), 1.0, 1)(0, 0), 0.5);
}

TEST(Llsq, IdentityInterpolation) {
  EXPECT_EQ(bld::llsq_last_layer(Matrix::identity(4), Matrix::identity(4), 0.0, 4), Matrix::identity(4));
}

TEST(Llsq, ResidualGradientVanishes) {
  const auto d = bld::test::random_dataset(30, 5, 2, 8);
  const double rho = 0.01;
  const Matrix w = bld::llsq_last_layer(d.features, d.targets, rho, 30);
  // (2/P) Z^T (Z w - Y) + 2 rho w
  Matrix g = bld::matmul_tn(d.features, bld::matmul(d.features, w) - d.targets);
  g *= 2.0 / 30.0;
  g.axpy(2.0 * rho, w);
  EXPECT_LE(bld::frobenius_norm(g), 1e-10);
}

TEST(Llsq, SingularWithoutRidge) {
  EXPECT_THROW(bld::llsq_last_layer(Matrix(3, 2), Matrix(3, 1), 0.0, 3), bld::SingularSystemError);
}

TEST(LbfgsBlock, LastLayerSubproblemMatchesLlsq) {
  const auto w0 = bld::init_weights(bld::test::arch(4, {6, 2}), 17, 2.0);
  const auto d = bld::test::random_dataset(40, 4, 2, 17);
  const bld::ObjectiveConfig cfg{0.01, 40};
  const auto cache = bld::forward(w0, d.features);
  bld::NetworkWeights w = w0;
  const bld::BlockObjective obj = [&](const Matrix& value, Matrix& grad) {
    w.set_block(1, value);
    auto c = cache;
    bld::forward_partial(w, c, 1);
    grad = bld::block_gradient(w, d, cfg, 1, c);
    return bld::evaluate(w, c, d.targets, cfg).total;
  };
  const auto r = bld::lbfgs_minimize_block(obj, w0.block(1), {10, 1e-12, 500, 0.5});
  const Matrix ref = bld::llsq_last_layer(cache.layer_input(1), d.targets, cfg.rho, 40);
  EXPECT_LE(relative_difference(r.block, ref), 1e-6);
}
