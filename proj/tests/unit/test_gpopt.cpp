#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "aegis/core/errors.hpp"
#include "aegis/gpopt/gp.hpp"

using namespace aegis;
using namespace aegis::gpopt;

namespace {

Matrix column(std::initializer_list<double> xs) {
  Matrix m(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

// Posterior via a dense solve of (K + s_n^2 I) with no Cholesky and no caching.
Prediction dense_oracle(const Matrix& X, const Vector& y, const GpHyperparams& hp, double mu0,
                        const Vector& x) {
  const auto n = X.rows();
  Matrix K(n, n);
  Vector k(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k[i] = matern52((X.row(i).transpose() - x).norm(), hp.lengthscale, hp.signal_variance);
    for (Eigen::Index j = 0; j < n; ++j) {
      K(i, j) = matern52((X.row(i) - X.row(j)).norm(), hp.lengthscale, hp.signal_variance);
    }
  }
  K.diagonal().array() += hp.noise_variance;
  const Eigen::FullPivLU<Matrix> lu(K);
  const double mean = mu0 + k.dot(lu.solve(Vector(y.array() - mu0)));
  const double var = hp.signal_variance - k.dot(lu.solve(k));
  return {mean, std::sqrt(std::max(var, 0.0))};
}

}  // namespace

TEST(Kernel, Matern52Values) {
  EXPECT_DOUBLE_EQ(matern52(0.0, 1.0, 2.0), 2.0);
  const double r = std::sqrt(5.0);
  EXPECT_NEAR(matern52(1.0, 1.0, 1.0), (1 + r + 5.0 / 3.0) * std::exp(-r), 1e-15);
  EXPECT_LT(matern52(20.0, 1.0, 1.0), 1e-15);
}

TEST(Gp, SinglePointInterpolates) {
  const GaussianProcess gp(column({0.3}), Vector::Constant(1, 2.5), {1.0, 1.0, 1e-12}, 0.0);
  EXPECT_NEAR(gp.predict(Vector::Constant(1, 0.3)).mean, 2.5, 1e-8);
}

TEST(Gp, InterpolatesSquaresAgainstDirectSolve) {
  Matrix X(20, 1);
  Vector y(20);
  for (int i = 0; i < 20; ++i) {
    X(i, 0) = -1.0 + 2.0 * i / 19.0;
    y[i] = X(i, 0) * X(i, 0);
  }
  // sigma_n = 1e-6
  const auto hp = GpHyperparams::from_data(X, y, 1e-12);
  const GaussianProcess gp(X, y, hp);
  for (int i = 0; i < 20; ++i) {
    const auto p = gp.predict(Vector(X.row(i).transpose()));
    EXPECT_NEAR(p.mean, y[i], 1e-4);
    EXPECT_LE(p.std, 1e-2);
  }
}

TEST(Gp, DuplicateInputsUseJitter) {
  const GaussianProcess gp(column({0.5, 0.5, 0.1}), Vector{{1.0, -1.0, 0.0}}, {0.3, 1.0, 0.0});
  EXPECT_GT(gp.jitter(), 0.0);
  const auto p = gp.predict(Vector::Constant(1, 0.5));
  EXPECT_TRUE(std::isfinite(p.mean));
  EXPECT_NEAR(p.mean, 0.0, 0.1);
}

TEST(Gp, RevertsToPriorFarFromData) {
  const GaussianProcess gp(column({0.0, 0.1, 0.2}), Vector{{1.0, 2.0, 3.0}}, {0.1, 4.0, 1e-6});
  const auto p = gp.predict(Vector::Constant(1, 100.0));
  EXPECT_NEAR(p.mean, gp.prior_mean(), 1e-9);
  EXPECT_NEAR(gp.prior_mean(), 2.0, 1e-15);
  EXPECT_NEAR(p.std, 2.0, 1e-9);
}

TEST(Gp, StdAtTrainingPointIsTiny) {
  const GaussianProcess gp(column({0.0, 0.4, 0.9}), Vector{{1.0, 0.0, 1.0}}, {0.5, 1.0, 1e-10});
  EXPECT_LE(gp.predict(Vector::Constant(1, 0.4)).std, 1e-4);
}

TEST(Gp, MatchesDenseOracleOnGrid) {
  Rng rng(21);
  Matrix X(15, 2);
  Vector y(15);
  for (int i = 0; i < 15; ++i) {
    X(i, 0) = uniform(rng, -1, 1);
    X(i, 1) = uniform(rng, -1, 1);
    y[i] = std::sin(3 * X(i, 0)) + X(i, 1);
  }
  const auto hp = GpHyperparams::from_data(X, y);
  const GaussianProcess gp(X, y, hp);
  double worst = 0.0;
  for (int a = 0; a <= 10; ++a) {
    for (int b = 0; b <= 10; ++b) {
      const Vector x{{-1.0 + 0.2 * a, -1.0 + 0.2 * b}};
      const auto p = gp.predict(x);
      const auto o = dense_oracle(X, y, hp, gp.prior_mean(), x);
      worst = std::max({worst, std::abs(p.mean - o.mean), std::abs(p.std * p.std - o.std * o.std)});
    }
  }
  EXPECT_LE(worst, 1e-8);
}

// Property: posterior variance never exceeds the prior variance plus noise.
TEST(Gp, VarianceBoundedByPrior) {
  Rng rng(5);
  Matrix X(12, 3);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = uniform(rng, 0, 1);
  const Vector y = Vector::Random(12);
  const GpHyperparams hp{0.4, 0.7, 1e-6};
  const GaussianProcess gp(X, y, hp);
  for (int i = 0; i < 1000; ++i) {
    const Vector x = Vector::Random(3) * 3.0;
    const auto p = gp.predict(x);
    EXPECT_GE(p.std, 0.0);
    EXPECT_LE(p.std * p.std, hp.signal_variance + hp.noise_variance);
  }
}

TEST(Gp, InvalidInputs) {
  EXPECT_THROW(GaussianProcess(Matrix(0, 1), Vector(0), {}), ConfigError);
  EXPECT_THROW(GaussianProcess(column({0.0}), Vector::Zero(2), {}), DimensionError);
  EXPECT_THROW(GaussianProcess(column({0.0}), Vector::Constant(1, NAN), {}), NumericError);
}

TEST(Ei, ClosedFormCases) {
  EXPECT_DOUBLE_EQ(expected_improvement(1.0, 0.0, 1.0, 0.0), 0.0);
  EXPECT_NEAR(expected_improvement(1.0 - 0.01, 1.0, 1.0, 0.01), 1.0 / std::sqrt(2 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(expected_improvement(1.0 - 0.01, 1.0, 1.0, 0.01), 0.39894, 1e-5);
  EXPECT_DOUBLE_EQ(expected_improvement(0.0, 0.0, 1.0, 0.0), 1.0);
}

TEST(Ei, MatchesMonteCarloOracle) {
  Rng rng(2024);
  std::vector<double> draws(1000000);
  for (auto& z : draws) z = standard_normal(rng);
  const double best = 0.0, xi = 0.01;
  double worst = 0.0;
  for (int a = 0; a < 5; ++a) {
    for (int b = 0; b < 5; ++b) {
      const double mu = -1.0 + 0.5 * a;
      const double sigma = 0.2 + 0.45 * b;
      double acc = 0.0;
      for (double z : draws) acc += std::max(best - xi - (mu + sigma * z), 0.0);
      worst = std::max(worst, std::abs(acc / draws.size() - expected_improvement(mu, sigma, best, xi)));
    }
  }
  EXPECT_LE(worst, 3e-3);
}

// Property: EI >= 0 everywhere.
TEST(Ei, NonNegative) {
  Rng rng(77);
  for (int i = 0; i < 10000; ++i) {
    const double mu = uniform(rng, -100, 100);
    const double sigma = std::exp(uniform(rng, -20, 5));
    const double best = uniform(rng, -100, 100);
    EXPECT_GE(expected_improvement(mu, sigma, best, 0.01), 0.0);
  }
}

TEST(Bo, FindsQuadraticMinimum) {
  const Box box = Box::uniform(1, 0.0, 1.0);
  const auto f = [](const Vector& x) { return (x[0] - 0.3) * (x[0] - 0.3); };
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto res = bo_minimize(f, box, {}, seed);
    EXPECT_EQ(res.evals.size(), 40u);
    hits += res.best_y <= 1e-2 ? 1 : 0;
  }
  EXPECT_GE(hits, 4);
}

TEST(Bo, StaysInsideBoxAndBudgetIsExact) {
  const Box box(Vector{{-1.0, 2.0, 0.0}}, Vector{{1.0, 2.5, 0.1}});
  const auto f = [](const Vector& x) { return x.squaredNorm(); };
  AcquisitionConfig cfg;
  cfg.n_init = 3;
  cfg.n_iter = 7;
  cfg.candidates_per_step = 64;
  const auto res = bo_minimize(f, box, cfg, 1);
  ASSERT_EQ(res.evals.size(), 10u);
  for (const auto& e : res.evals) EXPECT_TRUE(box.contains(e.x));
}

TEST(Bo, SeedDeterminism) {
  const Box box = Box::uniform(2, -1.0, 1.0);
  const auto f = [](const Vector& x) { return std::sin(4 * x[0]) + x[1] * x[1]; };
  const auto a = bo_minimize(f, box, {}, 9);
  const auto b = bo_minimize(f, box, {}, 9);
  ASSERT_EQ(a.evals.size(), b.evals.size());
  for (std::size_t i = 0; i < a.evals.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(a.evals[i].x, b.evals[i].x));
    EXPECT_EQ(a.evals[i].y, b.evals[i].y);
  }
}

TEST(Bo, ConstantObjective) {
  const auto res = bo_minimize([](const Vector&) { return 4.0; }, Box::uniform(2, 0, 1), {}, 3);
  EXPECT_EQ(res.best_y, 4.0);
  EXPECT_EQ(res.evals.size(), 40u);
}

TEST(Bo, NonFiniteValuesRecordedAsInfinity) {
  const auto f = [](const Vector& x) { return x[0] > 0.5 ? NAN : x[0]; };
  const auto res = bo_minimize(f, Box::uniform(1, 0, 1), {}, 4);
  EXPECT_EQ(res.evals.size(), 40u);
  bool saw_inf = false;
  for (const auto& e : res.evals) saw_inf = saw_inf || std::isinf(e.y);
  EXPECT_TRUE(saw_inf);
  EXPECT_LT(res.best_y, 0.5);
}

TEST(Bo, RejectsDegenerateBox) {
  EXPECT_THROW(bo_minimize([](const Vector&) { return 0.0; }, Box::uniform(1, 1, 1), {}, 0), ConfigError);
  AcquisitionConfig cfg;
  cfg.n_iter = 0;
  EXPECT_THROW(bo_minimize([](const Vector&) { return 0.0; }, Box::uniform(1, 0, 1), cfg, 0), ConfigError);
}
