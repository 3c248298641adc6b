#include <gtest/gtest.h>

#include <cmath>

#include "simcal/calibration.hpp"
#include "test_util.hpp"

using namespace simcal;
using simcal::testing::random_matrix;
using simcal::testing::random_vector;
using simcal::testing::with_intercept;

namespace {

RestrictedFit linear_params(const Vector& beta, double sigma) {
  RestrictedFit f;
  f.beta = beta;
  f.sigma = sigma;
  f.family = Family::Linear;
  return f;
}

Vector balanced_binary(int n, int ones) {
  Vector y = Vector::Zero(n);
  for (int i = 0; i < ones; ++i) y[i] = 1.0;
  return y;
}

}  // namespace

TEST(CalibrateLinear, IdentityWhenEndpointsMatch) {
  Rng rng(1);
  const Matrix X = random_matrix(20, 3, rng);
  const Matrix XA = with_intercept(X, {0, 2});
  const RestrictedFit t = linear_params(random_vector(3, rng), 1.7);
  const Vector y = random_vector(20, rng);
  EXPECT_LT((calibrate_linear(y, t, t, XA) - y).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CalibrateLinear, FourPointExample) {
  const Vector y = (Vector(4) << 1, 2, 3, 4).finished();
  const Matrix X = Matrix::Zero(4, 1);
  Matrix XA = Matrix::Ones(4, 1);
  const RestrictedFit from = linear_params((Vector(1) << 2.5).finished(), std::sqrt(1.25));
  const RestrictedFit to = linear_params(Vector::Zero(1), 1.0);
  const Vector out = calibrate_linear(y, from, to, XA);
  const Vector expect = (Vector(4) << -1.3416, -0.4472, 0.4472, 1.3416).finished();
  EXPECT_LT((out - expect).cwiseAbs().maxCoeff(), 1e-3);
  (void)X;
}

TEST(CalibrateLinear, ExactnessAndInverse) {
  Rng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const int k = rep % 6;
    const Matrix X = random_matrix(50, 8, rng);
    IndexSet A;
    for (int j = 0; j < k; ++j) A.push_back(j);
    const RestrictedModel model(X, A, Family::Linear);
    const Vector y_sim = random_vector(50, rng);
    const RestrictedFit from = model.fit(y_sim);
    const RestrictedFit to = linear_params(random_vector(k + 1, rng), 0.2 + rng.uniform());
    const Vector out = calibrate_linear(y_sim, from, to, model.design());
    const RestrictedFit back = model.fit(out);
    EXPECT_LT((back.beta - to.beta).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(*back.sigma, *to.sigma, 1e-8);
    const Vector round = calibrate_linear(out, to, from, model.design());
    EXPECT_LT((round - y_sim).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(CalibrateLinear, DegenerateSource) {
  const Matrix XA = Matrix::Ones(3, 1);
  const RestrictedFit z = linear_params(Vector::Zero(1), 0.0);
  const RestrictedFit t = linear_params(Vector::Zero(1), 1.0);
  try {
    calibrate_linear(Vector::Zero(3), z, t, XA);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateSigma);
  }
}

TEST(CalibrateOnestep, EqualMeansReturnInput) {
  Rng rng(3);
  const Vector y = (Vector(5) << 0, 1, 1, 0, 1).finished();
  const Vector e = (Vector(5) << 0.2, 0.4, 0.6, 0.8, 0.5).finished();
  EXPECT_EQ(calibrate_onestep(y, e, e, Family::Binary, rng), y);
  const Vector yp = (Vector(3) << 0, 4, 7).finished();
  const Vector ep = (Vector(3) << 0.5, 3.0, 9.0).finished();
  EXPECT_EQ(calibrate_onestep(yp, ep, ep, Family::Poisson, rng), yp);
}

TEST(CalibrateOnestep, SupportAndZeroPreservation) {
  Rng rng(4);
  const int n = 200;
  Vector y(n), e1(n), e2(n), yp(n), p1(n), p2(n);
  for (int i = 0; i < n; ++i) {
    e1[i] = 0.05 + 0.9 * rng.uniform();
    e2[i] = 0.05 + 0.9 * rng.uniform();
    y[i] = rng.bernoulli(e1[i]);
    p1[i] = 0.1 + 5 * rng.uniform();
    p2[i] = 0.1 + 5 * rng.uniform();
    yp[i] = rng.poisson(p1[i]);
  }
  const Vector out = calibrate_onestep(y, e1, e2, Family::Binary, rng);
  for (int i = 0; i < n; ++i) {
    EXPECT_TRUE(out[i] == 0.0 || out[i] == 1.0);
    if (y[i] == 0.0 && e2[i] <= e1[i]) {
      EXPECT_EQ(out[i], 0.0);
    }
    if (y[i] == 1.0 && e2[i] >= e1[i]) {
      EXPECT_EQ(out[i], 1.0);
    }
  }
  const Vector outp = calibrate_onestep(yp, p1, p2, Family::Poisson, rng);
  EXPECT_TRUE((outp.array() >= 0.0).all());
  EXPECT_TRUE((outp.array() == outp.array().floor()).all());
}

TEST(CalibrateOnestep, DomainViolation) {
  Rng rng(5);
  const Vector y = Vector::Ones(2);
  const Vector bad = (Vector(2) << 0.5, 1.0).finished();
  const Vector ok = Vector::Constant(2, 0.5);
  EXPECT_THROW(calibrate_onestep(y, ok, bad, Family::Binary, rng), Error);
  EXPECT_THROW(calibrate_onestep(y, ok, ok, Family::Linear, rng), Error);
}

TEST(CalibrateOnestep, ConditionalExpectationIsZ) {
  const Vector y = (Vector(4) << 1, 0, 1, 0).finished();
  const Vector e1 = (Vector(4) << 0.6, 0.6, 0.3, 0.3).finished();
  const Vector e2 = (Vector(4) << 0.4, 0.4, 0.5, 0.5).finished();
  const Vector z = onestep_target(y, e1, e2, Family::Binary);
  // Oracle: downscaling keeps ones with probability e2/e1; upscaling turns
  // zeros into ones with probability 1 - (1-e2)/(1-e1).
  EXPECT_NEAR(z[0], 0.4 / 0.6, 1e-15);
  EXPECT_EQ(z[1], 0.0);
  EXPECT_EQ(z[2], 1.0);
  EXPECT_NEAR(z[3], 1.0 - 0.5 / 0.7, 1e-15);

  Rng rng(6);
  const int m = 20000;
  Vector sum = Vector::Zero(4);
  for (int t = 0; t < m; ++t) sum += calibrate_onestep(y, e1, e2, Family::Binary, rng);
  for (int i = 0; i < 4; ++i) {
    const double se = std::sqrt(z[i] * (1 - z[i]) / m);
    EXPECT_LE(std::abs(sum[i] / m - z[i]), 3.0 * se + 1e-12) << i;
  }
}

TEST(CalibrateIterative, AlreadyCalibratedInputStaysAtZero) {
  const int n = 100;
  const Matrix X = Matrix::Zero(n, 1);
  const RestrictedModel model(X, {}, Family::Binary);
  const Vector y = balanced_binary(n, 40);
  const RestrictedFit f = model.fit(y);
  Rng rng(7);
  const IterativeCalibration cal = calibrate_iterative(y, f.beta, model, rng);
  EXPECT_EQ(cal.trace.mse_history.front(), 0.0);
  EXPECT_LE(cal.trace.mse_history.back(), 1e-20);
}

TEST(CalibrateIterative, AcceptedMseNonIncreasing) {
  Rng rng(8);
  const Matrix X = random_matrix(150, 3, rng);
  for (Family fam : {Family::Binary, Family::Poisson}) {
    const RestrictedModel model(X, {0, 1}, fam);
    const Vector b1 = (Vector(3) << 0.2, 0.5, -0.3).finished();
    const Vector b2 = (Vector(3) << -0.4, 0.1, 0.4).finished();
    for (int rep = 0; rep < 10; ++rep) {
      const Vector y1 = simulate_from_mean(model.mean(b1), fam, std::nullopt, rng);
      const IterativeCalibration cal = calibrate_iterative(y1, b2, model, rng, 50);
      for (std::size_t k = 1; k < cal.trace.mse_history.size(); ++k)
        EXPECT_LE(cal.trace.mse_history[k], cal.trace.mse_history[k - 1]);
      EXPECT_LE(cal.trace.iterations, 50);
      EXPECT_LT(cal.trace.mse_history.back(), cal.trace.mse_history.front());
      EXPECT_LT((model.fit(cal.y).beta - cal.fit.beta).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(CalibrateIterative, InterceptOnlyReachesTarget) {
  const int n = 500;
  const Matrix X = Matrix::Zero(n, 1);
  const RestrictedModel model(X, {}, Family::Binary);
  const Vector y1 = balanced_binary(n, 250);
  const Vector target = (Vector(1) << std::log(0.3 / 0.7)).finished();
  const double tol = 3.0 * std::sqrt(0.2 / n);
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const IterativeCalibration cal = calibrate_iterative(y1, target, model, rng);
    EXPECT_LE(std::abs(cal.y.mean() - 0.3), tol) << "seed " << seed;
  }
}

TEST(CalibrateIterative, IterationCapRespected) {
  Rng rng(9);
  const Matrix X = random_matrix(60, 2, rng);
  const RestrictedModel model(X, {0}, Family::Poisson);
  const Vector y1 = simulate_from_mean(model.mean(Vector::Zero(2)), Family::Poisson, std::nullopt, rng);
  const IterativeCalibration cal =
      calibrate_iterative(y1, (Vector(2) << 1.0, 0.5).finished(), model, rng, 2);
  EXPECT_LE(cal.trace.iterations, 2);
  EXPECT_EQ(cal.trace.mse_history.size(), static_cast<std::size_t>(cal.trace.iterations) + 1);
}

// Single-parameter variance of one-step calibration. For the binary
// intercept-only model with mean(y1) = e1 >= e2, the n*e1 ones are kept with
// probability e2/e1 independently, so Var(mean(Y2)) = e2 (e1 - e2) / (n e1).
TEST(OnestepVariance, BinaryClosedForm) {
  const int n = 500, m = 20000;
  const double e1 = 0.5, e2 = 0.3;
  const Vector y1 = balanced_binary(n, 250);
  const Vector v1 = Vector::Constant(n, e1), v2 = Vector::Constant(n, e2);
  Rng rng(10);
  double s = 0.0, s2 = 0.0;
  for (int t = 0; t < m; ++t) {
    const double mu = calibrate_onestep(y1, v1, v2, Family::Binary, rng).mean();
    s += mu;
    s2 += mu * mu;
  }
  const double var = (s2 - s * s / m) / (m - 1);
  const double closed = e2 * (e1 - e2) / (n * e1);
  EXPECT_NEAR(var / closed, 1.0, 0.05);
  EXPECT_LE(var, std::abs(e2 - e1) / n);
}

TEST(OnestepVariance, PoissonBelowBound) {
  const int n = 500, m = 20000;
  const double e1 = 0.5, e2 = 0.3;
  Rng rng(11);
  Vector y1 = Vector::Zero(n);
  // Mean of y1 exactly e1.
  for (int i = 0; i < 125; ++i) y1[i] = 2.0;
  const Vector v1 = Vector::Constant(n, e1), v2 = Vector::Constant(n, e2);
  std::vector<double> means(m);
  double s = 0.0;
  for (int t = 0; t < m; ++t) s += (means[t] = calibrate_onestep(y1, v1, v2, Family::Poisson, rng).mean());
  const double mean = s / m;
  double ss = 0.0, s4 = 0.0;
  for (double v : means) {
    ss += (v - mean) * (v - mean);
    s4 += std::pow(v - mean, 4);
  }
  const double var = ss / (m - 1);
  const double se = std::sqrt(std::max(0.0, s4 / m - var * var) / m);
  EXPECT_LE(var, std::abs(e2 - e1) / n + 3.0 * se);
}
