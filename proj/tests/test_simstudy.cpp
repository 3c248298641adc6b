#include <gtest/gtest.h>

#include <cmath>

#include "simcal/simstudy.hpp"
#include "test_util.hpp"

using namespace simcal;

namespace {

double corr(const Vector& a, const Vector& b) {
  const Vector ac = a.array() - a.mean(), bc = b.array() - b.mean();
  return ac.dot(bc) / std::sqrt(ac.squaredNorm() * bc.squaredNorm());
}

std::vector<double> uniform_grid(int m) {
  std::vector<double> g;
  for (int i = 1; i <= m; ++i) g.push_back((i - 0.5) / m);
  return g;
}

}  // namespace

TEST(ToeplitzDesign, IdentityAtRhoZero) {
  Rng rng(1);
  const Matrix X = toeplitz_design(100000, 4, 0.0, rng);
  for (int a = 0; a < 4; ++a) {
    EXPECT_NEAR((X.col(a).array() - X.col(a).mean()).square().mean(), 1.0, 0.01);
    for (int b = a + 1; b < 4; ++b) EXPECT_NEAR(corr(X.col(a), X.col(b)), 0.0, 0.01);
  }
}

TEST(ToeplitzDesign, LagCorrelations) {
  // The 0.01 band on the variance is about 2.2 standard errors at this n.
  Rng rng(3);
  const Matrix X = toeplitz_design(100000, 4, 0.9, rng);
  EXPECT_NEAR(corr(X.col(0), X.col(1)), 0.9, 0.01);
  EXPECT_NEAR(corr(X.col(0), X.col(2)), 0.81, 0.01);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR((X.col(j).array() - X.col(j).mean()).square().mean(), 1.0, 0.01);
  Rng r1(3), r2(3);
  EXPECT_EQ(toeplitz_design(20, 5, 0.5, r1), toeplitz_design(20, 5, 0.5, r2));
  EXPECT_THROW(toeplitz_design(5, 5, 1.0, r1), Error);
}

TEST(EmpiricalSnr, Definitions) {
  Rng rng(4);
  const Matrix X = toeplitz_design(200, 5, 0.0, rng);
  EXPECT_EQ(empirical_snr(X, Vector::Zero(5), 0.3, Family::Linear), 0.0);
  EXPECT_EQ(empirical_snr(X, Vector::Zero(5), 0.0, Family::Binary), 0.0);

  Vector b = Vector::Zero(5);
  b[1] = 1.0;
  const Vector s = X * b;
  const double var = (s.array() - s.mean()).square().sum() / 199.0;
  b *= std::sqrt(0.3 / var);
  EXPECT_NEAR(empirical_snr(X, b, 1.0, Family::Linear), 0.3, 1e-12);

  const Vector mu = (0.5 * X.col(0).array()).exp();
  const double num = (mu.array() - mu.mean()).square().sum() / 199.0;
  Vector bp = Vector::Zero(5);
  bp[0] = 0.5;
  EXPECT_NEAR(empirical_snr(X, bp, 0.0, Family::Poisson), num / mu.mean(), 1e-12);
}

TEST(ScaleBetaToSnr, LinearClosedForm) {
  Rng rng(5);
  const Matrix X = toeplitz_design(200, 20, 0.5, rng);
  const IndexSet S = {2, 5, 11};
  Vector base = Vector::Zero(20);
  for (int j : S) base[j] = 1.0;
  const Vector sig = X * base;
  const double var = (sig.array() - sig.mean()).square().sum() / 199.0;
  for (double target : {1.0, 0.3, 0.01}) {
    const Vector b = scale_beta_to_snr(X, S, Family::Linear, target, 0.0);
    EXPECT_NEAR(b[2], std::sqrt(target / var), 1e-8 * std::sqrt(target / var));
    EXPECT_NEAR(empirical_snr(X, b, 0.0, Family::Linear), target, 1e-6 * target);
  }
  EXPECT_LT(scale_beta_to_snr(X, S, Family::Linear, 1e-12, 0.0)[2], 1e-5);
}

TEST(ScaleBetaToSnr, GlmRoundTrip) {
  Rng rng(6);
  const Matrix X = toeplitz_design(300, 10, 0.3, rng);
  for (auto [fam, b0] : {std::pair{Family::Binary, 0.0}, std::pair{Family::Binary, std::log(0.1 / 0.9)},
                         std::pair{Family::Poisson, 0.0}}) {
    for (double target : {0.1, 0.3, 1.0}) {
      const Vector b = scale_beta_to_snr(X, {1, 4}, fam, target, b0);
      EXPECT_NEAR(empirical_snr(X, b, b0, fam), target, 1e-6 * target) << to_string(fam);
    }
  }
  EXPECT_THROW(scale_beta_to_snr(X, {}, Family::Linear, 1.0, 0.0), Error);
}

TEST(KsUniform, ExactGrid) {
  for (int m : {5, 50, 400}) {
    const KsResult r = ks_uniform(uniform_grid(m), KsSide::TwoSided);
    EXPECT_NEAR(r.statistic, 0.5 / m, 1e-12);
    EXPECT_GT(r.p_value, 0.99);
  }
}

TEST(KsUniform, DegenerateSamples) {
  const std::vector<double> ones(100, 1.0);
  EXPECT_LT(ks_uniform(ones, KsSide::TwoSided).p_value, 1e-10);
  // All mass at 1 dominates the uniform: the dominance side sees nothing.
  EXPECT_EQ(ks_uniform(ones, KsSide::Upper).statistic, 0.0);
  EXPECT_EQ(ks_uniform(ones, KsSide::Upper).p_value, 1.0);
  EXPECT_LT(ks_uniform(ones, KsSide::Lower).p_value, 1e-10);
  const std::vector<double> same(100, 0.3);
  EXPECT_LT(ks_uniform(same, KsSide::TwoSided).p_value, 1e-10);
  EXPECT_THROW(ks_uniform({0.1, 0.2}, KsSide::TwoSided), Error);
}

TEST(KsUniform, PValueUniformUnderNull) {
  Rng rng(7);
  double s = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> x(100);
    for (auto& v : x) v = rng.uniform();
    s += ks_uniform(x, KsSide::TwoSided).p_value;
  }
  EXPECT_NEAR(s / 1000.0, 0.5, 0.05);
}

TEST(KsUniform, KolmogorovSurvivalKnownValues) {
  // Classical critical values of the Kolmogorov distribution.
  EXPECT_NEAR(kolmogorov_survival(1.3581), 0.05, 1e-4);
  EXPECT_NEAR(kolmogorov_survival(1.6276), 0.01, 1e-4);
  EXPECT_NEAR(kolmogorov_survival(1.2238), 0.10, 1e-4);
  EXPECT_NEAR(kolmogorov_survival(1.1), 1.0 - 0.822282, 1e-5);
}

TEST(SelectionMetrics, TrivialCases) {
  std::vector<SelectionReplicate> reps(3);
  for (auto& r : reps) {
    r.support = {0, 1};
    r.p_seq = {0.9, 0.1};
    r.entering = {{0}, {1}};
  }
  AlphaMetrics m = selection_metrics(reps, 0.05, HaltCriterion::Thresholding);
  EXPECT_EQ(m.fwer, 0.0);
  EXPECT_EQ(m.fdr, 0.0);
  EXPECT_EQ(m.sensitivity, 0.0);
  for (auto& r : reps) r.p_seq = {0.01, 0.02, 0.9};
  for (auto& r : reps) r.entering = {{1}, {0}, {5}};
  m = selection_metrics(reps, 0.05, HaltCriterion::Thresholding);
  EXPECT_EQ(m.fwer, 0.0);
  EXPECT_EQ(m.fdr, 0.0);
  EXPECT_EQ(m.sensitivity, 1.0);
}

TEST(SelectionMetrics, MixedReplicates) {
  std::vector<SelectionReplicate> reps(2);
  reps[0].support = {0, 1};
  reps[0].p_seq = {0.01, 0.01, 0.01};
  reps[0].entering = {{0}, {4}, {1}};
  reps[1].support = {0, 1};
  reps[1].p_seq = {0.01, 0.5};
  reps[1].entering = {{1}, {3}};
  const AlphaMetrics m = selection_metrics(reps, 0.05, HaltCriterion::Thresholding);
  EXPECT_DOUBLE_EQ(m.fwer, 0.5);
  EXPECT_DOUBLE_EQ(m.fdr, (1.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(m.sensitivity, (1.0 + 0.5) / 2.0);
}

TEST(Scenario, ValidationAndDeterminism) {
  ScenarioConfig c;
  c.n = 40;
  c.p = 8;
  c.n_active = 2;
  c.snr_target = 1.0;
  c.N = 10;
  c.n_replicates = 6;
  c.master_seed = 9;
  EXPECT_NO_THROW(validate(c));
  ScenarioConfig bad = c;
  bad.snr_target = 0.0;
  EXPECT_THROW(validate(bad), Error);
  bad = c;
  bad.rho = 1.0;
  EXPECT_THROW(validate(bad), Error);

  const ReplicateData a = generate_replicate(c, 3), b = generate_replicate(c, 3);
  EXPECT_EQ(a.data.X, b.data.X);
  EXPECT_EQ(a.data.y, b.data.y);
  EXPECT_EQ(a.support.size(), 2u);

  const ScenarioMetrics m1 = run_null_study(c, 1);
  const ScenarioMetrics m2 = run_null_study(c, 3);
  EXPECT_EQ(m1.replicate_p_values, m2.replicate_p_values);
  EXPECT_GE(m1.ks_two_sided.p_value, 0.0);
  EXPECT_LE(m1.ks_two_sided.p_value, 1.0);

  c.alpha_grid = {0.05, 0.2};
  c.alpha = 0.2;
  const ScenarioMetrics s1 = run_selection_study(c, 1);
  const ScenarioMetrics s2 = run_selection_study(c, 2);
  ASSERT_EQ(s1.selection_replicates.size(), 6u);
  for (std::size_t r = 0; r < 6; ++r)
    EXPECT_EQ(s1.selection_replicates[r].p_seq, s2.selection_replicates[r].p_seq);
  EXPECT_EQ(s1.per_alpha.size(), 4u);
  for (const auto& am : s1.per_alpha) {
    EXPECT_GE(am.fwer, 0.0);
    EXPECT_LE(am.fwer, 1.0);
    EXPECT_LE(am.fdr, 1.0);
    EXPECT_LE(am.sensitivity, 1.0);
  }
}
