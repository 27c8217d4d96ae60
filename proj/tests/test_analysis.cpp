#include <cmath>

#include <gtest/gtest.h>

#include "llqrsam/analysis.hpp"

using namespace llqrsam;
using namespace llqrsam::analysis;

TEST(ScalarMap, ZeroIsFixedPoint) {
  const auto z = scalar_map_iterate({0.1, 1.0, 0.1, 1.0}, 0.0, 10);
  for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(ScalarMap, OneStep) {
  const auto z = scalar_map_iterate({0.1, 1.0, 0.1, 1.0}, 1.0, 1);
  EXPECT_NEAR(z[1], 0.89, 1e-15);
}

TEST(ScalarMap, LongRunAmplitude) {
  const ScalarModeParams p{0.1, 1.0, 0.1, 1.0};
  EXPECT_NEAR(scalar_map_limsup(p, 1.0, 100000, 1000), 0.01 / 1.9, 1e-12);
}

TEST(TwoCycle, Examples) {
  EXPECT_NEAR(two_cycle_amplitude({0.1, 1.0, 0.1, 1.0}), 0.01 / 1.9, 1e-17);
  EXPECT_EQ(two_cycle_amplitude({0.1, 1.0, 0.0, 1.0}), 0.0);
  EXPECT_NEAR(two_cycle_amplitude({0.5, 2.0, 0.1, 1.0}), 0.1, 1e-16);
}

TEST(TwoCycle, RejectsUnstableRegime) {
  EXPECT_THROW(two_cycle_amplitude({1.0, 2.5, 0.1, 1.0}), std::domain_error);
}

TEST(Envelope, Examples) {
  EXPECT_DOUBLE_EQ(hovering_envelope(0.1, 1.0), 0.1);
  EXPECT_DOUBLE_EQ(hovering_envelope(0.1, 0.01), 1.0);
  EXPECT_EQ(hovering_envelope(0.0, 0.3), 0.0);
  EXPECT_EQ(vanilla_envelope(0.1), 0.1);
  EXPECT_EQ(vanilla_envelope(0.2), 0.2);
}

TEST(Envelope, AmplificationRatio) {
  EXPECT_EQ(amplification_ratio(1.0), 1.0);
  EXPECT_DOUBLE_EQ(amplification_ratio(0.04), 5.0);
  EXPECT_DOUBLE_EQ(amplification_ratio(0.01), 10.0);
}

TEST(Envelope, VanillaTwoCycleIsCurvatureIndependentForSmallSteps) {
  const double eta = 1e-3, rho = 0.1;
  const double hi = vanilla_two_cycle(eta, rho, 100.0) / (eta * 100.0);
  const double lo = vanilla_two_cycle(eta, rho, 0.01) / (eta * 0.01);
  EXPECT_NEAR(hi / lo, (2.0 - eta * 0.01) / (2.0 - eta * 100.0), 1e-12);
}

TEST(EscapePredicate, Examples) {
  EXPECT_TRUE(escape_predicate(0.1, {0.01, 0.0, 0.5}));
  EXPECT_FALSE(escape_predicate(0.0, {0.01, 0.0, 0.5}));
  EXPECT_FALSE(escape_predicate(0.1, {1.0, 0.0, 0.5}));
}

TEST(EscapePredicate, IgnoresLocalizedSharpness) {
  for (double le : {0.0, 1e-3, 1.0, 1e3})
    EXPECT_TRUE(escape_predicate(0.1, {0.01, le, 0.5}));
}

// The scalar simulation oracle: the hovering iterate exceeds r_eps.
TEST(EscapePredicate, AgreesWithSimulation) {
  const ScalarModeParams p{0.5, 1.0, 0.1, 0.01};
  const double sup = scalar_map_limsup(p, 0.01, 1000, 100);
  EXPECT_LE(sup, hovering_envelope(p.rho, p.lambda_bar));
  const PotholeSpec hole{p.lambda_bar, 0.0, 0.3};
  EXPECT_TRUE(escape_predicate(p.rho, hole));
  EXPECT_GT(sup, hole.r_eps);
}

TEST(MatrixRecursion, ZeroStaysZero) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0, 0.01}, Vec{0.0, 0.99});
  EXPECT_EQ(matrix_recursion_step(q, q.average_inverse(), 0.1, 0.1, Vec{0.0, 0.0}), (Vec{0.0, 0.0}));
}

TEST(Whitening, DiagonalExample) {
  const auto q = TwoScaleQuadratic::commuting(Vec{4.0, 1.0}, Vec{0.0, 0.0});
  const Vec y = whiten(q, Vec{1.0, 1.0});
  EXPECT_NEAR(y[0], 2.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0, 1e-15);
}

TEST(Whitening, ZeroSharpnessGivesIdentity) {
  const auto q = TwoScaleQuadratic::rotated(Vec{4.0, 1.0}, Vec{0.0, 0.0}, 0.3);
  EXPECT_LT((whitened_matrix(q) - SymMatrix::identity(2)).frobenius(), 1e-14);
}

TEST(Whitening, RoundTrip) {
  const auto q = TwoScaleQuadratic::rotated(Vec{3.0, 0.2, 0.05}, Vec{1.0, 0.0, 2.0}, 0.5);
  const Vec e{0.3, -1.2, 0.7};
  const Vec back = unwhiten(q, whiten(q, e));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(back[k], e[k], 1e-12);
}

TEST(Whitening, RotatedInstanceMatchesDirectRecursion) {
  const auto q = TwoScaleQuadratic::rotated(Vec{1.0, 0.1}, Vec{0.0, 2.0}, 0.5235987755982988);
  const SymMatrix a = whitened_matrix(q);
  const SymMatrix u = q.average_inverse();
  const double eta = 0.25 / q.perceived_sharpness().back();
  Vec e{0.6, 0.8};
  Vec y = whiten(q, e);
  for (int t = 0; t < 100; ++t) {
    e = matrix_recursion_step(q, u, eta, 1e-3, e);
    y = whitened_step(a, eta, 1e-3, y);
    const Vec back = unwhiten(q, y);
    for (std::size_t k = 0; k < 2; ++k) ASSERT_NEAR(back[k], e[k], 1e-10) << "step " << t;
  }
}

TEST(Ar1, ClosedForms) {
  const auto s = ar1_stationary_stats({0.1, 1.0, 1.0, 1.0});
  EXPECT_NEAR(s.variance, 0.1 / 1.9, 1e-16);
  EXPECT_NEAR(s.one_step_motion, 0.02 / 1.9, 1e-16);
  const auto z = ar1_stationary_stats({0.1, 1.0, 1.0, 0.0});
  EXPECT_EQ(z.variance, 0.0);
  EXPECT_EQ(z.one_step_motion, 0.0);
  const auto d2 = ar1_stationary_stats({0.1, 1.0, 2.0, 1.0});
  EXPECT_NEAR(d2.variance, 0.1 / 3.9, 1e-16);
  EXPECT_LT(d2.variance, s.variance);
}

TEST(Ar1, RejectsNonStationary) {
  EXPECT_THROW(ar1_stationary_stats({1.0, 4.0, 1.0, 1.0}), std::domain_error);
}

TEST(OccupationMass, Examples) {
  EXPECT_EQ(occupation_mass(Vec{1.0}, Vec{42.0}), (Vec{1.0}));
  const Vec m = occupation_mass(Vec{0.5, 0.5}, Vec{1e6, 10.0});
  EXPECT_NEAR(m[1], 10.0 / (1e6 + 10.0), 1e-18);
  const Vec eq = occupation_mass(Vec{0.3, 0.7}, Vec{5.0, 5.0});
  EXPECT_NEAR(eq[0], 0.3, 1e-16);
  EXPECT_NEAR(eq[1], 0.7, 1e-16);
}
