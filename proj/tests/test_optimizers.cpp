#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "llqrsam/analysis.hpp"
#include "llqrsam/optimizers.hpp"

using namespace llqrsam;

namespace {

OptimizerConfig make(Rule r, double lr, double rho, double momentum = 0.0) {
  OptimizerConfig c;
  c.rule = r;
  c.lr = lr;
  c.rho = rho;
  c.momentum = momentum;
  return c;
}

/// Loss that turns non-finite past a threshold.
struct Cliff {
  std::size_t dim() const { return 1; }
  Evaluation evaluate(std::span<const double> th) const {
    if (th[0] > 1.05) return {std::numeric_limits<double>::quiet_NaN(), Vec{1.0}};
    return {0.5 * th[0] * th[0], Vec{th[0]}};
  }
};

}  // namespace

TEST(SamPerturbation, ZeroGradientIsSkipped) {
  EXPECT_EQ(sam_perturbation(Vec{0.0, 0.0}, MetricState::identity(2), 0.1), (Vec{0.0, 0.0}));
}

TEST(SamPerturbation, EuclideanExample) {
  const Vec e = sam_perturbation(Vec{3.0, 4.0}, MetricState::identity(2), 0.1);
  EXPECT_NEAR(e[0], 0.06, 1e-16);
  EXPECT_NEAR(e[1], 0.08, 1e-16);
}

TEST(SamPerturbation, LiesOnMetricSphere) {
  const SymMatrix m{{2.0, 0.5}, {0.5, 0.3}};
  const Vec e = sam_perturbation(Vec{0.7, -1.3}, MetricState::dense(m), 0.2);
  EXPECT_NEAR(quad_form(e, spd_inverse(m)), 0.04, 1e-14);
}

TEST(Step, SgdmScalarExample) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0}, Vec{0.0});
  OptimizerState st;
  Vec th{1.0};
  step(make(Rule::sgdm, 0.1, 0.0), st, MetricState::identity(1), q, th);
  EXPECT_DOUBLE_EQ(th[0], 0.9);
}

TEST(Step, LlqrSamScalarExample) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0}, Vec{0.0});
  OptimizerState st;
  Vec th{1.0};
  const auto info = step(make(Rule::llqr_sam, 0.1, 0.1), st, MetricState::diagonal({1.0}), q, th);
  EXPECT_NEAR(th[0], 0.89, 1e-15);
  EXPECT_NEAR(info.perturbation_norm, 0.1, 1e-15);
}

TEST(Step, VanillaSamMatchesUnitMetric) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0}, Vec{0.0});
  OptimizerState a, b;
  Vec ta{1.0}, tb{1.0};
  step(make(Rule::llqr_sam, 0.1, 0.1), a, MetricState::diagonal({1.0}), q, ta);
  step(make(Rule::sam, 0.1, 0.1), b, MetricState::identity(1), q, tb);
  EXPECT_EQ(ta, tb);
}

TEST(Step, RhoZeroReducesToBaseRuleExactly) {
  const auto q = TwoScaleQuadratic::rotated(Vec{1.0, 0.3}, Vec{0.5, 2.0}, 0.4);
  const auto u = MetricState::dense(q.average_inverse());
  OptimizerState a, b;
  Vec ta{0.7, -0.2}, tb = ta;
  for (int t = 0; t < 20; ++t) {
    step(make(Rule::llqr_sam, 0.05, 0.0, 0.9), a, u, q, ta);
    step(make(Rule::llqr, 0.05, 0.0, 0.9), b, u, q, tb);
  }
  EXPECT_EQ(ta, tb);
}

TEST(Step, MatchesMatrixRecursionExample) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0, 0.01}, Vec{0.0, 0.99});
  const auto u = q.average_inverse();
  const Vec e = analysis::matrix_recursion_step(q, u, 0.1, 0.1, Vec{1.0, 0.0});
  EXPECT_NEAR(e[0], 0.89, 1e-15);
  EXPECT_EQ(e[1], 0.0);
  OptimizerState st;
  Vec th{1.0, 0.0};
  step(make(Rule::llqr_sam, 0.1, 0.1), st, MetricState::dense(u), q, th);
  EXPECT_NEAR(th[0], e[0], 1e-15);
  EXPECT_NEAR(th[1], e[1], 1e-15);
}

TEST(Step, AbortsOnNonFiniteProbeWithStepIndex) {
  OptimizerState st;
  st.t = 7;
  Vec th{1.0};
  try {
    step(make(Rule::sam, 0.1, 0.1), st, MetricState::identity(1), Cliff{}, th);
    FAIL() << "expected StepAborted";
  } catch (const StepAborted& e) {
    EXPECT_EQ(e.step, 7u);
  }
}

TEST(Step, WeightDecayAndMomentumCompose) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0}, Vec{0.0});
  auto c = make(Rule::sgdm, 0.1, 0.0, 0.5);
  c.weight_decay = 0.1;
  OptimizerState st;
  Vec th{1.0};
  step(c, st, MetricState::identity(1), q, th);  // v = 1.1, buf = 1.1
  EXPECT_NEAR(th[0], 1.0 - 0.11, 1e-15);
  step(c, st, MetricState::identity(1), q, th);  // v = 0.979, buf = 0.55 + 0.979
  EXPECT_NEAR(th[0], 0.89 - 0.1 * (0.55 + 1.1 * 0.89), 1e-15);
}

TEST(Step, FsamWithZeroLambdaIsSam) {
  const auto q = TwoScaleQuadratic::rotated(Vec{1.0, 0.3}, Vec{0.5, 2.0}, 0.4);
  auto f = make(Rule::fsam, 0.05, 0.1);
  f.fsam_lambda = 0.0;
  OptimizerState a, b;
  Vec ta{0.7, -0.2}, tb = ta;
  for (int t = 0; t < 10; ++t) {
    step(f, a, MetricState::identity(2), q, ta);
    step(make(Rule::sam, 0.05, 0.1), b, MetricState::identity(2), q, tb);
  }
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(ta[k], tb[k], 1e-15);
}

TEST(Step, PerturbationSkippedBelowNormFloor) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0}, Vec{0.0});
  OptimizerState st;
  Vec th{1e-14};
  const auto info = step(make(Rule::sam, 0.1, 0.1), st, MetricState::identity(1), q, th);
  EXPECT_EQ(info.perturbation_norm, 0.0);
  EXPECT_NEAR(th[0], 0.9e-14, 1e-28);
}

TEST(OptimizerConfig, ValidatesRanges) {
  EXPECT_THROW(make(Rule::sam, -0.1, 0.1).validate(), std::invalid_argument);
  EXPECT_THROW(make(Rule::sam, 0.1, -0.1).validate(), std::invalid_argument);
  EXPECT_THROW(make(Rule::sgdm, 0.1, 0.0, 1.0).validate(), std::invalid_argument);
}

TEST(Rule, RoundTripsThroughStrings) {
  for (Rule r : {Rule::sgdm, Rule::llqr, Rule::sam, Rule::llqr_sam, Rule::llqr_delta_sam, Rule::fsam})
    EXPECT_EQ(parse_rule(to_string(r)), r);
  EXPECT_FALSE(parse_rule("adam").has_value());
}
