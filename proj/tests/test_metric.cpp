#include <cmath>

#include <gtest/gtest.h>

#include "llqrsam/harness/studies.hpp"
#include "llqrsam/metric.hpp"

using namespace llqrsam;
using llqrsam::harness::fd_relative_error;

TEST(ApplyMetric, Examples) {
  EXPECT_EQ(apply_metric(MetricState::identity(2), Vec{1.5, -2.0}), (Vec{1.5, -2.0}));
  EXPECT_EQ(apply_metric(MetricState::diagonal({2.0, 0.5}), Vec{1.0, 4.0}), (Vec{2.0, 2.0}));
  EXPECT_EQ(apply_metric(MetricState::dense(SymMatrix{{2.0, 1.0}, {1.0, 2.0}}), Vec{1.0, 0.0}),
            (Vec{2.0, 1.0}));
}

TEST(ApplyMetric, DimensionMismatch) {
  EXPECT_THROW(apply_metric(MetricState::identity(3), Vec{1.0, 2.0}), DimensionError);
}

TEST(DualNorm, Examples) {
  EXPECT_EQ(dual_norm(MetricState::diagonal({4.0, 1.0}), Vec{0.0, 0.0}), 0.0);
  EXPECT_DOUBLE_EQ(dual_norm(MetricState::identity(2), Vec{3.0, 4.0}), 5.0);
  EXPECT_DOUBLE_EQ(dual_norm(MetricState::diagonal({4.0, 1.0}), Vec{1.0, 2.0}), std::sqrt(8.0));
}

TEST(EmaUpdate, Endpoints) {
  const auto a = MetricState::diagonal({1.0, 1.0});
  const auto b = MetricState::diagonal({3.0, 0.2});
  EXPECT_EQ(ema_update(a, b, 0.0).state.params(), b.params());
  EXPECT_EQ(ema_update(a, b, 1.0).state.params(), a.params());
}

TEST(EmaUpdate, Example) {
  const auto r = ema_update(MetricState::diagonal({1.0, 1.0}), MetricState::diagonal({3.0, 0.2}), 0.95);
  EXPECT_NEAR(r.state.params()[0], 1.1, 1e-15);
  EXPECT_NEAR(r.state.params()[1], 0.96, 1e-15);
  EXPECT_FALSE(r.clamped);
}

TEST(EmaUpdate, ClampsOutOfBoundsWithWarning) {
  auto a = MetricState::diagonal({1.0, 1.0});
  a.bounds = {0.5, 2.0};
  auto b = MetricState::diagonal({10.0, 0.01});
  b.bounds = a.bounds;
  const auto r = ema_update(a, b, 0.0);
  EXPECT_TRUE(r.clamped);
  EXPECT_FALSE(r.warnings.empty());
  const auto [lo, hi] = r.state.extreme_eigenvalues();
  EXPECT_GE(lo, 0.5);
  EXPECT_LE(hi, 2.0);
}

TEST(EmaUpdate, RejectsStructureMismatch) {
  EXPECT_THROW(ema_update(MetricState::diagonal({1.0, 1.0}), MetricState::dense(SymMatrix::identity(2)), 0.5),
               std::invalid_argument);
}

TEST(KroneckerBlock, AppliesAsLeftGRight) {
  const LayeredNet net({{2, 3, Activation::identity, false}}, {1.0, 2.0}, {0.0, 0.0, 0.0});
  auto u = MetricState::layer_blocks(net, BlockKind::kronecker);
  CounterRng rng(3, 0);
  Vec p = u.params();
  for (double& v : p) v += 0.3 * rng.normal();
  u = u.with_params(p);
  Vec g(net.dim());
  for (double& v : g) v = rng.normal();
  // The realized dense matrix must agree with the structured apply.
  const Vec direct = matvec(u.realized(), g);
  const Vec fast = u.apply(g);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(direct[k], fast[k], 1e-12);
}

namespace {

LayeredNet scalar_net() { return LayeredNet({{1, 1, Activation::identity, false}}, {2.0}, {0.0}); }

}  // namespace

TEST(LqrBlocks, ScalarNgd) {
  const auto net = scalar_net();
  const auto lin = linearize(net, Vec{1.0});
  const auto b = form_lqr_blocks(lin, net, Divergence::ngd, 1e-3);
  EXPECT_DOUBLE_EQ(b.terminal_cost(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(b.terminal_linear[0], 2.0);
  EXPECT_DOUBLE_EQ(b.control_cost[0](0, 0), 1e-3);
}

TEST(LqrBlocks, LinearNetNewtonEqualsNgd) {
  const LayeredNet net({{2, 2, Activation::identity, true}, {2, 1, Activation::identity, true}},
                       {0.5, 1.0}, {0.2});
  CounterRng rng(4, 0);
  const auto lin = linearize(net, net.random_parameters(rng));
  const auto a = form_lqr_blocks(lin, net, Divergence::ngd, 0.0);
  const auto b = form_lqr_blocks(lin, net, Divergence::newton, 0.0);
  for (std::size_t i = 0; i < a.depth(); ++i) EXPECT_EQ((a.state_cost[i] - b.state_cost[i]).frobenius(), 0.0);
}

TEST(LqrBlocks, NewtonTermVanishesAtZeroWeights) {
  const LayeredNet net({{2, 2, Activation::tanh, false}, {2, 1, Activation::tanh, false}}, {0.5, 1.0},
                       {0.2});
  CounterRng rng(5, 0);
  const Vec th = net.random_parameters(rng);
  const auto lin = linearize(net, th);
  const auto ngd = form_lqr_blocks(lin, net, Divergence::ngd);
  const auto newton = form_lqr_blocks(lin, net, Divergence::newton);
  EXPECT_GT((newton.state_cost[1] - ngd.state_cost[1]).frobenius(), 0.0);
  const Vec zero(net.dim(), 0.0);
  const auto lz = linearize(net, zero);
  EXPECT_EQ((form_lqr_blocks(lz, net, Divergence::newton).state_cost[1] -
             form_lqr_blocks(lz, net, Divergence::ngd).state_cost[1])
                .frobenius(),
            0.0);
}

TEST(LqrBlocks, RejectsNonProbabilityTarget) {
  const LayeredNet net({{1, 2, Activation::identity, true}}, {1.0}, {0.7, 0.7},
                       LossKind::softmax_cross_entropy);
  const auto lin = linearize(net, Vec(net.dim(), 0.1));
  EXPECT_THROW(form_lqr_blocks(lin, net, Divergence::ngd), std::invalid_argument);
}

TEST(RelaxedObjective, ZeroMetricGivesZero) {
  const auto net = scalar_net();
  const auto lin = linearize(net, Vec{1.0});
  const auto b = form_lqr_blocks(lin, net, Divergence::ngd, 0.0);
  const auto u = MetricState::diagonal({0.0});
  EXPECT_EQ(relaxed_objective(u, b, lin, net, lin.point.grad), 0.0);
}

// Scalar net: delta theta = -u g, delta x1 = x0 delta theta,
// J = e delta x1 + 1/2 delta x1^2, so dJ/du at 0 is -e x0 g = -x0^2 e^2.
TEST(RelaxedObjective, ScalarGradientAtZero) {
  const auto net = scalar_net();
  const auto lin = linearize(net, Vec{1.0});
  const auto b = form_lqr_blocks(lin, net, Divergence::ngd, 0.0);
  const auto g = relaxed_objective_grad(MetricState::diagonal({0.0}), b, lin, net, lin.point.grad);
  EXPECT_DOUBLE_EQ(g[0], -16.0);
}

TEST(RelaxedObjective, StationaryAtOptimum) {
  const auto net = scalar_net();
  const auto lin = linearize(net, Vec{1.0});
  const auto b = form_lqr_blocks(lin, net, Divergence::ngd, 0.0);
  const auto g = relaxed_objective_grad(MetricState::diagonal({0.25}), b, lin, net, lin.point.grad);
  EXPECT_NEAR(g[0], 0.0, 1e-10);
}

TEST(RelaxedObjective, GradientMatchesFiniteDifferencesForEveryBlockKind) {
  CounterRng rng(9, 0);
  const LayeredNet net({{3, 4, Activation::tanh, true}, {4, 2, Activation::tanh, true}},
                       {0.3, -0.5, 0.8}, {0.1, -0.2});
  for (int kind = 0; kind < 3; ++kind)
    for (int c = 0; c < 10; ++c) {
      const Vec th = net.random_parameters(rng);
      const auto lin = linearize(net, th);
      const auto b = form_lqr_blocks(lin, net, c % 2 ? Divergence::newton : Divergence::ngd);
      MetricState u = kind == 0 ? MetricState::diagonal(Vec(net.dim(), 1.0))
                                : MetricState::layer_blocks(net, kind == 1 ? BlockKind::dense
                                                                           : BlockKind::kronecker);
      Vec p = u.params();
      for (double& v : p) v += 0.2 * rng.normal();
      u = u.with_params(p);
      const Vec& g = lin.point.grad;
      EXPECT_LT(fd_relative_error(
                    [&](std::span<const double> q) { return relaxed_objective(u.with_params(q), b, lin, net, g); },
                    p, relaxed_objective_grad(u, b, lin, net, g)),
                1e-6)
          << "kind " << kind << " case " << c;
    }
}

TEST(LearnPreconditioner, ScalarOracle) {
  const auto r = harness::scalar_learner_oracle();
  EXPECT_TRUE(r.accepted);
  EXPECT_NEAR(r.learned_u, 0.25, 1e-4);
  EXPECT_NEAR(r.theta_after_step, 0.0, 4e-4);
}

TEST(LearnPreconditioner, DenseOracleAngle) {
  const auto r = harness::dense_learner_oracle(20240611);
  EXPECT_TRUE(r.accepted);
  EXPECT_LE(r.angle_fraction, 0.02);
}

TEST(LearnPreconditioner, RefreshStaysSpdAndNeverIncreasesObjective) {
  CounterRng rng(10, 0);
  const LayeredNet net({{3, 3, Activation::tanh, true}, {3, 2, Activation::identity, true}},
                       {1.0, 0.5, -0.5}, {0.3, 0.7}, LossKind::softmax_cross_entropy);
  for (auto kind : {BlockKind::diagonal, BlockKind::dense, BlockKind::kronecker}) {
    const auto u = MetricState::layer_blocks(net, kind);
    const auto rep = learn_preconditioner(u, net, net.random_parameters(rng), Divergence::ngd, {});
    EXPECT_TRUE(rep.state.within_bounds());
    EXPECT_LE(rep.objective_end, rep.objective_start);
    EXPECT_GT(rep.state.extreme_eigenvalues().first, 0.0);
  }
}

TEST(MetricState, FrozenApplyIsBitIdentical) {
  const auto u = MetricState::dense(SymMatrix{{2.0, 0.3}, {0.3, 0.7}});
  const Vec g{0.123456789, -9.87654321};
  EXPECT_EQ(u.apply(g), u.apply(g));
  EXPECT_EQ(u.dual_norm(g), u.dual_norm(g));
}
