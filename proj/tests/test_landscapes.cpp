#include <cmath>

#include <gtest/gtest.h>

#include "llqrsam/harness/studies.hpp"
#include "llqrsam/landscapes.hpp"

using namespace llqrsam;
using llqrsam::harness::fd_relative_error;

TEST(TwoScaleQuadratic, ZeroIsMinimum) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0, 0.5}, Vec{0.0, 2.0});
  const auto e = q.evaluate(Vec{0.0, 0.0});
  EXPECT_EQ(e.loss, 0.0);
  EXPECT_EQ(e.grad, (Vec{0.0, 0.0}));
}

TEST(TwoScaleQuadratic, ScalarExample) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0}, Vec{0.0});
  const auto e = q.evaluate(Vec{2.0});
  EXPECT_DOUBLE_EQ(e.loss, 2.0);
  EXPECT_DOUBLE_EQ(e.grad[0], 2.0);
}

TEST(TwoScaleQuadratic, TwoDimensionalExample) {
  const auto q = TwoScaleQuadratic::commuting(Vec{1.0, 0.01}, Vec{0.0, 0.99});
  const auto e = q.evaluate(Vec{1.0, 1.0});
  EXPECT_NEAR(e.loss, 1.0, 1e-15);
  EXPECT_NEAR(e.grad[0], 1.0, 1e-15);
  EXPECT_NEAR(e.grad[1], 1.0, 1e-15);
}

TEST(TwoScaleQuadratic, ZeroSharpnessGivesUnitMu) {
  const auto q = TwoScaleQuadratic::rotated(Vec{3.0, 0.2, 0.01}, Vec{0.0, 0.0, 0.0}, 0.7);
  for (double mu : q.perceived_sharpness()) EXPECT_NEAR(mu, 1.0, 1e-10);
}

TEST(TwoScaleQuadratic, RejectsIndefiniteAverage) {
  EXPECT_THROW(TwoScaleQuadratic(SymMatrix::diagonal({1.0, -1.0}), SymMatrix::diagonal({0.0, 0.0})),
               NotPositiveDefiniteError);
}

TEST(TwoScaleQuadratic, RotatedInstanceDoesNotCommute) {
  EXPECT_FALSE(TwoScaleQuadratic::rotated(Vec{1.0, 0.1}, Vec{0.0, 2.0}, 0.5).commuting());
  EXPECT_TRUE(TwoScaleQuadratic::commuting(Vec{1.0, 0.1}, Vec{0.0, 2.0}).commuting());
}

TEST(SharpWell, OriginHasZeroGradient) {
  const SharpWell2D w;
  const auto e = w.evaluate(Vec{0.0, 0.0});
  EXPECT_EQ(e.grad, (Vec{0.0, 0.0}));
}

TEST(SharpWell, RingMinimumIsStationary) {
  const SharpWell2D w;
  const double rm = w.ring_minimum_radius();
  EXPECT_NEAR(w.evaluate(Vec{rm, 0.0}).grad[0], 0.0, 1e-8);
  EXPECT_GT(w.radial_curvature(rm), 0.0);
}

TEST(SharpWell, LossAtRingRadius) {
  const SharpWell2D w;
  EXPECT_NEAR(w.evaluate(Vec{5.0, 0.0}).loss, 0.125 - 2.0, 1e-15);
}

TEST(SharpWell, Regions) {
  const SharpWell2D w;
  EXPECT_EQ(w.region(Vec{0.5, 0.0}), Region::flat);
  EXPECT_EQ(w.region(Vec{0.0, w.ring_minimum_radius()}), Region::sharp);
  EXPECT_EQ(w.region(Vec{20.0, 0.0}), Region::neither);
}

TEST(SharpWell, GradientMatchesFiniteDifferences) {
  const SharpWell2D w;
  CounterRng rng(5, 0);
  for (int c = 0; c < 50; ++c) {
    const double r = rng.uniform(0.3, 8.0), a = rng.uniform(0.0, 6.283185307179586);
    const Vec th{r * std::cos(a), r * std::sin(a)};
    EXPECT_LT(fd_relative_error([&](std::span<const double> x) { return w.evaluate(x).loss; }, th,
                                w.evaluate(th).grad),
              1e-6);
  }
}

TEST(LayeredNet, ScalarLinearExample) {
  const LayeredNet net({{1, 1, Activation::identity, false}}, {2.0}, {0.0});
  const auto e = net.evaluate(Vec{1.0});
  EXPECT_DOUBLE_EQ(e.loss, 2.0);
  EXPECT_DOUBLE_EQ(e.grad[0], 4.0);
}

TEST(LayeredNet, ZeroWeightsZeroTarget) {
  const LayeredNet net({{2, 3, Activation::identity, true}, {3, 2, Activation::identity, true}},
                       {1.0, -1.0}, {0.0, 0.0});
  const auto e = net.evaluate(Vec(net.dim(), 0.0));
  EXPECT_EQ(e.loss, 0.0);
  for (double g : e.grad) EXPECT_EQ(g, 0.0);
}

TEST(LayeredNet, TanhGradientsMatchFiniteDifferences) {
  CounterRng rng(6, 0);
  for (auto loss : {LossKind::squared, LossKind::softmax_cross_entropy}) {
    const LayeredNet net({{3, 4, Activation::tanh, true}, {4, 3, Activation::tanh, true}},
                         {0.3, -0.7, 1.1}, {0.2, 0.3, 0.5}, loss);
    for (int c = 0; c < 25; ++c) {
      const Vec th = net.random_parameters(rng);
      EXPECT_LT(fd_relative_error([&](std::span<const double> x) { return net.evaluate(x).loss; }, th,
                                  net.evaluate(th).grad),
                1e-6);
    }
  }
}

TEST(LayeredNet, RejectsMismatchedLayers) {
  EXPECT_ANY_THROW(LayeredNet({{2, 3, Activation::tanh, true}, {2, 1, Activation::tanh, true}},
                              {1.0, 1.0}, {0.0}));
}

TEST(Linearize, ScalarNetJacobians) {
  const LayeredNet net({{1, 1, Activation::identity, false}}, {2.0}, {0.0});
  const auto lin = linearize(net, Vec{1.0});
  EXPECT_DOUBLE_EQ(lin.state_jacobians[0](0, 0), 1.0);
  EXPECT_DOUBLE_EQ(lin.param_jacobians[0](0, 0), 2.0);
}

// A deep linear net is bilinear in its weights, so the rollout is exact when
// one layer at a time is perturbed.
TEST(Linearize, LinearNetRolloutIsExact) {
  CounterRng rng(7, 0);
  const LayeredNet net({{3, 2, Activation::identity, true}, {2, 2, Activation::identity, true}},
                       {0.4, -0.2, 0.9}, {0.0, 1.0});
  const Vec th = net.random_parameters(rng);
  const auto lin = linearize(net, th);
  for (std::size_t layer = 0; layer < net.depth(); ++layer) {
    Vec d(net.dim(), 0.0);
    auto parts = net.split(d);
    for (double& v : parts[layer]) v = rng.normal();
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i)
      for (double v : parts[i]) d[off++] = v;
    const Vec actual = subtract(net.output(axpy(1.0, d, th)), net.output(th));
    const Vec pred = lin.rollout(parts);
    for (std::size_t k = 0; k < actual.size(); ++k) EXPECT_NEAR(actual[k], pred[k], 1e-12);
  }
}

TEST(Linearize, TanhErrorIsSecondOrder) {
  CounterRng rng(8, 0);
  const LayeredNet net({{2, 3, Activation::tanh, true}, {3, 1, Activation::tanh, true}}, {0.5, -1.0},
                       {0.3});
  const Vec th = net.random_parameters(rng);
  const auto lin = linearize(net, th);
  Vec d(net.dim());
  for (double& v : d) v = 1e-2 * rng.normal();
  auto err = [&](double s) {
    const Vec ds = scaled(s, d);
    return norm2(subtract(subtract(net.output(axpy(1.0, ds, th)), net.output(th)),
                          lin.rollout(net.split(ds))));
  };
  const double ratio = err(1.0) / err(0.5);
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 4.5);
}
