#include <cmath>

#include <gtest/gtest.h>

#include "llqrsam/stochsim.hpp"

using namespace llqrsam;

TEST(NoiseSchedule, ZeroVarianceIsZero) {
  const NoiseSchedule s{1, 0.0, 3};
  for (std::uint64_t t = 0; t < 10; ++t) EXPECT_EQ(noise_at(s, t), (Vec{0.0, 0.0, 0.0}));
}

TEST(NoiseSchedule, Deterministic) {
  const NoiseSchedule s{42, 1e-3, 4};
  EXPECT_EQ(noise_at(s, 17), noise_at(s, 17));
  EXPECT_NE(noise_at(s, 17), noise_at(s, 18));
}

TEST(NoiseSchedule, UnitVarianceStatistics) {
  const NoiseSchedule s{7, 1.0, 1};
  double sum = 0.0, sum2 = 0.0;
  const int n = 1000000;
  for (int t = 0; t < n; ++t) {
    const double x = s.at(static_cast<std::uint64_t>(t))[0];
    sum += x;
    sum2 += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 4e-3);
  EXPECT_NEAR(sum2 / n, 1.0, 0.01);
}

namespace {

TrajectoryOptions sharp_exit(const SharpWell2D& w, std::size_t horizon) {
  TrajectoryOptions o;
  o.horizon = horizon;
  o.stride = 1;
  o.classify = [&w](std::span<const double> th) { return w.region(th); };
  o.exit_from = Region::sharp;
  return o;
}

OptimizerConfig rule(Rule r, double rho) {
  OptimizerConfig c;
  c.rule = r;
  c.lr = 0.01;
  c.rho = rho;
  c.momentum = 0.9;
  return c;
}

}  // namespace

TEST(Trajectory, NoNoiseNoSamStaysAtMinimum) {
  const SharpWell2D w;
  const Vec start{w.ring_minimum_radius(), 0.0};
  const auto rec = run_noisy_trajectory(w, rule(Rule::sgdm, 0.0), MetricState::identity(2), start,
                                        NoiseSchedule{1, 0.0, 2}, sharp_exit(w, 500));
  EXPECT_LT(rec.path_length, 1e-12);
  EXPECT_EQ(rec.final_region, Region::sharp);
  EXPECT_FALSE(rec.exit_step.has_value());
}

TEST(Trajectory, SamExitsWhenEnvelopeExceedsBasin) {
  const SharpWell2D w;
  // The exact minimum is a fixed point (zero gradient skips the ascent step),
  // so start a quarter basin off it.
  const Vec start{w.ring_minimum_radius() + 0.25 * w.basin_radius(), 0.0};
  const auto u = MetricState::diagonal({0.5, 0.5});
  // rho * sqrt(u) = 0.707 exceeds the sharp basin half-width.
  EXPECT_GT(1.0 * std::sqrt(0.5), w.basin_radius());
  const auto rec = run_noisy_trajectory(w, rule(Rule::llqr_sam, 1.0), u, start, NoiseSchedule{1, 0.0, 2},
                                        sharp_exit(w, 5000));
  ASSERT_TRUE(rec.exit_step.has_value());
  EXPECT_EQ(rec.final_region, Region::flat);
}

TEST(Trajectory, SharedScheduleAndReproducibility) {
  const SharpWell2D w;
  const Vec start{w.ring_minimum_radius(), 0.0};
  const auto u = MetricState::diagonal({0.5, 0.5});
  const NoiseSchedule s{3, 1e-9, 2};
  const auto a = run_noisy_trajectory(w, rule(Rule::sam, 1.0), u, start, s, sharp_exit(w, 1000));
  const auto b = run_noisy_trajectory(w, rule(Rule::llqr_sam, 1.0), u, start, s, sharp_exit(w, 1000));
  const auto a2 = run_noisy_trajectory(w, rule(Rule::sam, 1.0), u, start, s, sharp_exit(w, 1000));
  EXPECT_EQ(a.noise_hash, b.noise_hash);
  EXPECT_EQ(a.final_theta, a2.final_theta);
  EXPECT_EQ(a.path_length, a2.path_length);
  ASSERT_EQ(a.rows.size(), a2.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].theta, a2.rows[i].theta);
}

TEST(Ar1Simulation, MatchesClosedForm) {
  const analysis::Ar1Params p{0.1, 1.0, 1.0, 1.0};
  const auto th = analysis::ar1_stationary_stats(p);
  const auto em = ar1_simulate(p, 1000000, 5);
  EXPECT_NEAR(em.variance / th.variance, 1.0, 0.02);
  EXPECT_NEAR(em.one_step_motion / th.one_step_motion, 1.0, 0.02);
}

namespace {

OptimizerConfig selection_rule() {
  OptimizerConfig c;
  c.rule = Rule::llqr_sam;
  c.lr = 0.125;
  c.rho = 0.05;
  return c;
}

}  // namespace

TEST(Regenerative, SingleFlatWellHasFullOccupancy) {
  RegenerativeConfig rc;
  rc.wells = {{"flat", 1.0, 1e-9, 0.00125}};
  rc.sigma = 1e-3;
  rc.metric = 4.0;
  rc.max_cycles = 50;
  const auto st = regenerative_simulate(rc, selection_rule());
  EXPECT_EQ(st.wells[0].occupancy, 1.0);
}

TEST(Regenerative, SharpOccupancyDecreasesWithSigma) {
  double prev = 1.0;
  for (double sigma : {1e-2, 1e-3, 1e-4}) {
    RegenerativeConfig rc;
    rc.wells = {{"flat", 0.5, 1e-9, 0.00125}, {"sharp", 0.5, 3.0, 0.00125}};
    rc.sigma = sigma;
    rc.metric = 4.0;
    rc.max_cycles = 400;
    rc.seed = 13;
    const auto st = regenerative_simulate(rc, selection_rule());
    EXPECT_LT(st.wells[1].occupancy, prev) << "sigma " << sigma;
    prev = st.wells[1].occupancy;
  }
}

TEST(Regenerative, RenewalRewardAgreement) {
  RegenerativeConfig rc;
  rc.wells = {{"flat", 0.5, 1e-9, 0.00125}, {"sharp", 0.5, 3.0, 0.00125}};
  rc.sigma = 1e-3;
  rc.metric = 4.0;
  rc.max_cycles = 1000;
  rc.seed = 21;
  const auto st = regenerative_simulate(rc, selection_rule());
  const auto chk = renewal_check(st, Vec{0.5, 0.5});
  EXPECT_LE(chk.max_z, 3.0);
}

TEST(Regenerative, Deterministic) {
  RegenerativeConfig rc;
  rc.wells = {{"flat", 0.5, 1e-9, 0.00125}, {"sharp", 0.5, 3.0, 0.00125}};
  rc.sigma = 1e-2;
  rc.metric = 4.0;
  rc.max_cycles = 100;
  rc.seed = 2;
  const auto a = regenerative_simulate(rc, selection_rule());
  const auto b = regenerative_simulate(rc, selection_rule());
  EXPECT_EQ(a.wells[0].exit_times, b.wells[0].exit_times);
  EXPECT_EQ(a.wells[1].exit_times, b.wells[1].exit_times);
}

TEST(Regenerative, RejectsBadProbabilities) {
  RegenerativeConfig rc;
  rc.wells = {{"a", 0.3, 1.0, 1.0}, {"b", 0.3, 1.0, 1.0}};
  EXPECT_THROW(rc.validate(), std::invalid_argument);
}
