#pragma once

// Verification checks. Acceptance criteria 1-11 and the property suites
// share one shape: a deterministic function returning measured values,
// pinned tolerances and a verdict. Wall-clock runtime is measured by the
// caller and kept out of the deterministic report.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "llqrsam/analysis.hpp"
#include "llqrsam/harness/config.hpp"
#include "llqrsam/harness/experiments.hpp"
#include "llqrsam/harness/io.hpp"
#include "llqrsam/harness/studies.hpp"
#include "llqrsam/landscapes.hpp"
#include "llqrsam/metric.hpp"
#include "llqrsam/optimizers.hpp"
#include "llqrsam/stochsim.hpp"

namespace llqrsam::harness {

struct CheckResult {
  bool passed = false;
  json measured = json::object();
  json tolerance = json::object();
  std::string note;
};

struct CheckSpec {
  std::string id;
  int criterion = 0;  // 0 for property checks
  std::string title;
  double budget_s = 0.0;  // 0 = no runtime budget
  /// Criterion that cannot hold as written; reported red but not counted
  /// against the exit status.
  bool known_unattainable = false;
  std::function<CheckResult()> run;
};

struct CheckOutcome {
  const CheckSpec* spec = nullptr;
  CheckResult result;
  double runtime_s = 0.0;
  bool within_budget() const { return spec->budget_s <= 0.0 || runtime_s < spec->budget_s; }
};

inline CheckOutcome run_check(const CheckSpec& s) {
  CheckOutcome o;
  o.spec = &s;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    o.result = s.run();
  } catch (const std::exception& e) {
    o.result.passed = false;
    o.result.note = std::string("exception: ") + e.what();
  }
  o.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return o;
}

// ---------------------------------------------------------------------------
// Pinned parameters

namespace pinned {

inline constexpr double kTwoCycleTol = 1e-10;
inline constexpr double kScaleRelTol = 1e-8;
inline constexpr double kIdentityRelTol = 1e-15;
inline constexpr double kWhiteningTol = 1e-10;
inline constexpr double kOptimizerTol = 1e-12;
inline constexpr double kAr1RelTol = 0.02;
inline constexpr double kRenewalZ = 3.0;
inline constexpr double kLearnerUTol = 1e-4;
inline constexpr double kAngleTol = 0.02;
inline constexpr double kFdTol = 1e-6;

inline constexpr std::uint64_t kSeed = 20240611;
inline constexpr std::size_t kEnvelopeSteps = 100000;
inline constexpr std::size_t kEnvelopeWindow = 10000;
// Irrational start: z0 = 1 lands exactly on the sign(0) = 0 fixed point
// when a = b = 0.5.
inline constexpr double kEnvelopeZ0 = 0.70710678118654752;

inline Vec grid_eta() { return {0.01, 0.1, 0.5}; }
inline Vec grid_mu() { return {1.0, 10.0, 100.0}; }
inline Vec grid_rho() { return {0.01, 0.1}; }
inline Vec grid_lambda_bar() { return {0.01, 1.0, 100.0}; }

// Sharp-well toy: isotropic metric u < 1 (metric damping), heavy-ball 0.9.
inline constexpr double kToyMetric = 0.5;
inline constexpr double kToyLr = 0.01;
inline constexpr double kToyRho = 1.0;
inline constexpr double kToyMomentum = 0.9;
inline constexpr std::size_t kToyHorizon = 20000;

inline OptimizerConfig toy_optimizer(Rule r) {
  OptimizerConfig c;
  c.rule = r;
  c.lr = kToyLr;
  c.rho = kToyRho;
  c.momentum = kToyMomentum;
  return c;
}

inline RegenerativeConfig selection_config(double sigma, std::uint64_t seed) {
  RegenerativeConfig rc;
  rc.wells = {{"flat", 0.5, 1e-9, 0.00125}, {"sharp", 0.5, 3.0, 0.00125}};
  rc.sigma = sigma;
  rc.metric = 4.0;
  rc.max_cycles = 4000;
  rc.max_steps_per_cycle = 2000000;
  rc.seed = seed;
  return rc;
}

inline OptimizerConfig selection_optimizer() {
  OptimizerConfig c;
  c.rule = Rule::llqr_sam;
  c.lr = 0.125;
  c.rho = 0.05;
  return c;
}

}  // namespace pinned

// ---------------------------------------------------------------------------
// Acceptance criteria

inline CheckResult check_two_cycle_grid(
    const std::function<double(const analysis::ScalarModeParams&)>& formula) {
  const auto cells = envelope_cells(pinned::grid_eta(), pinned::grid_mu(), pinned::grid_rho(),
                                    pinned::grid_lambda_bar());
  double worst = 0.0;
  for (const auto& p : cells)
    worst = std::max(worst, envelope_cell(p, pinned::kEnvelopeSteps, pinned::kEnvelopeWindow,
                                          pinned::kEnvelopeZ0, formula)
                                .abs_error);
  CheckResult r;
  r.measured = json{{"cells", cells.size()}, {"max_abs_error", worst}};
  r.tolerance = json{{"min_cells", 36}, {"max_abs_error", pinned::kTwoCycleTol}};
  r.passed = cells.size() >= 36 && worst <= pinned::kTwoCycleTol;
  return r;
}

inline CheckResult check_c1() {
  return check_two_cycle_grid(
      [](const analysis::ScalarModeParams& p) { return analysis::two_cycle_amplitude(p); });
}

inline CheckResult check_c2() {
  CheckResult r;
  json rows = json::array();
  bool ok = true;
  for (double le : {0.0, 1.0, 1e2, 1e4}) {
    const auto a = amplification_row(0.01, 0.1, 1.0, le, pinned::kEnvelopeSteps,
                                      pinned::kEnvelopeWindow, pinned::kEnvelopeZ0);
    const double scale_err = std::abs(a.scale_recovered - a.leading_scale) / a.leading_scale;
    const bool cell_ok = !a.llqr_diverged && !a.vanilla_diverged &&
                         a.llqr_abs_error <= pinned::kTwoCycleTol &&
                         scale_err <= pinned::kScaleRelTol &&
                         a.vanilla_abs_error <= pinned::kTwoCycleTol;
    ok = ok && cell_ok;
    rows.push_back(json{{"lambda_eps", le},
                        {"eta_mu", a.eta_mu},
                        {"llqr_sam_measured", a.llqr_diverged ? json("diverged") : json(a.llqr_measured)},
                        {"llqr_sam_predicted", a.llqr_predicted},
                        {"scale_rel_error", a.llqr_diverged ? json("diverged") : json(scale_err)},
                        {"sam_measured", a.vanilla_diverged ? json("diverged") : json(a.vanilla_measured)},
                        {"sam_predicted", a.vanilla_predicted},
                        {"pass", cell_ok}});
  }
  r.measured = json{{"cells", rows}};
  r.tolerance = json{{"abs_error", pinned::kTwoCycleTol}, {"scale_rel_error", pinned::kScaleRelTol}};
  r.passed = ok;
  r.note =
      "at lambda_eps = 1e4 and eta = 0.01, eta*mu = 100.01 puts the scalar map outside |a| < 1; "
      "both LLQR+SAM and SAM diverge, so no bounded two-cycle exists to match";
  return r;
}

inline CheckResult check_c3() {
  double worst = 0.0;
  const double lbs[] = {1.0, 0.04, 0.01};
  const double exact[] = {1.0, 5.0, 10.0};
  for (int i = 0; i < 3; ++i)
    for (double rho : {0.05, 0.1, 0.2, 1.0}) {
      const double ratio =
          analysis::hovering_envelope(rho, lbs[i]) / analysis::vanilla_envelope(rho);
      worst = std::max(worst, std::abs(ratio - analysis::amplification_ratio(lbs[i])) / exact[i]);
      worst = std::max(worst, std::abs(ratio - exact[i]) / exact[i]);
    }
  CheckResult r;
  r.measured = json{{"max_rel_error", worst}};
  r.tolerance = json{{"max_rel_error", pinned::kIdentityRelTol}};
  r.passed = worst <= pinned::kIdentityRelTol;
  return r;
}

inline std::vector<WhiteningRow> pinned_whitening_rows(double eta_scale, double rho) {
  std::vector<WhiteningRow> rows;
  for (std::size_t i = 0; i < 20; ++i)
    rows.push_back(whitening_row(pinned::kSeed, i, 2, 8, 100, eta_scale, rho));
  return rows;
}

inline CheckResult check_c4() {
  // Trajectories are compared free-running, so the run stays in the
  // contracting phase: once hovering, the normalized term amplifies 1-ulp
  // differences and the two recursions separate (reported, not gated).
  double worst = 0.0, min_comm = std::numeric_limits<double>::infinity();
  for (const auto& w : pinned_whitening_rows(0.25, 1e-3)) {
    worst = std::max(worst, w.whitening_max_dev);
    min_comm = std::min(min_comm, w.commutator);
  }
  double hovering = 0.0;
  for (const auto& w : pinned_whitening_rows(0.5, 0.1)) hovering = std::max(hovering, w.whitening_max_dev);
  CheckResult r;
  r.measured = json{{"instances", 20}, {"eta_scale", 0.25}, {"rho", 1e-3}, {"max_abs_dev", worst},
                    {"min_commutator", min_comm}, {"hovering_regime_dev_info", hovering}};
  r.tolerance = json{{"max_abs_dev", pinned::kWhiteningTol}};
  r.passed = worst <= pinned::kWhiteningTol && min_comm > 1e-10;
  return r;
}

inline CheckResult check_c5() {
  double worst = 0.0, traj = 0.0;
  for (const auto& w : pinned_whitening_rows(0.5, 0.1)) {
    worst = std::max(worst, w.optimizer_max_step_dev);
    traj = std::max(traj, w.optimizer_max_traj_dev);
  }
  CheckResult r;
  r.measured = json{{"instances", 20}, {"max_step_dev", worst}, {"max_trajectory_dev", traj}};
  r.tolerance = json{{"max_step_dev", pinned::kOptimizerTol}};
  r.passed = worst <= pinned::kOptimizerTol;
  return r;
}

inline TrajectoryRecord toy_run(Rule rule, Vec start, double variance, std::uint64_t seed,
                                std::size_t horizon = pinned::kToyHorizon) {
  static const SharpWell2D well;
  const MetricState u = MetricState::diagonal({pinned::kToyMetric, pinned::kToyMetric});
  TrajectoryOptions o;
  o.horizon = horizon;
  o.stride = horizon;
  o.classify = [](std::span<const double> th) { return well.region(th); };
  o.exit_from = Region::sharp;
  return run_noisy_trajectory(well, pinned::toy_optimizer(rule), u, std::move(start),
                              NoiseSchedule{seed, variance, 2}, o);
}

inline CheckResult check_c6() {
  CheckResult r;
  bool ok = true;
  json finals = json::object();
  const std::pair<Rule, Region> expect[] = {{Rule::sgdm, Region::sharp},
                                            {Rule::llqr, Region::sharp},
                                            {Rule::sam, Region::flat},
                                            {Rule::llqr_sam, Region::flat}};
  for (const auto& [rule, want] : expect) {
    const auto rec = toy_run(rule, {4.7, 0.3}, 0.0, 0);
    finals[to_string(rule)] = to_string(rec.final_region);
    ok = ok && rec.final_region == want;
  }
  r.measured = json{{"final_region", finals}};
  r.tolerance = json{{"expected", {{"sgdm", "sharp"}, {"llqr", "sharp"}, {"sam", "flat"}, {"llqr_sam", "flat"}}}};
  r.passed = ok;
  return r;
}

inline CheckResult check_c7() {
  static const SharpWell2D well;
  CheckResult r;
  bool ok = true;
  json rows = json::array();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto sam = toy_run(Rule::sam, {well.ring_minimum_radius(), 0.0}, 1e-9, seed);
    const auto ls = toy_run(Rule::llqr_sam, {well.ring_minimum_radius(), 0.0}, 1e-9, seed);
    const bool row_ok = sam.final_region == Region::flat && ls.final_region == Region::flat &&
                        ls.path_length < sam.path_length && sam.noise_hash == ls.noise_hash;
    ok = ok && row_ok;
    rows.push_back(json{{"seed", seed},
                        {"sam_region", to_string(sam.final_region)},
                        {"llqr_sam_region", to_string(ls.final_region)},
                        {"sam_path", sam.path_length},
                        {"llqr_sam_path", ls.path_length},
                        {"shared_schedule", sam.noise_hash == ls.noise_hash}});
  }
  r.measured = json{{"seeds", rows}};
  r.tolerance = json{{"variance", 1e-9}, {"requirement", "both flat, llqr_sam_path < sam_path"}};
  r.passed = ok;
  return r;
}

inline CheckResult check_c8() {
  CheckResult r;
  bool ok = true;
  json rows = json::array();
  double prev_v = std::numeric_limits<double>::infinity(), prev_m = prev_v;
  double prev_tv = prev_v, prev_tm = prev_v;
  const Vec ds{0.5, 1.0, 2.0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const analysis::Ar1Params p{0.1, 1.0, ds[i], 1.0};
    const auto th = analysis::ar1_stationary_stats(p);
    const auto em = ar1_simulate(p, 1000000, hash_key(pinned::kSeed, 9, i));
    const double ev = std::abs(em.variance / th.variance - 1.0);
    const double emo = std::abs(em.one_step_motion / th.one_step_motion - 1.0);
    ok = ok && ev <= pinned::kAr1RelTol && emo <= pinned::kAr1RelTol && em.variance < prev_v &&
         em.one_step_motion < prev_m && th.variance < prev_tv && th.one_step_motion < prev_tm;
    prev_v = em.variance;
    prev_m = em.one_step_motion;
    prev_tv = th.variance;
    prev_tm = th.one_step_motion;
    rows.push_back(json{{"d", ds[i]},
                        {"variance_rel_error", ev},
                        {"motion_rel_error", emo},
                        {"variance", em.variance},
                        {"motion", em.one_step_motion}});
  }
  r.measured = json{{"grid", rows}};
  r.tolerance = json{{"rel_error", pinned::kAr1RelTol}, {"monotone_in_d", true}};
  r.passed = ok;
  return r;
}

inline CheckResult check_c9() {
  CheckResult r;
  bool ok = true;
  json rows = json::array();
  double prev = std::numeric_limits<double>::infinity();
  const Vec sig{1e-2, 1e-3, 1e-4};
  const Vec nu{0.5, 0.5};
  for (std::size_t i = 0; i < sig.size(); ++i) {
    const auto st = regenerative_simulate(pinned::selection_config(sig[i], hash_key(pinned::kSeed, 3, i)),
                                          pinned::selection_optimizer());
    const auto chk = renewal_check(st, nu);
    const double occ = st.wells[1].occupancy;
    ok = ok && occ < prev && chk.max_z <= pinned::kRenewalZ && st.censored_cycles == 0;
    prev = occ;
    rows.push_back(json{{"sigma", sig[i]},
                        {"sharp_occupancy", occ},
                        {"predicted", chk.predicted[1]},
                        {"standard_error", chk.standard_error[1]},
                        {"max_z", chk.max_z},
                        {"flat_mean_exit", st.wells[0].mean_exit_time},
                        {"sharp_mean_exit", st.wells[1].mean_exit_time},
                        {"censored", st.censored_cycles}});
  }
  r.measured = json{{"sweep", rows}};
  r.tolerance = json{{"max_z", pinned::kRenewalZ}, {"monotone_decreasing", true}};
  r.passed = ok;
  return r;
}

inline CheckResult check_c10() {
  const auto s = scalar_learner_oracle();
  const auto d = dense_learner_oracle(pinned::kSeed);
  CheckResult r;
  r.measured = json{{"scalar_learned_u", s.learned_u},
                    {"scalar_abs_error", s.abs_error},
                    {"theta_after_unit_step", s.theta_after_step},
                    {"dense_angle_over_pi", d.angle_fraction},
                    {"dense_clamped", d.clamped}};
  r.tolerance = json{{"scalar_abs_error", pinned::kLearnerUTol},
                     {"theta_after_unit_step", 4.0 * pinned::kLearnerUTol},
                     {"dense_angle_over_pi", pinned::kAngleTol}};
  r.passed = s.accepted && d.accepted && s.abs_error <= pinned::kLearnerUTol &&
             std::abs(s.theta_after_step) <= 4.0 * pinned::kLearnerUTol &&
             d.angle_fraction <= pinned::kAngleTol;
  return r;
}

/// Random tanh net with 1-3 layers and widths 1-4.
inline LayeredNet random_net(CounterRng& rng, LossKind loss) {
  const std::size_t depth = 1 + static_cast<std::size_t>(rng.uniform() * 3.0) % 3;
  std::vector<LayerSpec> layers;
  std::size_t in = 1 + static_cast<std::size_t>(rng.uniform() * 4.0) % 4;
  Vec x(in);
  for (double& v : x) v = rng.normal();
  for (std::size_t i = 0; i < depth; ++i) {
    std::size_t out = 1 + static_cast<std::size_t>(rng.uniform() * 4.0) % 4;
    if (loss == LossKind::softmax_cross_entropy && i + 1 == depth && out < 2) out = 2;
    layers.push_back({in, out, rng.uniform() < 0.7 ? Activation::tanh : Activation::identity,
                      rng.uniform() < 0.5});
    in = out;
  }
  Vec y(in);
  if (loss == LossKind::squared) {
    for (double& v : y) v = rng.normal();
  } else {
    double s = 0.0;
    for (double& v : y) s += (v = rng.uniform());
    for (double& v : y) v /= s;
  }
  return LayeredNet(layers, x, y, loss);
}

inline MetricState random_metric(CounterRng& rng, const LayeredNet& net, int kind) {
  MetricState u;
  if (kind == 0) {
    Vec d(net.dim());
    for (double& v : d) v = rng.uniform(0.2, 2.0);
    u = MetricState::diagonal(d);
  } else {
    u = MetricState::layer_blocks(net, kind == 1 ? BlockKind::dense : BlockKind::kronecker);
    Vec p = u.params();
    for (double& v : p) v += 0.2 * rng.normal();
    u = u.with_params(p);
  }
  return u;
}

inline CheckResult check_c11() {
  const std::size_t cases = 50;
  double w_quad = 0.0, w_well = 0.0, w_net = 0.0, w_ce = 0.0, w_relaxed = 0.0;
  CounterRng rng(pinned::kSeed, 11);
  for (std::size_t c = 0; c < cases; ++c) {
    {
      const std::size_t dim = 2 + c % 5;
      const auto q = TwoScaleQuadratic::random(dim, rng, c % 2 == 0);
      Vec th(dim);
      for (double& v : th) v = rng.normal();
      w_quad = std::max(w_quad, fd_relative_error([&](std::span<const double> x) { return q.evaluate(x).loss; },
                                                  th, q.evaluate(th).grad));
    }
    {
      static const SharpWell2D well;
      const double r = rng.uniform(0.5, 7.0), phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const Vec th{r * std::cos(phi), r * std::sin(phi)};
      w_well = std::max(w_well, fd_relative_error([&](std::span<const double> x) { return well.evaluate(x).loss; },
                                                  th, well.evaluate(th).grad));
    }
    for (LossKind lk : {LossKind::squared, LossKind::softmax_cross_entropy}) {
      const auto net = random_net(rng, lk);
      const Vec th = net.random_parameters(rng);
      const double e = fd_relative_error([&](std::span<const double> x) { return net.evaluate(x).loss; },
                                         th, net.evaluate(th).grad);
      (lk == LossKind::squared ? w_net : w_ce) = std::max(lk == LossKind::squared ? w_net : w_ce, e);
    }
    {
      const auto net = random_net(rng, c % 3 == 0 ? LossKind::softmax_cross_entropy : LossKind::squared);
      const Vec th = net.random_parameters(rng);
      const auto lin = linearize(net, th);
      const auto blocks = form_lqr_blocks(lin, net, c % 2 ? Divergence::newton : Divergence::ngd, 1e-3);
      const MetricState u = random_metric(rng, net, static_cast<int>(c % 3));
      const Vec& g = lin.point.grad;
      const Vec grad = relaxed_objective_grad(u, blocks, lin, net, g);
      w_relaxed = std::max(
          w_relaxed, fd_relative_error(
                         [&](std::span<const double> p) {
                           return relaxed_objective(u.with_params(p), blocks, lin, net, g);
                         },
                         u.params(), grad));
    }
  }
  CheckResult r;
  r.measured = json{{"cases_per_family", cases},
                    {"two_scale_quadratic", w_quad},
                    {"sharp_well", w_well},
                    {"net_squared", w_net},
                    {"net_cross_entropy", w_ce},
                    {"relaxed_objective", w_relaxed}};
  r.tolerance = json{{"max_rel_error", pinned::kFdTol}, {"fd_step", 1e-5}};
  r.passed = std::max({w_quad, w_well, w_net, w_ce, w_relaxed}) <= pinned::kFdTol;
  return r;
}

// ---------------------------------------------------------------------------
// Property suites

inline CheckResult prop_numkit() {
  CounterRng rng(pinned::kSeed, 21);
  double recon = 0.0, ortho = 0.0, comm = 0.0, min_quad = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < 30; ++c) {
    const std::size_t n = 1 + c % 16;
    Vec spec(n);
    for (double& v : spec) v = std::pow(10.0, rng.uniform(-2.0, 2.0));
    const SymMatrix m = from_spectrum(random_orthogonal(n, rng), spec);
    const auto e = sym_eig(m);
    recon = std::max(recon, (e.reconstruct() - m).frobenius() / m.frobenius());
    ortho = std::max(ortho, (matmul(e.vectors.transposed(), e.vectors) - Matrix::identity(n)).frobenius());
    const SymMatrix w = spd_inv_sqrt(m);
    comm = std::max(comm, (matmul(w.matrix(), m.matrix()) - matmul(m.matrix(), w.matrix())).frobenius() /
                              m.frobenius());
    Vec v(n);
    for (double& x : v) x = rng.normal();
    min_quad = std::min(min_quad, quad_form(v, m));
  }
  CheckResult r;
  r.measured = json{{"reconstruction", recon}, {"orthonormality", ortho}, {"commutator", comm},
                    {"min_quad_form", min_quad}};
  r.tolerance = json{{"reconstruction", 1e-10}, {"orthonormality", 1e-10}, {"commutator", 1e-9}};
  r.passed = recon <= 1e-10 && ortho <= 1e-10 && comm <= 1e-9 && min_quad > 0.0;
  return r;
}

inline CheckResult prop_landscapes() {
  CounterRng rng(pinned::kSeed, 22);
  double mu_dev = 0.0, rot_dev = 0.0;
  for (std::size_t c = 0; c < 10; ++c) {
    const std::size_t n = 2 + c % 5;
    Vec spec(n);
    for (double& v : spec) v = std::pow(10.0, rng.uniform(-2.0, 1.0));
    const TwoScaleQuadratic q(from_spectrum(random_orthogonal(n, rng), spec),
                              SymMatrix(Matrix(n, n)));
    for (double mu : q.perceived_sharpness()) mu_dev = std::max(mu_dev, std::abs(mu - 1.0));
  }
  const SharpWell2D well;
  for (std::size_t c = 0; c < 100; ++c) {
    const Vec th{rng.uniform(-7.0, 7.0), rng.uniform(-7.0, 7.0)};
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec rt{std::cos(a) * th[0] - std::sin(a) * th[1], std::sin(a) * th[0] + std::cos(a) * th[1]};
    rot_dev = std::max(rot_dev, std::abs(well.evaluate(th).loss - well.evaluate(rt).loss));
  }
  // Second-order linearization error: ratio under halving of delta theta.
  CounterRng nrng(pinned::kSeed, 23);
  const LayeredNet net({{3, 4, Activation::tanh, true}, {4, 2, Activation::tanh, true}},
                       {0.5, -1.0, 0.25}, {0.1, 0.2});
  const Vec th = net.random_parameters(nrng);
  const auto lin = linearize(net, th);
  Vec dir(net.dim());
  for (double& v : dir) v = nrng.normal() * 1e-2;
  auto lin_err = [&](double s) {
    const Vec d = scaled(s, dir);
    const Vec pert = axpy(1.0, d, th);
    const Vec actual = subtract(net.output(pert), net.output(th));
    return norm2(subtract(actual, lin.rollout(net.split(d))));
  };
  const double ratio = lin_err(1.0) / lin_err(0.5);
  CheckResult r;
  r.measured = json{{"zero_sharp_mu_dev", mu_dev}, {"rotation_dev", rot_dev},
                    {"linearization_halving_ratio", ratio},
                    {"ring_minimum_radius", well.ring_minimum_radius()},
                    {"basin_radius", well.basin_radius()}};
  r.tolerance = json{{"zero_sharp_mu_dev", 1e-10}, {"rotation_dev", 1e-12},
                     {"linearization_halving_ratio", json::array({3.5, 4.5})}};
  r.passed = mu_dev <= 1e-10 && rot_dev <= 1e-12 && ratio > 3.5 && ratio < 4.5;
  return r;
}

inline CheckResult prop_metric() {
  CounterRng rng(pinned::kSeed, 24);
  // Frozen contract and Newton-step property.
  bool frozen = true;
  double newton = 0.0;
  for (std::size_t c = 0; c < 10; ++c) {
    const std::size_t n = 2 + c % 5;
    Vec spec(n);
    for (double& v : spec) v = std::pow(10.0, rng.uniform(-2.0, 1.0));
    const TwoScaleQuadratic q(from_spectrum(random_orthogonal(n, rng), spec), SymMatrix(Matrix(n, n)));
    const MetricState u = MetricState::dense(q.average_inverse());
    Vec th(n);
    for (double& v : th) v = rng.normal();
    const Vec g = q.evaluate(th).grad;
    frozen = frozen && u.apply(g) == u.apply(g) && u.dual_norm(g) == u.dual_norm(g);
    OptimizerConfig cfg;
    cfg.rule = Rule::llqr;
    cfg.lr = 1.0;
    OptimizerState st;
    step(cfg, st, u, q, th);
    newton = std::max(newton, norm2(th));
  }
  // Refreshes on random nets stay within bounds and never increase J.
  bool bounded = true, descent = true;
  for (std::size_t c = 0; c < 9; ++c) {
    const auto net = random_net(rng, LossKind::squared);
    const Vec th = net.random_parameters(rng);
    MetricState u = c % 3 == 0 ? MetricState::diagonal(Vec(net.dim(), 1.0))
                               : MetricState::layer_blocks(net, c % 3 == 1 ? BlockKind::dense : BlockKind::kronecker);
    InnerSolverConfig inner;
    const auto rep = learn_preconditioner(u, net, th, c % 2 ? Divergence::newton : Divergence::ngd, inner);
    bounded = bounded && rep.state.within_bounds();
    descent = descent && rep.objective_end <= rep.objective_start;
  }
  CheckResult r;
  r.measured = json{{"frozen_bit_identical", frozen}, {"newton_step_residual", newton},
                    {"refresh_within_bounds", bounded}, {"refresh_descent", descent}};
  r.tolerance = json{{"newton_step_residual", 1e-10}};
  r.passed = frozen && newton <= 1e-10 && bounded && descent;
  return r;
}

inline CheckResult prop_optimizers() {
  CounterRng rng(pinned::kSeed, 25);
  // Eigendirection reduction on a commuting instance. The two-cycle on mode i
  // is transversally unstable toward modes with larger mu (linearized factor
  // 1 - eta mu_j - (mu_j/mu_i)^2 (2 - eta mu_i)), so rounding in v_i grows
  // there; on the top-mu mode every factor lies in (-1, 1).
  double off = 0.0, scalar_dev = 0.0;
  for (std::size_t c = 0; c < 5; ++c) {
    const std::size_t n = 3 + c % 3;
    const auto q = TwoScaleQuadratic::random(n, rng, true);
    const auto eig = sym_eig(q.hbar());
    std::size_t i = 0;
    double mu = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double m = quad_form(eig.vector(k), q.hessian()) / eig.values[k];
      if (m > mu) {
        mu = m;
        i = k;
      }
    }
    const Vec v = eig.vector(i);
    analysis::ScalarModeParams sp{0.5 / mu, mu, 0.1, eig.values[i]};
    const MetricState u = MetricState::dense(q.average_inverse());
    OptimizerConfig cfg;
    cfg.rule = Rule::llqr_sam;
    cfg.lr = sp.eta;
    cfg.rho = sp.rho;
    OptimizerState st;
    Vec th = v;
    for (int t = 0; t < 100; ++t) {
      const double z = dot(th, v);
      step(cfg, st, u, q, th);
      const double zi = dot(th, v);
      scalar_dev = std::max(scalar_dev, std::abs(zi - (sp.a() * z - sp.b() * analysis::sign(z))));
      off = std::max(off, norm2(axpy(-zi, v, th)));
    }
  }
  // rho-continuity: deviation from the rho = 0 trajectory scales with rho.
  const auto q = TwoScaleQuadratic::rotated(Vec{1.0, 0.1, 0.01}, Vec{0.0, 2.0, 0.5}, 0.4);
  const MetricState u = MetricState::dense(q.average_inverse());
  auto deviation = [&](double rho) {
    OptimizerConfig a;
    a.rule = Rule::llqr_sam;
    a.lr = 0.05;
    a.rho = rho;
    OptimizerConfig b = a;
    b.rho = 0.0;
    OptimizerState sa, sb;
    Vec ta{1.0, -0.5, 0.3}, tb = ta;
    double d = 0.0;
    for (int t = 0; t < 50; ++t) {
      step(a, sa, u, q, ta);
      step(b, sb, u, q, tb);
      d = std::max(d, norm2(subtract(ta, tb)));
    }
    return d;
  };
  const double ratio = deviation(1e-3) / deviation(1e-6);
  // Perturbation-sphere property under random dense metrics.
  double sphere = 0.0;
  for (std::size_t c = 0; c < 20; ++c) {
    const std::size_t n = 2 + c % 6;
    Vec spec(n);
    for (double& v : spec) v = std::pow(10.0, rng.uniform(-1.0, 1.0));
    const SymMatrix m = from_spectrum(random_orthogonal(n, rng), spec);
    Vec g(n);
    for (double& v : g) v = rng.normal();
    const double rho = rng.uniform(0.01, 1.0);
    const Vec eps = sam_perturbation(g, MetricState::dense(m), rho);
    sphere = std::max(sphere, std::abs(quad_form(eps, spd_inverse(m)) / (rho * rho) - 1.0));
  }
  CheckResult r;
  r.measured = json{{"off_direction", off}, {"scalar_recursion_dev", scalar_dev},
                    {"rho_scaling_ratio", ratio}, {"sphere_rel_error", sphere}};
  r.tolerance = json{{"off_direction", 1e-12}, {"scalar_recursion_dev", 1e-12},
                     {"rho_scaling_ratio", json::array({900.0, 1100.0})}, {"sphere_rel_error", 1e-10}};
  r.passed = off <= 1e-12 && scalar_dev <= 1e-12 && ratio > 900.0 && ratio < 1100.0 && sphere <= 1e-10;
  return r;
}

inline CheckResult prop_analysis() {
  // Envelope bound and (1+a)/(1-a) tightness over the criterion-1 grid.
  const auto cells = envelope_cells(pinned::grid_eta(), pinned::grid_mu(), pinned::grid_rho(),
                                    pinned::grid_lambda_bar());
  bool bounded = true;
  double tight = 0.0;
  for (const auto& p : cells) {
    const double m = analysis::scalar_map_limsup(p, pinned::kEnvelopeZ0, pinned::kEnvelopeSteps, pinned::kEnvelopeWindow);
    const double env = analysis::hovering_envelope(p.rho, p.lambda_bar);
    bounded = bounded && m <= env * (1.0 + 1e-12);
    if (env > 0.0) tight = std::max(tight, std::abs(m * (1.0 + p.a()) / (1.0 - p.a()) - env) / env);
  }
  // Escape predicate ignores the localized sharpness.
  bool invariant = true;
  for (double rho : {0.0, 0.01, 0.1, 1.0})
    for (double lb : {0.01, 0.25, 1.0})
      for (double re : {0.05, 0.5, 2.0}) {
        const bool ref = analysis::escape_predicate(rho, {lb, 0.0, re});
        for (double le = 1e-3; le <= 1e3; le *= 10.0)
          invariant = invariant && analysis::escape_predicate(rho, {lb, le, re}) == ref;
      }
  // AR(1) closed forms decrease in d.
  bool monotone = true;
  for (double eta : {0.01, 0.1})
    for (double lam : {0.5, 1.0, 4.0}) {
      double pv = std::numeric_limits<double>::infinity(), pm = pv;
      for (double d = 1.0; d <= 64.0; d *= 2.0) {
        const auto s = analysis::ar1_stationary_stats({eta, lam, d, 1.0});
        monotone = monotone && s.variance < pv && s.one_step_motion < pm;
        pv = s.variance;
        pm = s.one_step_motion;
      }
    }
  CheckResult r;
  r.measured = json{{"limsup_below_envelope", bounded}, {"tightness_rel_error", tight},
                    {"escape_invariant_to_lambda_eps", invariant}, {"ar1_monotone_in_d", monotone}};
  r.tolerance = json{{"tightness_rel_error", pinned::kScaleRelTol}};
  r.passed = bounded && tight <= pinned::kScaleRelTol && invariant && monotone;
  return r;
}

inline CheckResult prop_stochsim() {
  // Noise statistics.
  const NoiseSchedule s{pinned::kSeed, 1.0, 1};
  double sum = 0.0, sum2 = 0.0;
  const std::size_t n = 1000000;
  for (std::size_t t = 0; t < n; ++t) {
    const double x = s.at(t)[0];
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  // Shared schedule and reproducibility.
  const SharpWell2D well;
  const Vec start{well.ring_minimum_radius(), 0.0};
  const auto a = toy_run(Rule::sam, start, 1e-9, 3, 2000);
  const auto b = toy_run(Rule::llqr_sam, start, 1e-9, 3, 2000);
  const auto a2 = toy_run(Rule::sam, start, 1e-9, 3, 2000);
  bool repro = a.rows.size() == a2.rows.size() && a.final_theta == a2.final_theta &&
               a.path_length == a2.path_length;
  for (std::size_t i = 0; repro && i < a.rows.size(); ++i)
    repro = a.rows[i].theta == a2.rows[i].theta && a.rows[i].loss == a2.rows[i].loss;
  // Flat-basin stability: start inside the flat basin with small noise.
  const MetricState u = MetricState::diagonal({pinned::kToyMetric, pinned::kToyMetric});
  TrajectoryOptions o;
  o.horizon = 20000;
  o.stride = 1;
  o.classify = [&](std::span<const double> th) { return well.region(th); };
  const auto flat = run_noisy_trajectory(well, pinned::toy_optimizer(Rule::llqr_sam), u, Vec{1.0, 0.5},
                                         NoiseSchedule{7, 1e-9, 2}, o);
  std::size_t in_flat = 0;
  for (const auto& row : flat.rows) in_flat += row.region == Region::flat;
  const double flat_frac = static_cast<double>(in_flat) / static_cast<double>(flat.rows.size());
  // Sharp-well exit time stays bounded as the noise vanishes.
  json exits = json::array();
  bool bounded = true;
  double prev = 0.0;
  for (double sig : {1e-3, 1e-4, 1e-5}) {
    RegenerativeConfig rc = pinned::selection_config(sig, 5);
    rc.wells = {{"sharp", 1.0, 3.0, 0.00125}};
    rc.max_cycles = 500;
    const auto st = regenerative_simulate(rc, pinned::selection_optimizer());
    const double m = st.wells[0].mean_exit_time;
    exits.push_back(m);
    bounded = bounded && m <= 2.0 && (prev == 0.0 || m <= prev * 1.01);
    prev = m;
  }
  CheckResult r;
  r.measured = json{{"noise_mean", mean}, {"noise_variance", var},
                    {"shared_schedule", a.noise_hash == b.noise_hash}, {"reproducible", repro},
                    {"flat_occupancy", flat_frac}, {"sharp_mean_exit_times", exits}};
  r.tolerance = json{{"noise_mean", 4e-3}, {"noise_variance", 0.01}, {"flat_occupancy", 0.99},
                     {"sharp_mean_exit_max", 2.0}};
  r.passed = std::abs(mean) <= 4e-3 && std::abs(var - 1.0) <= 0.01 && a.noise_hash == b.noise_hash &&
             repro && flat_frac > 0.99 && bounded;
  return r;
}

inline CheckResult prop_harness() {
  // A corrupted two-cycle formula must be caught by the envelope check.
  const auto mutated = check_two_cycle_grid(
      [](const analysis::ScalarModeParams& p) { return p.b() / (1.0 - p.a() + 1e-300); });
  bool rejected = false;
  try {
    config_from_json(json{{"experiment", "escape-toy"}, {"seed", 1}, {"variants", json::array()}});
  } catch (const ConfigError&) {
    rejected = true;
  }
  bool unknown = false;
  try {
    config_from_json(json{{"experiment", "no-such-thing"}, {"seed", 1}});
  } catch (const ConfigError&) {
    unknown = true;
  }
  CheckResult r;
  r.measured = json{{"mutated_formula_detected", !mutated.passed},
                    {"empty_variants_rejected", rejected},
                    {"unknown_experiment_rejected", unknown}};
  r.passed = !mutated.passed && rejected && unknown;
  return r;
}

// ---------------------------------------------------------------------------

inline std::vector<CheckSpec> acceptance_checks() {
  return {
      {"two-cycle-exactness", 1, "scalar map limsup equals the exact two-cycle amplitude", 10.0, false, check_c1},
      {"sharpness-cancellation", 2, "LLQR+SAM envelope vs prediction across lambda_eps; SAM tracks its own two-cycle", 10.0, true, check_c2},
      {"amplification-identity", 3, "hovering/vanilla envelope ratio equals lambda_bar^{-1/2}", 0.0, false, check_c3},
      {"whitening-equivalence", 4, "unwhitened recursion matches the direct recursion", 5.0, false, check_c4},
      {"optimizer-recursion", 5, "LLQR+SAM step reproduces the matrix recursion", 0.0, false, check_c5},
      {"sharp-well-escape", 6, "non-SAM variants trapped, SAM variants reach the flat basin", 5.0, false, check_c6},
      {"noisy-path-length", 7, "shared schedule: both SAM variants escape, LLQR+SAM path shorter", 30.0, false, check_c7},
      {"ar1-damping", 8, "AR(1) stationary variance and motion vs closed form", 10.0, false, check_c8},
      {"selection-decay", 9, "sharp occupancy decays with sigma and matches renewal-reward", 60.0, false, check_c9},
      {"learner-oracle", 10, "learned U matches H^{-1}; dense blocks match damped Gauss-Newton", 10.0, false, check_c10},
      {"gradient-correctness", 11, "analytic gradients vs central differences", 0.0, false, check_c11},
  };
}

inline std::vector<CheckSpec> property_checks() {
  return {
      {"numkit-properties", 0, "eigendecomposition, inverse square root, quadratic form", 0.0, false, prop_numkit},
      {"landscape-properties", 0, "zero-sharpness mu, rotation invariance, linearization order", 0.0, false, prop_landscapes},
      {"metric-properties", 0, "frozen contract, Newton step, refresh bounds and descent", 0.0, false, prop_metric},
      {"optimizer-properties", 0, "eigendirection reduction, rho-continuity, metric sphere", 0.0, false, prop_optimizers},
      {"analysis-properties", 0, "envelope bound, escape invariance, AR(1) monotonicity", 0.0, false, prop_analysis},
      {"stochsim-properties", 0, "noise statistics, shared schedule, reproducibility, well stability", 0.0, false, prop_stochsim},
      {"harness-properties", 0, "mutation sensitivity and config rejection", 0.0, false, prop_harness},
  };
}

inline std::vector<CheckSpec> all_checks() {
  auto v = acceptance_checks();
  for (auto& p : property_checks()) v.push_back(std::move(p));
  return v;
}

// ---------------------------------------------------------------------------
// Reports

/// Deterministic report: verdicts, measurements, tolerances. No runtimes.
inline json report_json(const std::vector<CheckOutcome>& outcomes) {
  json checks = json::array();
  std::size_t passed = 0, failed = 0, known = 0;
  for (const auto& o : outcomes) {
    json c{{"id", o.spec->id}};
    if (o.spec->criterion) c["criterion"] = o.spec->criterion;
    c["title"] = o.spec->title;
    c["status"] = o.result.passed ? "pass" : "fail";
    if (o.spec->known_unattainable) c["known_unattainable"] = true;
    c["measured"] = o.result.measured;
    c["tolerance"] = o.result.tolerance;
    if (o.spec->budget_s > 0.0) c["runtime_budget_s"] = o.spec->budget_s;
    c["runtime_file"] = "timings.json";
    if (!o.result.note.empty()) c["note"] = o.result.note;
    checks.push_back(c);
    if (o.result.passed) ++passed;
    else if (o.spec->known_unattainable) ++known;
    else ++failed;
  }
  return json{{"tool_version", kToolVersion},
              {"checks", checks},
              {"summary", {{"passed", passed}, {"failed", failed}, {"known_unattainable_failed", known}}},
              {"overall", failed == 0 ? "pass" : "fail"}};
}

/// Per-check wall-clock runtimes (not deterministic, kept separate).
inline json timings_json(const std::vector<CheckOutcome>& outcomes) {
  json t = json::array();
  for (const auto& o : outcomes) {
    json c{{"id", o.spec->id}, {"runtime_s", o.runtime_s}};
    if (o.spec->budget_s > 0.0) {
      c["budget_s"] = o.spec->budget_s;
      c["within_budget"] = o.within_budget();
    }
    t.push_back(c);
  }
  return json{{"timings", t}};
}

inline bool overall_pass(const std::vector<CheckOutcome>& outcomes) {
  for (const auto& o : outcomes)
    if (!o.result.passed && !o.spec->known_unattainable) return false;
  return true;
}

inline std::vector<CheckOutcome> run_checks(const std::vector<CheckSpec>& specs, std::size_t jobs) {
  std::vector<CheckOutcome> out(specs.size());
  parallel_for(specs.size(), jobs, [&](std::size_t i) { out[i] = run_check(specs[i]); });
  return out;
}

}  // namespace llqrsam::harness
