#pragma once

// Computational cores shared by `run` and `verify`. Each returns plain
// result rows; emission and pass/fail judgement live elsewhere.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "llqrsam/analysis.hpp"
#include "llqrsam/landscapes.hpp"
#include "llqrsam/metric.hpp"
#include "llqrsam/optimizers.hpp"
#include "llqrsam/random.hpp"
#include "llqrsam/stochsim.hpp"

namespace llqrsam::harness {

/// fn(i) for i in [0, n) on up to `jobs` threads. Results must be written to
/// per-index slots; the first exception by index is rethrown.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Scalar envelope grid

struct EnvelopeCell {
  analysis::ScalarModeParams p;
  double measured = 0.0;
  double predicted = 0.0;
  double abs_error = 0.0;
};

/// The analysis regime: a = 1 - eta*mu in [0, 1).
inline bool envelope_stable(const analysis::ScalarModeParams& p) {
  return p.a() >= 0.0 && p.a() < 1.0;
}

inline std::vector<analysis::ScalarModeParams> envelope_cells(const Vec& eta, const Vec& mu,
                                                              const Vec& rho, const Vec& lb) {
  std::vector<analysis::ScalarModeParams> out;
  for (double e : eta)
    for (double m : mu)
      for (double r : rho)
        for (double l : lb) {
          analysis::ScalarModeParams p{e, m, r, l};
          if (envelope_stable(p)) out.push_back(p);
        }
  return out;
}

template <class Formula>
EnvelopeCell envelope_cell(const analysis::ScalarModeParams& p, std::size_t steps,
                           std::size_t window, double z0, Formula&& formula) {
  EnvelopeCell c;
  c.p = p;
  c.measured = analysis::scalar_map_limsup(p, z0, steps, window);
  c.predicted = formula(p);
  c.abs_error = std::abs(c.measured - c.predicted);
  return c;
}

inline EnvelopeCell envelope_cell(const analysis::ScalarModeParams& p, std::size_t steps,
                                  std::size_t window, double z0) {
  return envelope_cell(p, steps, window, z0,
                       [](const analysis::ScalarModeParams& q) { return analysis::two_cycle_amplitude(q); });
}

// ---------------------------------------------------------------------------
// Amplification sweep: real optimizer runs on a 1-D two-scale quadratic

struct AmplificationRow {
  double lambda_eps = 0.0;
  double mu = 1.0;
  double eta_mu = 0.0;
  double llqr_measured = 0.0;
  double llqr_predicted = 0.0;
  double llqr_abs_error = 0.0;
  double leading_scale = 0.0;     // rho / sqrt(lambda_bar)
  double scale_recovered = 0.0;   // measured * (2 - eta mu) / (eta mu)
  double vanilla_measured = 0.0;
  double vanilla_predicted = 0.0;
  double vanilla_abs_error = 0.0;
  double amplification = 0.0;     // lambda_bar^{-1/2}
  bool llqr_diverged = false;
  bool vanilla_diverged = false;
};

/// max |theta_t| over the trailing window, or +inf if the run diverges.
inline double optimizer_limsup(const OptimizerConfig& cfg, const MetricState& u,
                               const TwoScaleQuadratic& q, double z0, std::size_t steps,
                               std::size_t window, bool& diverged) {
  OptimizerState st = OptimizerState::zeros(1);
  Vec theta{z0};
  double m = 0.0;
  diverged = false;
  try {
    for (std::size_t t = 1; t <= steps; ++t) {
      step(cfg, st, u, q, theta);
      if (t > steps - window) m = std::max(m, std::abs(theta[0]));
    }
  } catch (const StepAborted&) {
    diverged = true;
    return std::numeric_limits<double>::infinity();
  }
  return m;
}

inline AmplificationRow amplification_row(double eta, double rho, double lambda_bar,
                                          double lambda_eps, std::size_t steps,
                                          std::size_t window, double z0) {
  AmplificationRow r;
  r.lambda_eps = lambda_eps;
  const double lambda = lambda_bar + lambda_eps;
  r.mu = lambda / lambda_bar;
  r.eta_mu = eta * r.mu;
  const auto q = TwoScaleQuadratic::commuting(Vec{lambda_bar}, Vec{lambda_eps});

  OptimizerConfig llqr;
  llqr.rule = Rule::llqr_sam;
  llqr.lr = eta;
  llqr.rho = rho;
  const MetricState u = MetricState::diagonal({1.0 / lambda_bar});
  r.llqr_measured = optimizer_limsup(llqr, u, q, z0, steps, window, r.llqr_diverged);
  r.llqr_predicted = analysis::two_cycle_formula({eta, r.mu, rho, lambda_bar});
  r.llqr_abs_error = std::abs(r.llqr_measured - r.llqr_predicted);
  r.leading_scale = analysis::hovering_envelope(rho, lambda_bar);
  r.scale_recovered = r.llqr_measured * (2.0 - r.eta_mu) / r.eta_mu;

  OptimizerConfig sam = llqr;
  sam.rule = Rule::sam;
  r.vanilla_measured =
      optimizer_limsup(sam, MetricState::identity(1), q, z0, steps, window, r.vanilla_diverged);
  r.vanilla_predicted = analysis::vanilla_two_cycle(eta, rho, lambda);
  r.vanilla_abs_error = std::abs(r.vanilla_measured - r.vanilla_predicted);
  r.amplification = analysis::amplification_ratio(lambda_bar);
  return r;
}

// ---------------------------------------------------------------------------
// Whitening and optimizer-vs-recursion agreement

struct WhiteningRow {
  std::size_t instance = 0;
  std::size_t dim = 0;
  double eta = 0.0;
  double max_mu = 0.0;
  double commutator = 0.0;           // ||Hbar Heps - Heps Hbar||_F
  double whitening_max_dev = 0.0;    // unwhitened vs direct, over all steps
  double optimizer_max_step_dev = 0.0;  // optimizer vs recursion, one step from a shared state
  double optimizer_max_traj_dev = 0.0;  // free-running trajectories
};

/// Random non-commuting instance; dimension in [min_dim, max_dim].
inline TwoScaleQuadratic whitening_instance(std::uint64_t seed, std::size_t index,
                                            std::size_t min_dim, std::size_t max_dim,
                                            std::size_t& dim_out) {
  CounterRng rng(seed, 1000 + index);
  const std::size_t span = max_dim - min_dim + 1;
  dim_out = min_dim + static_cast<std::size_t>(rng.uniform() * static_cast<double>(span)) % span;
  if (dim_out < 2) dim_out = 2;
  for (;;) {
    auto q = TwoScaleQuadratic::random(dim_out, rng, false);
    if (!q.commuting()) return q;
  }
}

inline WhiteningRow whitening_row(std::uint64_t seed, std::size_t index, std::size_t min_dim,
                                  std::size_t max_dim, std::size_t steps, double eta_scale,
                                  double rho) {
  WhiteningRow r;
  r.instance = index;
  const auto q = whitening_instance(seed, index, min_dim, max_dim, r.dim);
  r.commutator = (matmul(q.hbar().matrix(), q.heps().matrix()) -
                  matmul(q.heps().matrix(), q.hbar().matrix()))
                     .frobenius();
  r.max_mu = q.perceived_sharpness().back();
  r.eta = eta_scale / r.max_mu;

  CounterRng rng(seed, 5000 + index);
  Vec e0(r.dim);
  for (double& x : e0) x = rng.normal();
  const double n0 = norm2(e0);
  for (double& x : e0) x /= n0;

  const SymMatrix u_sym = q.average_inverse();
  const SymMatrix a = analysis::whitened_matrix(q);
  const MetricState u = MetricState::dense(u_sym);
  OptimizerConfig cfg;
  cfg.rule = Rule::llqr_sam;
  cfg.lr = r.eta;
  cfg.rho = rho;

  Vec e = e0;
  Vec y = analysis::whiten(q, e0);
  Vec theta = e0;
  OptimizerState st = OptimizerState::zeros(r.dim);
  for (std::size_t t = 0; t < steps; ++t) {
    // One optimizer step from the recursion's own state isolates the
    // per-step discrepancy from trajectory drift.
    Vec probe = e;
    OptimizerState st1 = OptimizerState::zeros(r.dim);
    step(cfg, st1, u, q, probe);

    e = analysis::matrix_recursion_step(q, u_sym, r.eta, rho, e);
    y = analysis::whitened_step(a, r.eta, rho, y);
    step(cfg, st, u, q, theta);

    const Vec back = analysis::unwhiten(q, y);
    for (std::size_t k = 0; k < r.dim; ++k) {
      r.whitening_max_dev = std::max(r.whitening_max_dev, std::abs(back[k] - e[k]));
      r.optimizer_max_step_dev = std::max(r.optimizer_max_step_dev, std::abs(probe[k] - e[k]));
      r.optimizer_max_traj_dev = std::max(r.optimizer_max_traj_dev, std::abs(theta[k] - e[k]));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// LLQR learner oracles

struct ScalarOracleResult {
  double learned_u = 0.0;
  double target_u = 0.25;
  double abs_error = 0.0;
  double theta_after_step = 0.0;  // theta - U g with unit step
  bool accepted = false;
};

/// f(x) = theta x, loss 1/2 (x_1 - y)^2 with x0 = 2, theta = 1, y = 0.
inline ScalarOracleResult scalar_learner_oracle(std::size_t inner_steps = 2000) {
  const LayeredNet net({{1, 1, Activation::identity, false}}, {2.0}, {0.0});
  const Vec theta{1.0};
  MetricState u = MetricState::diagonal({1.0});
  u.ema_beta = 0.0;
  InnerSolverConfig inner;
  inner.steps = inner_steps;
  const auto rep = learn_preconditioner(u, net, theta, Divergence::ngd, inner, 0.0);
  ScalarOracleResult r;
  r.accepted = rep.accepted;
  r.learned_u = rep.state.params()[0];
  r.abs_error = std::abs(r.learned_u - r.target_u);
  const auto g = net.evaluate(theta).grad;
  r.theta_after_step = theta[0] - rep.state.apply(g)[0];
  return r;
}

struct DenseOracleResult {
  double angle_fraction = 1.0;  // angle / pi between -U g and the damped Gauss-Newton step
  double objective_start = 0.0;
  double objective_end = 0.0;
  bool accepted = false;
  bool clamped = false;
};

/// Tiny 2-layer linear net; dense per-layer blocks against
/// -(J^T J + damping I)^{-1} g with J from central differences.
inline DenseOracleResult dense_learner_oracle(std::uint64_t seed, double damping = 1e-3,
                                              std::size_t inner_steps = 20000,
                                              double inner_lr = 0.1) {
  const LayeredNet net({{3, 3, Activation::identity, false}, {3, 2, Activation::identity, false}},
                       {1.0, -0.5, 0.3}, {0.2, -0.4});
  CounterRng rng(seed, 77);
  const Vec theta = net.random_parameters(rng);
  MetricState u = MetricState::layer_blocks(net, BlockKind::dense);
  u.ema_beta = 0.0;
  InnerSolverConfig inner;
  inner.steps = inner_steps;
  inner.lr = inner_lr;
  const auto rep = learn_preconditioner(u, net, theta, Divergence::ngd, inner, damping);

  const std::size_t n = net.dim();
  const std::size_t m = net.target().size();
  Matrix jac(m, n);
  const double h = 1e-6;
  for (std::size_t k = 0; k < n; ++k) {
    Vec a = theta, b = theta;
    a[k] += h;
    b[k] -= h;
    const Vec oa = net.output(a), ob = net.output(b);
    for (std::size_t r = 0; r < m; ++r) jac(r, k) = (oa[r] - ob[r]) / (2.0 * h);
  }
  Matrix gn = matmul(jac.transposed(), jac);
  for (std::size_t k = 0; k < n; ++k) gn(k, k) += damping;
  const Vec g = net.evaluate(theta).grad;
  const Vec oracle = scaled(-1.0, solve(gn, g));
  const Vec learned = scaled(-1.0, rep.state.apply(g));

  DenseOracleResult r;
  r.accepted = rep.accepted;
  r.clamped = rep.clamped;
  r.objective_start = rep.objective_start;
  r.objective_end = rep.objective_end;
  const double c = dot(learned, oracle) / (norm2(learned) * norm2(oracle));
  r.angle_fraction = std::acos(std::clamp(c, -1.0, 1.0)) / std::numbers::pi;
  return r;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks

/// max over coordinates of |analytic - fd| / max(1, |analytic|, |fd|).
template <class F>
double fd_relative_error(F&& f, std::span<const double> x, std::span<const double> analytic,
                         double h = 1e-5) {
  Vec p(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double x0 = p[k];
    p[k] = x0 + h;
    const double fp = f(std::span<const double>(p));
    p[k] = x0 - h;
    const double fm = f(std::span<const double>(p));
    p[k] = x0;
    const double fd = (fp - fm) / (2.0 * h);
    const double scale = std::max({1.0, std::abs(analytic[k]), std::abs(fd)});
    worst = std::max(worst, std::abs(analytic[k] - fd) / scale);
  }
  return worst;
}

}  // namespace llqrsam::harness
