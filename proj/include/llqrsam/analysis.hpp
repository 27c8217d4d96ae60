#pragma once

// Closed forms for the two-scale quadratic: scalar mode map, two-cycle
// amplitude, hovering envelopes, escape test, whitened recursion, AR(1)
// damping statistics and renewal-reward occupancy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "llqrsam/landscapes.hpp"
#include "llqrsam/numkit.hpp"

namespace llqrsam::analysis {

inline double sign(double z) { return z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0); }

struct ScalarModeParams {
  double eta = 0.1;
  double mu = 1.0;
  double rho = 0.1;
  double lambda_bar = 1.0;

  double a() const noexcept { return 1.0 - eta * mu; }
  double b() const noexcept { return eta * rho * mu / std::sqrt(lambda_bar); }

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("ScalarModeParams: eta must be > 0");
    if (!(mu > 0.0)) throw std::invalid_argument("ScalarModeParams: mu must be > 0");
    if (!(rho >= 0.0)) throw std::invalid_argument("ScalarModeParams: rho must be >= 0");
    if (!(lambda_bar > 0.0))
      throw std::invalid_argument("ScalarModeParams: lambda_bar must be > 0");
  }
};

/// z_{t+1} = a z_t - b sign(z_t); returns z_0 .. z_steps.
inline Vec scalar_map_iterate(const ScalarModeParams& p, double z0, std::size_t steps) {
  p.validate();
  if (steps < 1) throw std::invalid_argument("scalar_map_iterate: steps must be >= 1");
  const double a = p.a();
  const double b = p.b();
  Vec z(steps + 1);
  z[0] = z0;
  for (std::size_t t = 0; t < steps; ++t) z[t + 1] = a * z[t] - b * sign(z[t]);
  return z;
}

/// max |z_t| over the trailing `window` iterates of a `steps`-step run.
inline double scalar_map_limsup(const ScalarModeParams& p, double z0, std::size_t steps,
                                std::size_t window) {
  p.validate();
  if (window == 0 || window > steps)
    throw std::invalid_argument("scalar_map_limsup: window must be in [1, steps]");
  const double a = p.a();
  const double b = p.b();
  double z = z0;
  double m = 0.0;
  for (std::size_t t = 1; t <= steps; ++t) {
    z = a * z - b * sign(z);
    if (t > steps - window) m = std::max(m, std::abs(z));
  }
  return m;
}

/// b / (1 + a) without range checks, for reporting a prediction even where
/// the map is unstable.
inline double two_cycle_formula(const ScalarModeParams& p) { return p.b() / (1.0 + p.a()); }

/// Exact limiting amplitude of the scalar map. Valid for |a| < 1.
inline double two_cycle_amplitude(const ScalarModeParams& p) {
  p.validate();
  const double a = p.a();
  if (!(a > -1.0 && a < 1.0)) {
    std::ostringstream os;
    os << "two_cycle_amplitude: a = 1 - eta*mu = " << a << " is outside the stable range (-1, 1)";
    throw std::domain_error(os.str());
  }
  return two_cycle_formula(p);
}

inline double hovering_envelope(double rho, double lambda_bar) {
  if (!(lambda_bar > 0.0)) throw std::domain_error("hovering_envelope: lambda_bar must be > 0");
  return rho / std::sqrt(lambda_bar);
}

inline double vanilla_envelope(double rho) { return rho; }

/// Two-cycle amplitude of Euclidean SAM in a mode of curvature lambda:
/// a = 1 - eta lambda, b = eta rho lambda.
inline double vanilla_two_cycle(double eta, double rho, double lambda) {
  return eta * rho * lambda / (2.0 - eta * lambda);
}

inline double amplification_ratio(double lambda_bar_eps) {
  if (!(lambda_bar_eps > 0.0))
    throw std::domain_error("amplification_ratio: lambda_bar must be > 0");
  return 1.0 / std::sqrt(lambda_bar_eps);
}

struct PotholeSpec {
  double lambda_bar_eps = 1.0;  // average curvature along the pothole direction
  double lambda_eps = 0.0;      // localized sharpness (does not enter the test)
  double r_eps = 1.0;           // basin radius

  void validate() const {
    if (!(lambda_bar_eps > 0.0)) throw std::invalid_argument("PotholeSpec: lambda_bar must be > 0");
    if (!(lambda_eps >= 0.0)) throw std::invalid_argument("PotholeSpec: lambda_eps must be >= 0");
    if (!(r_eps > 0.0)) throw std::invalid_argument("PotholeSpec: r_eps must be > 0");
  }
};

inline bool escape_predicate(double rho, const PotholeSpec& pothole) {
  pothole.validate();
  return hovering_envelope(rho, pothole.lambda_bar_eps) > pothole.r_eps;
}

// ---------------------------------------------------------------------------
// Matrix recursions

/// e' = (I - eta U H) e - eta rho ||H e||_U^{-1} U H U H e; the SAM term is
/// dropped when ||H e||_U <= floor.
inline Vec matrix_recursion_step(const TwoScaleQuadratic& q, const SymMatrix& u, double eta,
                                 double rho, std::span<const double> e,
                                 double floor = 1e-12) {
  require_same_size(e.size(), q.dim(), "matrix_recursion_step");
  require_same_size(u.dim(), q.dim(), "matrix_recursion_step(metric)");
  const Vec he = matvec(q.hessian(), e);
  const Vec uhe = matvec(u, he);
  Vec out(e.begin(), e.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= eta * uhe[k];
  const double qn = dot(he, uhe);
  const double nrm = qn > 0.0 ? std::sqrt(qn) : 0.0;
  if (nrm > floor && rho != 0.0) {
    const Vec uhuhe = matvec(u, matvec(q.hessian(), uhe));
    for (std::size_t k = 0; k < out.size(); ++k) out[k] -= eta * rho / nrm * uhuhe[k];
  }
  return out;
}

/// A = I + Hbar^{-1/2} Heps Hbar^{-1/2}.
inline SymMatrix whitened_matrix(const TwoScaleQuadratic& q) {
  const SymMatrix w = spd_inv_sqrt(q.hbar());
  return SymMatrix::identity(q.dim()) + congruence(w, q.heps());
}

inline Vec whiten(const TwoScaleQuadratic& q, std::span<const double> e) {
  require_same_size(e.size(), q.dim(), "whiten");
  return matvec(spd_sqrt(q.hbar()), e);
}

inline Vec unwhiten(const TwoScaleQuadratic& q, std::span<const double> y) {
  require_same_size(y.size(), q.dim(), "unwhiten");
  return matvec(spd_inv_sqrt(q.hbar()), y);
}

/// y' = (I - eta A) y - eta rho ||A y||^{-1} A^2 y.
inline Vec whitened_step(const SymMatrix& a, double eta, double rho, std::span<const double> y,
                         double floor = 1e-12) {
  require_same_size(y.size(), a.dim(), "whitened_step");
  const Vec ay = matvec(a, y);
  Vec out(y.begin(), y.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= eta * ay[k];
  const double nrm = norm2(ay);
  if (nrm > floor && rho != 0.0) {
    const Vec aay = matvec(a, ay);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] -= eta * rho / nrm * aay[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric damping: z' = z - (eta/d)(lambda z + xi), xi ~ N(0, tau2)

struct Ar1Params {
  double eta = 0.1;
  double lambda = 1.0;
  double d = 1.0;
  double tau2 = 1.0;

  void validate() const {
    if (!(eta > 0.0) || !(lambda > 0.0) || !(d > 0.0) || !(tau2 >= 0.0))
      throw std::invalid_argument("Ar1Params: eta, lambda, d must be > 0 and tau2 >= 0");
    if (!(d > eta * lambda / 2.0))
      throw std::domain_error("Ar1Params: stationarity requires d > eta*lambda/2");
  }
};

struct Ar1Stats {
  double variance = 0.0;
  double one_step_motion = 0.0;
};

inline Ar1Stats ar1_stationary_stats(const Ar1Params& p) {
  p.validate();
  const double den = 2.0 * p.d - p.eta * p.lambda;
  return {p.eta * p.tau2 / (p.lambda * den), 2.0 * p.eta * p.eta * p.tau2 / (p.d * den)};
}

// ---------------------------------------------------------------------------

/// Renewal-reward occupancy nu_m E[tau_m] / sum_l nu_l E[tau_l].
inline Vec occupation_mass(std::span<const double> nu, std::span<const double> mean_exit_times) {
  require_same_size(nu.size(), mean_exit_times.size(), "occupation_mass");
  if (nu.empty()) throw std::invalid_argument("occupation_mass: no wells");
  double total_nu = 0.0;
  for (double v : nu) {
    if (!(v >= 0.0)) throw std::invalid_argument("occupation_mass: negative probability");
    total_nu += v;
  }
  if (std::abs(total_nu - 1.0) > 1e-9)
    throw std::invalid_argument("occupation_mass: probabilities must sum to 1");
  for (double t : mean_exit_times)
    if (!(t > 0.0) || !std::isfinite(t))
      throw std::invalid_argument("occupation_mass: exit times must be positive and finite");
  Vec mass(nu.size());
  double z = 0.0;
  for (std::size_t m = 0; m < nu.size(); ++m) z += (mass[m] = nu[m] * mean_exit_times[m]);
  if (!(z > 0.0)) throw std::invalid_argument("occupation_mass: all wells have zero weight");
  for (double& v : mass) v /= z;
  return mass;
}

}  // namespace llqrsam::analysis
