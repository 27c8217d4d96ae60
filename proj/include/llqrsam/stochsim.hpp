#pragma once

// Noisy trajectories on a shared deterministic schedule, AR(1) damping
// simulation, and the regenerative multiwell selection model.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "llqrsam/analysis.hpp"
#include "llqrsam/landscapes.hpp"
#include "llqrsam/metric.hpp"
#include "llqrsam/optimizers.hpp"
#include "llqrsam/random.hpp"

namespace llqrsam {

/// noise(t)[k] = sigma * N(0,1) keyed by (seed, t, k). Stateless.
struct NoiseSchedule {
  std::uint64_t seed = 0;
  double variance = 0.0;
  std::size_t dim = 1;

  void fill(std::uint64_t t, std::span<double> out) const {
    require_same_size(out.size(), dim, "NoiseSchedule::fill");
    if (variance == 0.0) {
      for (double& x : out) x = 0.0;
      return;
    }
    const double s = std::sqrt(variance);
    for (std::size_t k = 0; k < dim; ++k) out[k] = s * counter_normal(seed, t, k);
  }

  Vec at(std::uint64_t t) const {
    Vec v(dim);
    fill(t, v);
    return v;
  }
};

inline Vec noise_at(const NoiseSchedule& s, std::uint64_t t) { return s.at(t); }

/// FNV-1a over raw double bits; used to fingerprint consumed noise streams.
class BitHash {
 public:
  void add(double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h_ ^= (bits >> (8 * i)) & 0xffu;
      h_ *= 0x100000001b3ULL;
    }
  }
  void add(std::span<const double> xs) {
    for (double x : xs) add(x);
  }
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

// ---------------------------------------------------------------------------

struct TrajectoryRow {
  std::size_t step = 0;
  Vec theta;
  double loss = 0.0;
  double grad_norm = 0.0;
  double grad_dual_norm = 0.0;
  double perturbation_norm = 0.0;
  double path_length = 0.0;
  Region region = Region::neither;
};

struct TrajectoryRecord {
  std::vector<TrajectoryRow> rows;
  std::optional<std::size_t> exit_step;
  Region final_region = Region::neither;
  double path_length = 0.0;
  /// Running mean of g^T U g over the steps taken.
  double mean_dual_sq = 0.0;
  std::size_t steps = 0;
  std::uint64_t noise_hash = 0;
  Vec final_theta;
  double final_loss = 0.0;
};

struct TrajectoryOptions {
  std::size_t horizon = 1000;
  std::size_t stride = 1;
  NoiseInjection injection = NoiseInjection::post_transport;
  std::function<Region(std::span<const double>)> classify;
  /// Record the first step at which the iterate is no longer in this region.
  std::optional<Region> exit_from;
  bool stop_on_exit = false;
};

template <Landscape L>
TrajectoryRecord run_noisy_trajectory(const L& landscape, const OptimizerConfig& cfg,
                                      const MetricState& u, Vec theta,
                                      const NoiseSchedule& schedule,
                                      const TrajectoryOptions& opt) {
  cfg.validate();
  if (opt.horizon < 1) throw std::invalid_argument("run_noisy_trajectory: horizon must be >= 1");
  if (opt.stride < 1) throw std::invalid_argument("run_noisy_trajectory: stride must be >= 1");
  require_same_size(schedule.dim, theta.size(), "run_noisy_trajectory(noise)");
  auto classify = [&](std::span<const double> th) {
    return opt.classify ? opt.classify(th) : Region::neither;
  };

  TrajectoryRecord rec;
  OptimizerState st = OptimizerState::zeros(theta.size());
  Vec noise(theta.size());
  BitHash hash;
  double path = 0.0;
  double dual_sum = 0.0;
  std::size_t t = 0;
  for (; t < opt.horizon; ++t) {
    const Region here = classify(theta);
    if (opt.exit_from && !rec.exit_step && here != *opt.exit_from) {
      rec.exit_step = t;
      if (opt.stop_on_exit) break;
    }
    schedule.fill(t, noise);
    hash.add(noise);
    Vec before = theta;
    const StepInfo info = step(cfg, st, u, landscape, theta, noise, opt.injection);
    if (t % opt.stride == 0) {
      rec.rows.push_back({t, std::move(before), info.loss, info.grad_norm, info.grad_dual_norm,
                          info.perturbation_norm, path, here});
    }
    path += info.step_norm;
    dual_sum += info.grad_dual_norm * info.grad_dual_norm;
  }
  const Region last = classify(theta);
  if (opt.exit_from && !rec.exit_step && last != *opt.exit_from) rec.exit_step = t;
  const Evaluation fin = landscape.evaluate(theta);
  rec.rows.push_back({t, theta, fin.loss, norm2(fin.grad), u.dual_norm(fin.grad), 0.0, path, last});
  rec.steps = t;
  rec.path_length = path;
  rec.mean_dual_sq = t > 0 ? dual_sum / static_cast<double>(t) : 0.0;
  rec.final_region = last;
  rec.final_theta = std::move(theta);
  rec.final_loss = fin.loss;
  rec.noise_hash = hash.value();
  return rec;
}

// ---------------------------------------------------------------------------
// AR(1) damping simulation

struct Ar1Empirical {
  double variance = 0.0;
  double one_step_motion = 0.0;
};

/// z' = z - (eta/d)(lambda z + xi). Starts from a stationary draw so no
/// burn-in is needed.
inline Ar1Empirical ar1_simulate(const analysis::Ar1Params& p, std::size_t steps,
                                 std::uint64_t seed) {
  const auto th = analysis::ar1_stationary_stats(p);
  const double c = p.eta * p.lambda / p.d;
  const double s = p.eta / p.d * std::sqrt(p.tau2);
  double z = std::sqrt(th.variance) * counter_normal(seed, 1, 0);
  double sum = 0.0, sum2 = 0.0, motion = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double dz = -c * z - s * counter_normal(seed, 0, t);
    z += dz;
    sum += z;
    sum2 += z * z;
    motion += dz * dz;
  }
  const double n = static_cast<double>(steps);
  const double mean = sum / n;
  return {sum2 / n - mean * mean, motion / n};
}

// ---------------------------------------------------------------------------
// Regenerative selection

/// One-dimensional quadratic well 1/2 lambda e^2.
struct QuadraticWell {
  double lambda = 1.0;
  std::size_t dim() const noexcept { return 1; }
  Evaluation evaluate(std::span<const double> e) const {
    require_same_size(e.size(), 1, "QuadraticWell::evaluate");
    return {0.5 * lambda * e[0] * e[0], Vec{lambda * e[0]}};
  }
};

struct WellSpec {
  std::string name;
  double nu = 0.5;
  double curvature = 1.0;
  double exit_radius = 1.0;
};

struct RegenerativeConfig {
  std::vector<WellSpec> wells;
  double sigma = 1e-3;
  /// Scalar metric U = metric * I shared by every well.
  double metric = 1.0;
  std::size_t max_cycles = 1000;
  std::size_t max_steps_per_cycle = 2000000;
  std::uint64_t seed = 0;
  NoiseInjection injection = NoiseInjection::post_transport;

  void validate() const {
    if (wells.empty()) throw std::invalid_argument("RegenerativeConfig: no wells");
    double total = 0.0;
    for (const auto& w : wells) {
      if (!(w.nu >= 0.0)) throw std::invalid_argument("RegenerativeConfig: nu must be >= 0");
      if (!(w.exit_radius > 0.0))
        throw std::invalid_argument("RegenerativeConfig: exit radius must be > 0");
      if (!(w.curvature > 0.0))
        throw std::invalid_argument("RegenerativeConfig: curvature must be > 0");
      total += w.nu;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("RegenerativeConfig: nu must sum to 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("RegenerativeConfig: sigma must be >= 0");
    if (!(metric > 0.0)) throw std::invalid_argument("RegenerativeConfig: metric must be > 0");
    if (max_cycles < 1 || max_steps_per_cycle < 1)
      throw std::invalid_argument("RegenerativeConfig: cycle limits must be >= 1");
  }
};

struct WellExitStats {
  std::size_t cycles = 0;    // completed (uncensored)
  std::size_t censored = 0;
  std::vector<double> exit_times;
  double mean_exit_time = 0.0;
  double mean_path_length = 0.0;
  double total_steps = 0.0;
  double occupancy = 0.0;
};

struct ExitStats {
  std::vector<WellExitStats> wells;
  std::size_t completed_cycles = 0;
  std::size_t censored_cycles = 0;
  double total_steps = 0.0;
};

inline ExitStats regenerative_simulate(const RegenerativeConfig& cfg, const OptimizerConfig& opt) {
  cfg.validate();
  opt.validate();
  ExitStats out;
  out.wells.resize(cfg.wells.size());
  const MetricState u = MetricState::diagonal({cfg.metric});
  std::vector<double> path_sum(cfg.wells.size(), 0.0);

  for (std::size_t c = 0; c < cfg.max_cycles; ++c) {
    // Well choice and start offset use their own streams.
    const double pick = uniform_open(hash_key(cfg.seed, 0, c));
    std::size_t m = 0;
    double acc = cfg.wells[0].nu;
    while (pick > acc && m + 1 < cfg.wells.size()) acc += cfg.wells[++m].nu;
    const auto& well = cfg.wells[m];
    const QuadraticWell land{well.curvature};

    Vec e{cfg.sigma * counter_normal(cfg.seed, 1, c)};
    const NoiseSchedule sched{hash_key(cfg.seed, 2, c), cfg.sigma * cfg.sigma, 1};
    OptimizerState st = OptimizerState::zeros(1);
    Vec noise(1);
    double path = 0.0;
    std::size_t t = 0;
    bool exited = false;
    while (t < cfg.max_steps_per_cycle) {
      sched.fill(t, noise);
      const auto info = step(opt, st, u, land, e, noise, cfg.injection);
      path += info.step_norm;
      ++t;
      if (std::abs(e[0]) >= well.exit_radius) {
        exited = true;
        break;
      }
    }
    auto& ws = out.wells[m];
    if (!exited) {
      ++ws.censored;
      ++out.censored_cycles;
      continue;
    }
    ++ws.cycles;
    ++out.completed_cycles;
    ws.exit_times.push_back(static_cast<double>(t));
    ws.total_steps += static_cast<double>(t);
    path_sum[m] += path;
    out.total_steps += static_cast<double>(t);
  }
  for (std::size_t m = 0; m < out.wells.size(); ++m) {
    auto& ws = out.wells[m];
    if (ws.cycles > 0) {
      ws.mean_exit_time = ws.total_steps / static_cast<double>(ws.cycles);
      ws.mean_path_length = path_sum[m] / static_cast<double>(ws.cycles);
    }
    ws.occupancy = out.total_steps > 0.0 ? ws.total_steps / out.total_steps : 0.0;
  }
  return out;
}

/// Measured occupancy against the renewal-reward prediction from the
/// configured entry law and the measured mean exit times. The standard
/// error propagates the multinomial noise of the well frequencies.
struct RenewalCheck {
  Vec predicted;
  Vec measured;
  Vec standard_error;
  double max_z = 0.0;  // max |measured - predicted| / se over wells with se > 0
};

inline RenewalCheck renewal_check(const ExitStats& stats, std::span<const double> nu) {
  require_same_size(stats.wells.size(), nu.size(), "renewal_check");
  const std::size_t k = nu.size();
  RenewalCheck r;
  Vec tau(k);
  for (std::size_t m = 0; m < k; ++m) {
    tau[m] = stats.wells[m].mean_exit_time;
    r.measured.push_back(stats.wells[m].occupancy);
  }
  r.predicted = analysis::occupation_mass(nu, tau);
  double d = 0.0;
  for (std::size_t m = 0; m < k; ++m) d += nu[m] * tau[m];
  const double n = static_cast<double>(stats.completed_cycles);
  for (std::size_t m = 0; m < k; ++m) {
    Vec grad(k);
    for (std::size_t j = 0; j < k; ++j)
      grad[j] = ((m == j ? tau[m] * d : 0.0) - nu[m] * tau[m] * tau[j]) / (d * d);
    double var = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        var += grad[i] * grad[j] * ((i == j ? nu[i] : 0.0) - nu[i] * nu[j]) / n;
    const double se = std::sqrt(std::max(var, 0.0));
    r.standard_error.push_back(se);
    if (se > 0.0) r.max_z = std::max(r.max_z, std::abs(r.measured[m] - r.predicted[m]) / se);
  }
  return r;
}

}  // namespace llqrsam
