#pragma once

// Step rules. Every rule is "perturb, recompute, transport, descend":
//   eps   = rho * T d / ||d||_T           (T = U or I, d = g or filtered g)
//   g~    = grad L(theta + eps)
//   v     = transport(g~) + wd * theta
//   buf   = momentum * buf + v
//   theta = theta - lr * buf

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "llqrsam/errors.hpp"
#include "llqrsam/landscapes.hpp"
#include "llqrsam/metric.hpp"
#include "llqrsam/numkit.hpp"

namespace llqrsam {

enum class Rule { sgdm, llqr, sam, llqr_sam, llqr_delta_sam, fsam };

inline const char* to_string(Rule r) {
  switch (r) {
    case Rule::sgdm: return "sgdm";
    case Rule::llqr: return "llqr";
    case Rule::sam: return "sam";
    case Rule::llqr_sam: return "llqr_sam";
    case Rule::llqr_delta_sam: return "llqr_delta_sam";
    case Rule::fsam: return "fsam";
  }
  return "?";
}

inline std::optional<Rule> parse_rule(std::string_view s) {
  for (Rule r : {Rule::sgdm, Rule::llqr, Rule::sam, Rule::llqr_sam, Rule::llqr_delta_sam,
                 Rule::fsam})
    if (s == to_string(r)) return r;
  return std::nullopt;
}

/// Where F-SAM applies the gradient EMA relative to the metric.
enum class FsamOrder { filter_then_transport, transport_then_filter };

inline constexpr double kNormFloor = 1e-12;

struct OptimizerConfig {
  Rule rule = Rule::sgdm;
  double lr = 0.01;
  double rho = 0.1;
  double momentum = 0.0;
  double fsam_lambda = 0.0;
  double weight_decay = 0.0;
  double norm_floor = kNormFloor;
  bool fsam_transport_metric = false;
  FsamOrder fsam_order = FsamOrder::filter_then_transport;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("OptimizerConfig: lr must be > 0");
    if (!(rho >= 0.0)) throw std::invalid_argument("OptimizerConfig: rho must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("OptimizerConfig: momentum must be in [0,1)");
    if (!(fsam_lambda >= 0.0 && fsam_lambda < 1.0))
      throw std::invalid_argument("OptimizerConfig: fsam_lambda must be in [0,1)");
    if (!(weight_decay >= 0.0))
      throw std::invalid_argument("OptimizerConfig: weight_decay must be >= 0");
    if (!(norm_floor > 0.0)) throw std::invalid_argument("OptimizerConfig: norm_floor must be > 0");
  }

  bool uses_perturbation() const noexcept { return rule != Rule::sgdm && rule != Rule::llqr; }
};

struct OptimizerState {
  Vec momentum_buf;
  Vec grad_ema;
  std::size_t t = 0;

  static OptimizerState zeros(std::size_t n) { return {Vec(n, 0.0), Vec(n, 0.0), 0}; }
};

/// eps = rho U g / ||g||_U, or 0 when ||g||_U <= floor.
inline Vec sam_perturbation(std::span<const double> g, const MetricState& u, double rho,
                            double floor = kNormFloor) {
  const Vec ug = u.apply(g);
  const double q = dot(g, ug);
  const double n = q > 0.0 ? std::sqrt(q) : 0.0;
  if (!(n > floor) || rho == 0.0) return Vec(g.size(), 0.0);
  return scaled(rho / n, ug);
}

/// Per-step byproducts, enough to fill a trajectory row.
struct StepInfo {
  double loss = 0.0;            // at the base point
  double grad_norm = 0.0;       // ||g||_2 at the base point
  double grad_dual_norm = 0.0;  // ||g||_U at the base point
  double perturbation_norm = 0.0;
  double step_norm = 0.0;       // ||theta_{t+1} - theta_t||_2
};

enum class NoiseInjection { post_transport, pre_transport };

namespace detail {

inline void require_finite(double loss, std::span<const double> g, std::size_t t,
                           const char* where) {
  if (!std::isfinite(loss) || !all_finite(g)) {
    std::ostringstream os;
    os << "non-finite loss or gradient at the " << where << " point, step " << t;
    throw StepAborted(os.str(), t);
  }
}

inline Vec identity_or(const MetricState& u, bool use_metric, std::span<const double> g) {
  return use_metric ? u.apply(g) : Vec(g.begin(), g.end());
}

}  // namespace detail

/// One optimizer step. `noise`, when non-empty, is added to the update
/// gradient after transport (default) or before it.
template <Landscape L>
StepInfo step(const OptimizerConfig& cfg, OptimizerState& state, const MetricState& u,
              const L& landscape, Vec& theta, std::span<const double> noise = {},
              NoiseInjection injection = NoiseInjection::post_transport) {
  const std::size_t n = theta.size();
  require_same_size(u.dim(), n, "step(metric)");
  if (state.momentum_buf.size() != n) state.momentum_buf.assign(n, 0.0);
  if (state.grad_ema.size() != n) state.grad_ema.assign(n, 0.0);
  if (!noise.empty()) require_same_size(noise.size(), n, "step(noise)");

  const Evaluation base = landscape.evaluate(theta);
  detail::require_finite(base.loss, base.grad, state.t, "base");

  StepInfo info;
  info.loss = base.loss;
  info.grad_norm = norm2(base.grad);
  info.grad_dual_norm = u.dual_norm(base.grad);

  const MetricState ident = MetricState::identity(n);
  Vec eps;
  bool transport_metric = false;
  switch (cfg.rule) {
    case Rule::sgdm: break;
    case Rule::llqr: transport_metric = true; break;
    case Rule::sam: eps = sam_perturbation(base.grad, ident, cfg.rho, cfg.norm_floor); break;
    case Rule::llqr_sam:
      eps = sam_perturbation(base.grad, u, cfg.rho, cfg.norm_floor);
      transport_metric = true;
      break;
    case Rule::llqr_delta_sam:
      eps = sam_perturbation(base.grad, u, cfg.rho, cfg.norm_floor);
      break;
    case Rule::fsam: {
      transport_metric = cfg.fsam_transport_metric;
      const double lam = cfg.fsam_lambda;
      if (cfg.fsam_order == FsamOrder::filter_then_transport) {
        Vec d(n);
        for (std::size_t k = 0; k < n; ++k) d[k] = base.grad[k] - lam * state.grad_ema[k];
        eps = sam_perturbation(d, u, cfg.rho, cfg.norm_floor);
        for (std::size_t k = 0; k < n; ++k)
          state.grad_ema[k] = lam * state.grad_ema[k] + (1.0 - lam) * base.grad[k];
      } else {
        // Filter in the transported space; normalize on the metric sphere.
        const Vec ug = u.apply(base.grad);
        Vec d(n);
        for (std::size_t k = 0; k < n; ++k) d[k] = ug[k] - lam * state.grad_ema[k];
        const Vec pre = u.structure() == MetricStructure::identity
                            ? d
                            : solve(u.realized().matrix(), d);
        const double q = dot(d, pre);
        const double nrm = q > 0.0 ? std::sqrt(q) : 0.0;
        eps = (nrm > cfg.norm_floor && cfg.rho != 0.0) ? scaled(cfg.rho / nrm, d) : Vec(n, 0.0);
        for (std::size_t k = 0; k < n; ++k)
          state.grad_ema[k] = lam * state.grad_ema[k] + (1.0 - lam) * ug[k];
      }
      break;
    }
  }

  Vec probe_grad;
  bool has_probe = false;
  if (!eps.empty()) {
    info.perturbation_norm = norm2(eps);
    for (double e : eps)
      if (e != 0.0) {
        has_probe = true;
        break;
      }
  }
  if (has_probe) {
    Vec probe = axpy(1.0, eps, theta);
    Evaluation pe = landscape.evaluate(probe);
    detail::require_finite(pe.loss, pe.grad, state.t, "probe");
    probe_grad = std::move(pe.grad);
  } else {
    probe_grad = base.grad;
  }

  if (!noise.empty() && injection == NoiseInjection::pre_transport)
    for (std::size_t k = 0; k < n; ++k) probe_grad[k] += noise[k];
  Vec v = detail::identity_or(u, transport_metric, probe_grad);
  if (!noise.empty() && injection == NoiseInjection::post_transport)
    for (std::size_t k = 0; k < n; ++k) v[k] += noise[k];

  double sq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double vk = v[k] + cfg.weight_decay * theta[k];
    state.momentum_buf[k] = cfg.momentum * state.momentum_buf[k] + vk;
    const double dk = cfg.lr * state.momentum_buf[k];
    theta[k] -= dk;
    sq += dk * dk;
  }
  info.step_norm = std::sqrt(sq);
  if (!all_finite(theta)) {
    std::ostringstream os;
    os << "parameters became non-finite at step " << state.t;
    throw StepAborted(os.str(), state.t);
  }
  ++state.t;
  return info;
}

}  // namespace llqrsam
