#pragma once

// Loss oracles. Every landscape exposes evaluate(theta) -> {loss, grad}
// with an exact analytic gradient; the step rules and simulators are
// templated on that surface.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "llqrsam/errors.hpp"
#include "llqrsam/numkit.hpp"
#include "llqrsam/random.hpp"

namespace llqrsam {

struct Evaluation {
  double loss = 0.0;
  Vec grad;
};

template <class L>
concept Landscape = requires(const L& l, std::span<const double> theta) {
  { l.dim() } -> std::convertible_to<std::size_t>;
  { l.evaluate(theta) } -> std::same_as<Evaluation>;
};

// ---------------------------------------------------------------------------
// Two-scale quadratic  L = 1/2 theta^T (Hbar + Heps) theta

class TwoScaleQuadratic {
 public:
  TwoScaleQuadratic(SymMatrix hbar, SymMatrix heps)
      : hbar_(std::move(hbar)), heps_(std::move(heps)) {
    require_same_size(hbar_.dim(), heps_.dim(), "TwoScaleQuadratic");
    require_spd(sym_eig(hbar_), "TwoScaleQuadratic(average curvature)");
    const double heps_min = min_eigenvalue(heps_);
    if (heps_min < -1e-12 * std::max(1.0, heps_.frobenius())) {
      std::ostringstream os;
      os << "TwoScaleQuadratic: sharp component is not positive semidefinite "
            "(eigenvalue "
         << heps_min << ")";
      throw NotPositiveDefiniteError(os.str(), heps_min);
    }
    h_ = hbar_ + heps_;
    require_spd(sym_eig(h_), "TwoScaleQuadratic(total curvature)");
    const Matrix comm = matmul(hbar_.matrix(), heps_.matrix()) -
                        matmul(heps_.matrix(), hbar_.matrix());
    commuting_ = comm.frobenius() <= 1e-10;
  }

  /// Shared eigenbasis: both factors diagonal.
  static TwoScaleQuadratic commuting(std::span<const double> hbar_eigs,
                                     std::span<const double> heps_eigs) {
    return {SymMatrix::diagonal(hbar_eigs), SymMatrix::diagonal(heps_eigs)};
  }

  /// Hbar diagonal, Heps's eigenbasis rotated by `angle` radians in every
  /// consecutive coordinate plane (0,1), (1,2), ...
  static TwoScaleQuadratic rotated(std::span<const double> hbar_eigs,
                                   std::span<const double> heps_eigs, double angle) {
    require_same_size(hbar_eigs.size(), heps_eigs.size(), "TwoScaleQuadratic::rotated");
    const std::size_t n = hbar_eigs.size();
    Matrix basis = Matrix::identity(n);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    for (std::size_t p = 0; p + 1 < n; ++p) {
      Matrix g = Matrix::identity(n);
      g(p, p) = c;
      g(p, p + 1) = -s;
      g(p + 1, p) = s;
      g(p + 1, p + 1) = c;
      basis = matmul(basis, g);
    }
    return {SymMatrix::diagonal(hbar_eigs), from_spectrum(basis, heps_eigs)};
  }

  /// Random instance: log-uniform average spectrum in [1e-2, 10], sharp
  /// spectrum in [0, 100) with roughly half the directions left smooth.
  static TwoScaleQuadratic random(std::size_t dim, CounterRng& rng, bool commuting) {
    Vec hbar_eigs(dim), heps_eigs(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      hbar_eigs[i] = std::pow(10.0, rng.uniform(-2.0, 1.0));
      heps_eigs[i] = rng.uniform() < 0.5 ? 0.0 : std::pow(10.0, rng.uniform(-1.0, 2.0));
    }
    const Matrix q_bar = random_orthogonal(dim, rng);
    if (commuting) {
      return {from_spectrum(q_bar, hbar_eigs), from_spectrum(q_bar, heps_eigs)};
    }
    const Matrix q_eps = random_orthogonal(dim, rng);
    return {from_spectrum(q_bar, hbar_eigs), from_spectrum(q_eps, heps_eigs)};
  }

  std::size_t dim() const noexcept { return h_.dim(); }
  const SymMatrix& hbar() const noexcept { return hbar_; }
  const SymMatrix& heps() const noexcept { return heps_; }
  const SymMatrix& hessian() const noexcept { return h_; }
  bool commuting() const noexcept { return commuting_; }

  /// Inverse average curvature, the metric assumed to be tracked by LLQR.
  SymMatrix average_inverse() const { return spd_inverse(hbar_); }

  /// Perceived sharpness: spectrum of Hbar^{-1/2} H Hbar^{-1/2}, ascending.
  Vec perceived_sharpness() const {
    const SymMatrix w = spd_inv_sqrt(hbar_);
    return sym_eig(congruence(w, h_)).values;
  }

  Evaluation evaluate(std::span<const double> theta) const {
    require_same_size(theta.size(), dim(), "TwoScaleQuadratic::evaluate");
    Evaluation e;
    e.grad = matvec(h_, theta);
    e.loss = 0.5 * dot(theta, e.grad);
    return e;
  }

 private:
  SymMatrix hbar_;
  SymMatrix heps_;
  SymMatrix h_;
  bool commuting_ = false;
};

// ---------------------------------------------------------------------------
// Radially symmetric sharp-well toy:
//   L(r) = 1/2 lambda_flat r^2 - depth * exp(-(r - r0)^2 / (2 width^2))

enum class Region { flat, sharp, neither };

inline const char* to_string(Region r) {
  switch (r) {
    case Region::flat: return "flat";
    case Region::sharp: return "sharp";
    case Region::neither: return "neither";
  }
  return "?";
}

struct SharpWellParams {
  double lambda_flat = 0.01;
  double ring_radius = 5.0;
  double ring_depth = 2.0;
  double ring_width = 0.15;
};

class SharpWell2D {
 public:
  explicit SharpWell2D(SharpWellParams p = {}) : p_(p) {
    if (!(p_.lambda_flat > 0.0) || !(p_.ring_depth > 0.0) || !(p_.ring_width > 0.0) ||
        !(p_.ring_radius > 0.0)) {
      throw std::invalid_argument(
          "SharpWell2D: lambda_flat, ring_radius, ring_depth and ring_width must be > 0");
    }
    locate_stationary_points();
  }

  const SharpWellParams& params() const noexcept { return p_; }
  std::size_t dim() const noexcept { return 2; }

  double radial_loss(double r) const {
    const double d = r - p_.ring_radius;
    return 0.5 * p_.lambda_flat * r * r -
           p_.ring_depth * std::exp(-d * d / (2.0 * p_.ring_width * p_.ring_width));
  }

  double radial_slope(double r) const {
    const double w2 = p_.ring_width * p_.ring_width;
    const double d = r - p_.ring_radius;
    return p_.lambda_flat * r + p_.ring_depth * d / w2 * std::exp(-d * d / (2.0 * w2));
  }

  double radial_curvature(double r) const {
    const double w2 = p_.ring_width * p_.ring_width;
    const double d = r - p_.ring_radius;
    return p_.lambda_flat +
           p_.ring_depth / w2 * (1.0 - d * d / w2) * std::exp(-d * d / (2.0 * w2));
  }

  /// Radius of the annular local minimum.
  double ring_minimum_radius() const noexcept { return r_min_; }
  /// Radius of the radial local maximum separating the ring from the flat
  /// basin (0 when the ring's inner wall reaches the origin).
  double barrier_radius() const noexcept { return r_barrier_; }
  /// Distance from the ring minimum to the nearer radial local maximum.
  double basin_radius() const noexcept { return r_min_ - r_barrier_; }

  Region region(std::span<const double> theta) const {
    const double r = std::hypot(theta[0], theta[1]);
    if (r < r_barrier_) return Region::flat;
    if (r <= r_min_ + basin_radius()) return Region::sharp;
    return Region::neither;
  }

  Evaluation evaluate(std::span<const double> theta) const {
    require_same_size(theta.size(), 2, "SharpWell2D::evaluate");
    const double r = std::hypot(theta[0], theta[1]);
    Evaluation e{radial_loss(r), Vec(2, 0.0)};
    if (r >= 1e-12) {
      const double s = radial_slope(r) / r;
      e.grad[0] = s * theta[0];
      e.grad[1] = s * theta[1];
    }
    return e;
  }

 private:
  // Root of the radial slope in [lo, hi] by bisection; requires a sign change.
  double bisect_slope(double lo, double hi) const {
    const bool lo_neg = radial_slope(lo) < 0.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      if ((radial_slope(mid) < 0.0) == lo_neg) lo = mid; else hi = mid;
      if (hi - lo <= 1e-15 * hi) break;
    }
    return 0.5 * (lo + hi);
  }

  void locate_stationary_points() {
    // The slope is positive at r0 and beyond; a strict ring minimum needs a
    // negative slope somewhere on the inner wall.
    const double r0 = p_.ring_radius;
    const double step = p_.ring_width / 64.0;
    double neg = -1.0;
    for (double r = r0; r > 0.0; r -= step) {
      if (radial_slope(r) < 0.0) {
        neg = r;
        break;
      }
      if (r < r0 - 6.0 * p_.ring_width) break;
    }
    if (neg < 0.0) {
      throw std::invalid_argument(
          "SharpWell2D: parameters do not produce a local minimum near the ring radius");
    }
    r_min_ = bisect_slope(neg, r0);
    if (!(radial_curvature(r_min_) > 0.0)) {
      throw std::invalid_argument("SharpWell2D: ring stationary point is not a strict minimum");
    }
    r_barrier_ = 0.0;
    for (double r = neg; r > 0.0; r -= step) {
      if (radial_slope(r) > 0.0) {
        r_barrier_ = bisect_slope(r, r + step);
        break;
      }
    }
    if (!(radial_curvature(0.0) > 0.0)) {
      throw std::invalid_argument("SharpWell2D: origin is not a local minimum");
    }
  }

  SharpWellParams p_;
  double r_min_ = 0.0;
  double r_barrier_ = 0.0;
};

// ---------------------------------------------------------------------------
// Layered network x_{i+1} = act(W_i x_i + b_i) with a terminal loss on x_N.
// Per-layer parameters are laid out as W_i row-major followed by b_i.

enum class Activation { identity, tanh };

inline double activate(Activation a, double z) {
  return a == Activation::tanh ? std::tanh(z) : z;
}
inline double activate_d1(Activation a, double z) {
  if (a == Activation::identity) return 1.0;
  const double t = std::tanh(z);
  return 1.0 - t * t;
}
inline double activate_d2(Activation a, double z) {
  if (a == Activation::identity) return 0.0;
  const double t = std::tanh(z);
  return -2.0 * t * (1.0 - t * t);
}

struct LayerSpec {
  std::size_t in = 1;
  std::size_t out = 1;
  Activation activation = Activation::identity;
  bool bias = true;

  std::size_t weight_count() const noexcept { return in * out; }
  std::size_t param_count() const noexcept { return in * out + (bias ? out : 0); }
};

enum class LossKind { squared, softmax_cross_entropy };

struct Segment {
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct ForwardBackward {
  double loss = 0.0;
  Vec grad;
  std::vector<Vec> states;       // x_0 .. x_N
  std::vector<Vec> preactivations;  // z_0 .. z_{N-1}
  std::vector<Vec> costates;     // dL/dx_0 .. dL/dx_N
};

class LayeredNet {
 public:
  LayeredNet(std::vector<LayerSpec> layers, Vec input, Vec target,
             LossKind loss = LossKind::squared)
      : layers_(std::move(layers)), input_(std::move(input)), target_(std::move(target)),
        loss_(loss) {
    if (layers_.empty()) throw DimensionError("LayeredNet: need at least one layer");
    require_same_size(input_.size(), layers_.front().in, "LayeredNet(input)");
    for (std::size_t i = 1; i < layers_.size(); ++i)
      require_same_size(layers_[i].in, layers_[i - 1].out, "LayeredNet(layer widths)");
    require_same_size(target_.size(), layers_.back().out, "LayeredNet(target)");
    std::size_t off = 0;
    for (const auto& l : layers_) {
      segments_.push_back({off, l.param_count()});
      off += l.param_count();
    }
    params_ = off;
  }

  std::size_t depth() const noexcept { return layers_.size(); }
  std::size_t dim() const noexcept { return params_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }
  const Vec& input() const noexcept { return input_; }
  const Vec& target() const noexcept { return target_; }
  LossKind loss_kind() const noexcept { return loss_; }

  std::span<const double> layer_params(std::span<const double> theta, std::size_t i) const {
    return theta.subspan(segments_[i].offset, segments_[i].size);
  }

  double terminal_loss(std::span<const double> x) const {
    if (loss_ == LossKind::squared) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - target_[k]) * (x[k] - target_[k]);
      return 0.5 * s;
    }
    const Vec p = softmax(x);
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k)
      if (target_[k] != 0.0) s -= target_[k] * std::log(p[k]);
    return s;
  }

  Vec terminal_gradient(std::span<const double> x) const {
    Vec g(x.size());
    if (loss_ == LossKind::squared) {
      for (std::size_t k = 0; k < x.size(); ++k) g[k] = x[k] - target_[k];
      return g;
    }
    const Vec p = softmax(x);
    double mass = 0.0;
    for (double t : target_) mass += t;
    for (std::size_t k = 0; k < x.size(); ++k) g[k] = mass * p[k] - target_[k];
    return g;
  }

  SymMatrix terminal_hessian(std::span<const double> x) const {
    const std::size_t n = x.size();
    if (loss_ == LossKind::squared) return SymMatrix::identity(n);
    const Vec p = softmax(x);
    double mass = 0.0;
    for (double t : target_) mass += t;
    Matrix h(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) h(i, j) = mass * ((i == j ? p[i] : 0.0) - p[i] * p[j]);
    return SymMatrix::symmetric_part(h);
  }

  ForwardBackward forward_backward(std::span<const double> theta) const {
    require_same_size(theta.size(), params_, "LayeredNet::forward_backward");
    ForwardBackward fb;
    fb.states.reserve(depth() + 1);
    fb.states.push_back(input_);
    for (std::size_t i = 0; i < depth(); ++i) {
      const auto& l = layers_[i];
      const auto p = layer_params(theta, i);
      const Vec& x = fb.states.back();
      Vec z(l.out), y(l.out);
      for (std::size_t r = 0; r < l.out; ++r) {
        double s = l.bias ? p[l.weight_count() + r] : 0.0;
        for (std::size_t c = 0; c < l.in; ++c) s += p[r * l.in + c] * x[c];
        z[r] = s;
        y[r] = activate(l.activation, s);
      }
      fb.preactivations.push_back(std::move(z));
      fb.states.push_back(std::move(y));
    }
    fb.loss = terminal_loss(fb.states.back());

    fb.grad.assign(params_, 0.0);
    fb.costates.assign(depth() + 1, Vec{});
    fb.costates[depth()] = terminal_gradient(fb.states.back());
    for (std::size_t i = depth(); i-- > 0;) {
      const auto& l = layers_[i];
      const auto p = layer_params(theta, i);
      const Vec& x = fb.states[i];
      const Vec& lam = fb.costates[i + 1];
      Vec dz(l.out);
      for (std::size_t r = 0; r < l.out; ++r)
        dz[r] = lam[r] * activate_d1(l.activation, fb.preactivations[i][r]);
      double* g = fb.grad.data() + segments_[i].offset;
      Vec dx(l.in, 0.0);
      for (std::size_t r = 0; r < l.out; ++r) {
        for (std::size_t c = 0; c < l.in; ++c) {
          g[r * l.in + c] = dz[r] * x[c];
          dx[c] += p[r * l.in + c] * dz[r];
        }
        if (l.bias) g[l.weight_count() + r] = dz[r];
      }
      fb.costates[i] = std::move(dx);
    }
    return fb;
  }

  Evaluation evaluate(std::span<const double> theta) const {
    auto fb = forward_backward(theta);
    return {fb.loss, std::move(fb.grad)};
  }

  Vec output(std::span<const double> theta) const {
    return forward_backward(theta).states.back();
  }

  /// Split a full parameter-space vector into per-layer pieces.
  std::vector<Vec> split(std::span<const double> v) const {
    require_same_size(v.size(), params_, "LayeredNet::split");
    std::vector<Vec> out;
    for (const auto& s : segments_)
      out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(s.offset),
                       v.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size));
    return out;
  }

  /// Deterministic random parameters with scale ~ 1/sqrt(fan_in).
  Vec random_parameters(CounterRng& rng, double gain = 1.0) const {
    Vec theta(params_);
    for (std::size_t i = 0; i < depth(); ++i) {
      const double s = gain / std::sqrt(static_cast<double>(layers_[i].in));
      for (std::size_t k = 0; k < segments_[i].size; ++k)
        theta[segments_[i].offset + k] = s * rng.normal();
    }
    return theta;
  }

 private:
  static Vec softmax(std::span<const double> x) {
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    Vec p(x.size());
    double z = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) z += (p[k] = std::exp(x[k] - m));
    for (double& v : p) v /= z;
    return p;
  }

  std::vector<LayerSpec> layers_;
  Vec input_;
  Vec target_;
  LossKind loss_;
  std::vector<Segment> segments_;
  std::size_t params_ = 0;
};

inline ForwardBackward net_forward_backward(const LayeredNet& net,
                                            std::span<const double> theta) {
  return net.forward_backward(theta);
}

/// Per-layer Jacobians of x_{i+1} = f_i(x_i, theta_i) at an evaluation point.
struct Linearization {
  std::vector<Matrix> state_jacobians;  // A_i = d f_i / d x_i
  std::vector<Matrix> param_jacobians;  // B_i = d f_i / d theta_i
  Vec theta;
  ForwardBackward point;

  std::size_t depth() const noexcept { return state_jacobians.size(); }

  /// Linear rollout delta x_N for per-layer parameter perturbations.
  Vec rollout(const std::vector<Vec>& delta_theta) const {
    require_same_size(delta_theta.size(), depth(), "Linearization::rollout");
    Vec dx(state_jacobians.front().cols(), 0.0);
    for (std::size_t i = 0; i < depth(); ++i) {
      Vec next = matvec(state_jacobians[i], dx);
      const Vec b = matvec(param_jacobians[i], delta_theta[i]);
      for (std::size_t k = 0; k < next.size(); ++k) next[k] += b[k];
      dx = std::move(next);
    }
    return dx;
  }
};

inline Linearization linearize(const LayeredNet& net, std::span<const double> theta) {
  Linearization lin;
  lin.theta.assign(theta.begin(), theta.end());
  lin.point = net.forward_backward(theta);
  for (std::size_t i = 0; i < net.depth(); ++i) {
    const auto& l = net.layers()[i];
    const auto p = net.layer_params(theta, i);
    const Vec& x = lin.point.states[i];
    Matrix a(l.out, l.in), b(l.out, l.param_count());
    for (std::size_t r = 0; r < l.out; ++r) {
      const double d1 = activate_d1(l.activation, lin.point.preactivations[i][r]);
      for (std::size_t c = 0; c < l.in; ++c) {
        a(r, c) = d1 * p[r * l.in + c];
        b(r, r * l.in + c) = d1 * x[c];
      }
      if (l.bias) b(r, l.weight_count() + r) = d1;
    }
    lin.state_jacobians.push_back(std::move(a));
    lin.param_jacobians.push_back(std::move(b));
  }
  return lin;
}

}  // namespace llqrsam
