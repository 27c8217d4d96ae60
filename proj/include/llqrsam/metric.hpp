#pragma once

// Structured inverse preconditioners U and the layerwise LQR learner.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "llqrsam/errors.hpp"
#include "llqrsam/landscapes.hpp"
#include "llqrsam/numkit.hpp"

namespace llqrsam {

enum class MetricStructure { identity, diagonal, dense, layer_blocks };
enum class BlockKind { diagonal, dense, kronecker };

inline const char* to_string(MetricStructure s) {
  switch (s) {
    case MetricStructure::identity: return "identity";
    case MetricStructure::diagonal: return "diagonal";
    case MetricStructure::dense: return "dense";
    case MetricStructure::layer_blocks: return "layer_blocks";
  }
  return "?";
}

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::diagonal: return "diagonal";
    case BlockKind::dense: return "dense";
    case BlockKind::kronecker: return "kronecker";
  }
  return "?";
}

namespace detail {

inline std::size_t tri_count(std::size_t n) { return n * (n + 1) / 2; }

inline void push_upper(const SymMatrix& m, Vec& out) {
  for (std::size_t i = 0; i < m.dim(); ++i)
    for (std::size_t j = i; j < m.dim(); ++j) out.push_back(m(i, j));
}

inline SymMatrix read_upper(std::size_t n, std::span<const double> p) {
  Matrix m(n, n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      m(i, j) = p[k];
      m(j, i) = p[k];
      ++k;
    }
  return SymMatrix(std::move(m));
}

// Gradient of a scalar w.r.t. the upper-triangle parameters of a symmetric
// matrix S, given D = dJ/dS treated as an unconstrained matrix.
inline void push_sym_grad(const Matrix& d, Vec& out) {
  for (std::size_t i = 0; i < d.rows(); ++i)
    for (std::size_t j = i; j < d.cols(); ++j) out.push_back(i == j ? d(i, i) : d(i, j) + d(j, i));
}

inline SymMatrix clamp_spectrum(const SymMatrix& m, double lo, double hi) {
  return sym_eig(m).apply([&](double x) { return std::clamp(x, lo, hi); });
}

}  // namespace detail

/// One block of U acting on parameters [offset, offset + size).
/// A Kronecker block acts on a row-major rows x cols weight matrix G as
/// L G R, i.e. U = L (x) R.
struct MetricBlock {
  BlockKind kind = BlockKind::diagonal;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec diag;
  SymMatrix dense;
  SymMatrix left;
  SymMatrix right;

  static MetricBlock make_diagonal(std::size_t offset, Vec d) {
    MetricBlock b;
    b.kind = BlockKind::diagonal;
    b.offset = offset;
    b.size = d.size();
    b.diag = std::move(d);
    return b;
  }
  static MetricBlock make_dense(std::size_t offset, SymMatrix m) {
    MetricBlock b;
    b.kind = BlockKind::dense;
    b.offset = offset;
    b.size = m.dim();
    b.dense = std::move(m);
    return b;
  }
  static MetricBlock make_kronecker(std::size_t offset, SymMatrix l, SymMatrix r) {
    MetricBlock b;
    b.kind = BlockKind::kronecker;
    b.offset = offset;
    b.rows = l.dim();
    b.cols = r.dim();
    b.size = b.rows * b.cols;
    b.left = std::move(l);
    b.right = std::move(r);
    return b;
  }

  std::size_t param_count() const {
    switch (kind) {
      case BlockKind::diagonal: return size;
      case BlockKind::dense: return detail::tri_count(size);
      case BlockKind::kronecker: return detail::tri_count(rows) + detail::tri_count(cols);
    }
    return 0;
  }

  void append_params(Vec& out) const {
    switch (kind) {
      case BlockKind::diagonal: out.insert(out.end(), diag.begin(), diag.end()); break;
      case BlockKind::dense: detail::push_upper(dense, out); break;
      case BlockKind::kronecker:
        detail::push_upper(left, out);
        detail::push_upper(right, out);
        break;
    }
  }

  MetricBlock with_params(std::span<const double> p) const {
    require_same_size(p.size(), param_count(), "MetricBlock::with_params");
    MetricBlock b = *this;
    switch (kind) {
      case BlockKind::diagonal: b.diag.assign(p.begin(), p.end()); break;
      case BlockKind::dense: b.dense = detail::read_upper(size, p); break;
      case BlockKind::kronecker: {
        const std::size_t nl = detail::tri_count(rows);
        b.left = detail::read_upper(rows, p.subspan(0, nl));
        b.right = detail::read_upper(cols, p.subspan(nl));
        break;
      }
    }
    return b;
  }

  void apply(std::span<const double> g, std::span<double> out) const {
    switch (kind) {
      case BlockKind::diagonal:
        for (std::size_t k = 0; k < size; ++k) out[k] = diag[k] * g[k];
        break;
      case BlockKind::dense: {
        const Vec y = matvec(dense, g);
        std::copy(y.begin(), y.end(), out.begin());
        break;
      }
      case BlockKind::kronecker: {
        // out = L G R with G row-major rows x cols.
        Vec lg(size, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t k = 0; k < rows; ++k) {
            const double l = left(i, k);
            if (l == 0.0) continue;
            for (std::size_t j = 0; j < cols; ++j) lg[i * cols + j] += l * g[k * cols + j];
          }
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < cols; ++k) s += lg[i * cols + k] * right(k, j);
            out[i * cols + j] = s;
          }
        break;
      }
    }
  }

  /// dJ/d(params) given p = dJ/d(delta theta) and delta theta = -U g on
  /// this block.
  void append_param_grad(std::span<const double> p, std::span<const double> g, Vec& out) const {
    switch (kind) {
      case BlockKind::diagonal:
        for (std::size_t k = 0; k < size; ++k) out.push_back(-p[k] * g[k]);
        break;
      case BlockKind::dense: {
        Matrix d(size, size);
        for (std::size_t i = 0; i < size; ++i)
          for (std::size_t j = 0; j < size; ++j) d(i, j) = -p[i] * g[j];
        detail::push_sym_grad(d, out);
        break;
      }
      case BlockKind::kronecker: {
        Matrix pm(rows, cols), gm(rows, cols);
        for (std::size_t k = 0; k < size; ++k) {
          pm.data()[k] = p[k];
          gm.data()[k] = g[k];
        }
        // dJ/dL = -P R G^T,  dJ/dR = -G^T L P
        const Matrix dl = -1.0 * matmul(matmul(pm, right.matrix()), gm.transposed());
        const Matrix dr = -1.0 * matmul(matmul(gm.transposed(), left.matrix()), pm);
        detail::push_sym_grad(dl, out);
        detail::push_sym_grad(dr, out);
        break;
      }
    }
  }

  Matrix realized() const {
    Matrix m(size, size);
    Vec e(size, 0.0), col(size);
    for (std::size_t c = 0; c < size; ++c) {
      e[c] = 1.0;
      apply(e, col);
      for (std::size_t r = 0; r < size; ++r) m(r, c) = col[r];
      e[c] = 0.0;
    }
    return m;
  }

  std::pair<double, double> extreme_eigenvalues() const {
    switch (kind) {
      case BlockKind::diagonal: {
        const auto [lo, hi] = std::minmax_element(diag.begin(), diag.end());
        return {*lo, *hi};
      }
      case BlockKind::dense: {
        const auto v = sym_eig(dense).values;
        return {v.front(), v.back()};
      }
      case BlockKind::kronecker: {
        const auto l = sym_eig(left).values;
        const auto r = sym_eig(right).values;
        const double c[] = {l.front() * r.front(), l.front() * r.back(), l.back() * r.front(),
                            l.back() * r.back()};
        return {*std::min_element(std::begin(c), std::end(c)),
                *std::max_element(std::begin(c), std::end(c))};
      }
    }
    return {0.0, 0.0};
  }

  /// Pull the spectrum into [lo, hi]. Kronecker factors are first rebalanced
  /// to equal geometric scale, then each is clamped to [sqrt(lo), sqrt(hi)].
  MetricBlock clamped(double lo, double hi) const {
    MetricBlock b = *this;
    switch (kind) {
      case BlockKind::diagonal:
        for (double& d : b.diag) d = std::clamp(d, lo, hi);
        break;
      case BlockKind::dense: b.dense = detail::clamp_spectrum(dense, lo, hi); break;
      case BlockKind::kronecker: {
        const auto l = sym_eig(left).values;
        const auto r = sym_eig(right).values;
        double c = 1.0;
        if (l.front() > 0.0 && r.front() > 0.0) {
          c = std::sqrt(std::sqrt(r.front() * r.back()) / std::sqrt(l.front() * l.back()));
        }
        b.left = detail::clamp_spectrum(c * left, std::sqrt(lo), std::sqrt(hi));
        b.right = detail::clamp_spectrum((1.0 / c) * right, std::sqrt(lo), std::sqrt(hi));
        break;
      }
    }
    return b;
  }
};

struct SpectralBounds {
  double lo = 1e-6;
  double hi = 1e6;
};

class MetricState {
 public:
  MetricState() = default;

  static MetricState identity(std::size_t n) {
    MetricState s;
    s.structure_ = MetricStructure::identity;
    s.dim_ = n;
    return s;
  }

  static MetricState diagonal(Vec d) {
    MetricState s;
    s.structure_ = MetricStructure::diagonal;
    s.dim_ = d.size();
    s.blocks_.push_back(MetricBlock::make_diagonal(0, std::move(d)));
    return s;
  }

  static MetricState dense(SymMatrix m) {
    MetricState s;
    s.structure_ = MetricStructure::dense;
    s.dim_ = m.dim();
    s.blocks_.push_back(MetricBlock::make_dense(0, std::move(m)));
    return s;
  }

  /// Per-layer blocks initialized to `scale * I`. Weight matrices get the
  /// requested kind; biases are always diagonal.
  static MetricState layer_blocks(const LayeredNet& net, BlockKind weight_kind,
                                  double scale = 1.0) {
    MetricState s;
    s.structure_ = MetricStructure::layer_blocks;
    s.dim_ = net.dim();
    for (std::size_t i = 0; i < net.depth(); ++i) {
      const auto& l = net.layers()[i];
      const std::size_t off = net.segments()[i].offset;
      const std::size_t nw = l.weight_count();
      switch (weight_kind) {
        case BlockKind::diagonal:
          s.blocks_.push_back(MetricBlock::make_diagonal(off, Vec(nw, scale)));
          break;
        case BlockKind::dense:
          s.blocks_.push_back(MetricBlock::make_dense(off, scale * SymMatrix::identity(nw)));
          break;
        case BlockKind::kronecker:
          s.blocks_.push_back(MetricBlock::make_kronecker(
              off, std::sqrt(scale) * SymMatrix::identity(l.out),
              std::sqrt(scale) * SymMatrix::identity(l.in)));
          break;
      }
      if (l.bias) s.blocks_.push_back(MetricBlock::make_diagonal(off + nw, Vec(l.out, scale)));
    }
    return s;
  }

  MetricStructure structure() const noexcept { return structure_; }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<MetricBlock>& blocks() const noexcept { return blocks_; }

  double ema_beta = 0.95;
  std::size_t cadence = 500;
  std::size_t step_counter = 0;
  SpectralBounds bounds;

  bool refresh_due() const noexcept { return cadence > 0 && step_counter % cadence == 0; }

  Vec apply(std::span<const double> g) const {
    require_same_size(g.size(), dim_, "apply_metric");
    if (structure_ == MetricStructure::identity) return Vec(g.begin(), g.end());
    Vec out(dim_, 0.0);
    for (const auto& b : blocks_)
      b.apply(g.subspan(b.offset, b.size), std::span<double>(out).subspan(b.offset, b.size));
    return out;
  }

  double quad(std::span<const double> g) const { return dot(g, apply(g)); }

  double dual_norm(std::span<const double> g) const {
    const double q = quad(g);
    if (q < 0.0) {
      std::ostringstream os;
      os << "dual_norm: negative quadratic form " << q << " (metric is not positive definite)";
      throw NotPositiveDefiniteError(os.str(), q);
    }
    return std::sqrt(q);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.param_count();
    return n;
  }

  Vec params() const {
    Vec out;
    out.reserve(param_count());
    for (const auto& b : blocks_) b.append_params(out);
    return out;
  }

  MetricState with_params(std::span<const double> p) const {
    require_same_size(p.size(), param_count(), "MetricState::with_params");
    MetricState s = *this;
    std::size_t k = 0;
    for (auto& b : s.blocks_) {
      const std::size_t n = b.param_count();
      b = b.with_params(p.subspan(k, n));
      k += n;
    }
    return s;
  }

  /// dJ/d(params) for delta theta = -U g given p = dJ/d(delta theta).
  Vec param_gradient(std::span<const double> p, std::span<const double> g) const {
    require_same_size(p.size(), dim_, "MetricState::param_gradient");
    require_same_size(g.size(), dim_, "MetricState::param_gradient");
    Vec out;
    out.reserve(param_count());
    for (const auto& b : blocks_)
      b.append_param_grad(p.subspan(b.offset, b.size), g.subspan(b.offset, b.size), out);
    return out;
  }

  /// Dense realization of U (test and diagnostic use).
  SymMatrix realized() const {
    if (structure_ == MetricStructure::identity) return SymMatrix::identity(dim_);
    Matrix m(dim_, dim_);
    for (const auto& b : blocks_) {
      const Matrix r = b.realized();
      for (std::size_t i = 0; i < b.size; ++i)
        for (std::size_t j = 0; j < b.size; ++j) m(b.offset + i, b.offset + j) = r(i, j);
    }
    return SymMatrix::symmetric_part(m);
  }

  std::pair<double, double> extreme_eigenvalues() const {
    if (structure_ == MetricStructure::identity) return {1.0, 1.0};
    double lo = blocks_.front().extreme_eigenvalues().first;
    double hi = lo;
    for (const auto& b : blocks_) {
      const auto [l, h] = b.extreme_eigenvalues();
      lo = std::min(lo, l);
      hi = std::max(hi, h);
    }
    return {lo, hi};
  }

  bool within_bounds() const {
    const auto [lo, hi] = extreme_eigenvalues();
    return lo >= bounds.lo * (1.0 - 1e-12) && hi <= bounds.hi * (1.0 + 1e-12);
  }

  MetricState clamped() const {
    MetricState s = *this;
    for (auto& b : s.blocks_) b = b.clamped(bounds.lo, bounds.hi);
    return s;
  }

  bool same_layout(const MetricState& o) const {
    if (structure_ != o.structure_ || dim_ != o.dim_ || blocks_.size() != o.blocks_.size())
      return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& a = blocks_[i];
      const auto& b = o.blocks_[i];
      if (a.kind != b.kind || a.offset != b.offset || a.size != b.size || a.rows != b.rows ||
          a.cols != b.cols)
        return false;
    }
    return true;
  }

 private:
  MetricStructure structure_ = MetricStructure::identity;
  std::size_t dim_ = 0;
  std::vector<MetricBlock> blocks_;
};

inline Vec apply_metric(const MetricState& u, std::span<const double> g) { return u.apply(g); }
inline double dual_norm(const MetricState& u, std::span<const double> g) {
  return u.dual_norm(g);
}

struct EmaResult {
  MetricState state;
  bool clamped = false;
  std::vector<std::string> warnings;
};

/// beta * old + (1 - beta) * fresh on the parameterized entries, then a
/// spectral-bound check with clamping.
inline EmaResult ema_update(const MetricState& old, const MetricState& fresh, double beta) {
  if (!old.same_layout(fresh)) throw std::invalid_argument("ema_update: structure mismatch");
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("ema_update: beta must be in [0,1]");
  EmaResult r;
  if (old.structure() == MetricStructure::identity) {
    r.state = old;
    return r;
  }
  const Vec a = old.params();
  const Vec b = fresh.params();
  Vec mix(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) mix[k] = beta * a[k] + (1.0 - beta) * b[k];
  r.state = old.with_params(mix);
  if (!r.state.within_bounds()) {
    const auto [lo, hi] = r.state.extreme_eigenvalues();
    std::ostringstream os;
    os << "ema_update: spectrum [" << lo << ", " << hi << "] outside bounds [" << old.bounds.lo
       << ", " << old.bounds.hi << "]; clamped";
    r.warnings.push_back(os.str());
    r.state = r.state.clamped();
    r.clamped = true;
  }
  return r;
}

// ---------------------------------------------------------------------------
// LQR blocks and the relaxed objective

enum class Divergence { ngd, newton };

inline const char* to_string(Divergence d) { return d == Divergence::ngd ? "ngd" : "newton"; }

struct LqrBlocks {
  Divergence divergence = Divergence::ngd;
  std::vector<SymMatrix> state_cost;   // Q_i, i < N (dim of x_i)
  std::vector<SymMatrix> control_cost; // R_i
  std::vector<Matrix> cross_cost;      // M_i (params_i x dim x_i)
  SymMatrix terminal_cost;             // Q_N
  Vec terminal_linear;                 // grad_{x_N} loss

  std::size_t depth() const noexcept { return state_cost.size(); }
};

inline LqrBlocks form_lqr_blocks(const Linearization& lin, const LayeredNet& net,
                                 Divergence divergence, double damping = 1e-3) {
  if (damping < 0.0) throw std::invalid_argument("form_lqr_blocks: damping must be >= 0");
  if (net.loss_kind() == LossKind::softmax_cross_entropy) {
    double mass = 0.0;
    for (double t : net.target()) {
      if (t < 0.0) throw std::invalid_argument("form_lqr_blocks: negative target probability");
      mass += t;
    }
    if (std::abs(mass - 1.0) > 1e-9)
      throw std::invalid_argument(
          "form_lqr_blocks: cross-entropy target must be a probability vector");
  }
  LqrBlocks b;
  b.divergence = divergence;
  const auto& x_n = lin.point.states.back();
  b.terminal_cost = net.terminal_hessian(x_n);
  b.terminal_linear = net.terminal_gradient(x_n);
  for (std::size_t i = 0; i < net.depth(); ++i) {
    const auto& l = net.layers()[i];
    Matrix q(l.in, l.in);
    if (divergence == Divergence::newton && l.activation != Activation::identity) {
      const auto p = net.layer_params(lin.theta, i);
      const Vec& lam = lin.point.costates[i + 1];
      for (std::size_t r = 0; r < l.out; ++r) {
        const double c = lam[r] * activate_d2(l.activation, lin.point.preactivations[i][r]);
        if (c == 0.0) continue;
        for (std::size_t a = 0; a < l.in; ++a)
          for (std::size_t bb = 0; bb < l.in; ++bb)
            q(a, bb) += c * p[r * l.in + a] * p[r * l.in + bb];
      }
    }
    b.state_cost.push_back(SymMatrix::symmetric_part(q));
    b.control_cost.push_back(damping * SymMatrix::identity(l.param_count()));
    b.cross_cost.emplace_back(l.param_count(), l.in);
  }
  return b;
}

/// Forward rollout of delta theta_i = -U_i g_i plus the costs.
struct RelaxedRollout {
  double value = 0.0;
  Vec delta_theta;          // full parameter vector
  std::vector<Vec> delta_x; // delta x_0 .. delta x_N
};

inline RelaxedRollout relaxed_rollout(const MetricState& u, const LqrBlocks& blocks,
                                      const Linearization& lin, const LayeredNet& net,
                                      std::span<const double> grad) {
  require_same_size(blocks.depth(), lin.depth(), "relaxed_objective(depth)");
  RelaxedRollout r;
  r.delta_theta = scaled(-1.0, u.apply(grad));
  r.delta_x.push_back(Vec(lin.state_jacobians.front().cols(), 0.0));
  double j = 0.0;
  for (std::size_t i = 0; i < lin.depth(); ++i) {
    const auto& seg = net.segments()[i];
    const std::span<const double> dth(r.delta_theta.data() + seg.offset, seg.size);
    const Vec& dx = r.delta_x.back();
    j += 0.5 * quad_form(dx, blocks.state_cost[i]) + 0.5 * quad_form(dth, blocks.control_cost[i]) +
         dot(dth, matvec(blocks.cross_cost[i], dx));
    Vec next = matvec(lin.state_jacobians[i], dx);
    const Vec bu = matvec(lin.param_jacobians[i], dth);
    for (std::size_t k = 0; k < next.size(); ++k) next[k] += bu[k];
    r.delta_x.push_back(std::move(next));
  }
  const Vec& dxn = r.delta_x.back();
  j += dot(blocks.terminal_linear, dxn) + 0.5 * quad_form(dxn, blocks.terminal_cost);
  r.value = j;
  return r;
}

inline double relaxed_objective(const MetricState& u, const LqrBlocks& blocks,
                                const Linearization& lin, const LayeredNet& net,
                                std::span<const double> grad) {
  return relaxed_rollout(u, blocks, lin, net, grad).value;
}

/// dJ/d(delta theta) by one adjoint sweep over an existing rollout.
inline Vec relaxed_control_gradient(const RelaxedRollout& r, const LqrBlocks& blocks,
                                    const Linearization& lin, const LayeredNet& net) {
  Vec out(r.delta_theta.size(), 0.0);
  const std::size_t n = lin.depth();
  Vec p = axpy(1.0, matvec(blocks.terminal_cost, r.delta_x[n]), blocks.terminal_linear);
  for (std::size_t i = n; i-- > 0;) {
    const auto& seg = net.segments()[i];
    const std::span<const double> dth(r.delta_theta.data() + seg.offset, seg.size);
    const Vec& dx = r.delta_x[i];
    Vec gu = matvec(blocks.control_cost[i], dth);
    const Vec m_dx = matvec(blocks.cross_cost[i], dx);
    const Vec bt_p = matvec_transposed(lin.param_jacobians[i], p);
    for (std::size_t k = 0; k < seg.size; ++k) out[seg.offset + k] = gu[k] + m_dx[k] + bt_p[k];
    Vec next = matvec(blocks.state_cost[i], dx);
    const Vec mt = matvec_transposed(blocks.cross_cost[i], dth);
    const Vec at = matvec_transposed(lin.state_jacobians[i], p);
    for (std::size_t k = 0; k < next.size(); ++k) next[k] += mt[k] + at[k];
    p = std::move(next);
  }
  return out;
}

/// Gradient of J over U's parameterized entries (order of MetricState::params).
inline Vec relaxed_objective_grad(const MetricState& u, const LqrBlocks& blocks,
                                  const Linearization& lin, const LayeredNet& net,
                                  std::span<const double> grad) {
  const auto r = relaxed_rollout(u, blocks, lin, net, grad);
  return u.param_gradient(relaxed_control_gradient(r, blocks, lin, net), grad);
}

// ---------------------------------------------------------------------------
// Learner

struct InnerSolverConfig {
  std::size_t steps = 50;
  double lr = 1e-3;
  double momentum = 0.9;
  int max_halvings = 10;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("InnerSolverConfig: inner_steps must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("InnerSolverConfig: inner_lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("InnerSolverConfig: inner momentum must be in [0,1)");
  }
};

struct RefreshReport {
  MetricState state;
  bool accepted = false;
  bool clamped = false;
  int halvings = 0;
  double objective_start = 0.0;
  double objective_end = 0.0;
  std::vector<std::string> warnings;
};

/// T heavy-ball steps on J from the current U, EMA, bound check.
inline RefreshReport learn_preconditioner(const MetricState& state, const LayeredNet& net,
                                          std::span<const double> theta, Divergence divergence,
                                          const InnerSolverConfig& cfg, double damping = 1e-3) {
  cfg.validate();
  if (state.structure() == MetricStructure::identity)
    throw std::invalid_argument("learn_preconditioner: identity metric has nothing to learn");
  const Linearization lin = linearize(net, theta);
  const LqrBlocks blocks = form_lqr_blocks(lin, net, divergence, damping);
  const Vec& grad = lin.point.grad;

  RefreshReport rep;
  rep.objective_start = relaxed_objective(state, blocks, lin, net, grad);
  const Vec u0 = state.params();
  double lr = cfg.lr;
  for (int attempt = 0; attempt <= cfg.max_halvings; ++attempt) {
    Vec u = u0;
    Vec v(u.size(), 0.0);
    bool finite = true;
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      const Vec dj = relaxed_objective_grad(state.with_params(u), blocks, lin, net, grad);
      for (std::size_t k = 0; k < u.size(); ++k) {
        v[k] = cfg.momentum * v[k] - lr * dj[k];
        u[k] += v[k];
      }
      if (!all_finite(u)) {
        finite = false;
        break;
      }
    }
    double jt = 0.0;
    MetricState fresh;
    if (finite) {
      fresh = state.with_params(u);
      jt = relaxed_objective(fresh, blocks, lin, net, grad);
    }
    if (finite && std::isfinite(jt) && jt <= rep.objective_start) {
      rep.halvings = attempt;
      rep.objective_end = jt;
      auto ema = ema_update(state, fresh, state.ema_beta);
      rep.state = std::move(ema.state);
      rep.clamped = ema.clamped;
      rep.warnings = std::move(ema.warnings);
      rep.accepted = true;
      return rep;
    }
    lr *= 0.5;
  }
  rep.state = state;
  rep.halvings = cfg.max_halvings;
  rep.objective_end = rep.objective_start;
  rep.warnings.push_back(
      "learn_preconditioner: inner solver failed to decrease the relaxed objective; "
      "keeping the previous metric");
  return rep;
}

}  // namespace llqrsam
