#pragma once

// Dense linear algebra for small symmetric problems: the two-scale
// curvature factors, preconditioner blocks and whitening transforms all
// live in dimensions where a cyclic Jacobi sweep is exact and fast enough.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "llqrsam/errors.hpp"

namespace llqrsam {

using Vec = std::vector<double>;

/// Eigenvalues at or below this are treated as "not positive definite".
inline constexpr double kSpdFloor = 1e-12;

/// Off-diagonal Frobenius norm (relative to ||M||_F) at which Jacobi stops.
inline constexpr double kJacobiTolerance = 1e-14;

inline void require_same_size(std::size_t a, std::size_t b, const char* where) {
  if (a != b) {
    std::ostringstream os;
    os << where << ": dimension mismatch (" << a << " vs " << b << ")";
    throw DimensionError(os.str());
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vec axpy(double alpha, std::span<const double> x, std::span<const double> y) {
  require_same_size(x.size(), y.size(), "axpy");
  Vec out(y.begin(), y.end());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += alpha * x[i];
  return out;
}

inline Vec scaled(double alpha, std::span<const double> x) {
  Vec out(x.begin(), x.end());
  for (double& v : out) v *= alpha;
  return out;
}

inline Vec subtract(std::span<const double> a, std::span<const double> b) {
  return axpy(-1.0, b, a);
}

inline bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      require_same_size(r.size(), cols_, "Matrix(initializer_list)");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  Vec column(std::size_t c) const {
    Vec out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  double frobenius() const { return norm2(data_); }

  Matrix& operator+=(const Matrix& o) {
    require_same_size(rows_, o.rows_, "Matrix::operator+=");
    require_same_size(cols_, o.cols_, "Matrix::operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same_size(rows_, o.rows_, "Matrix::operator-=");
    require_same_size(cols_, o.cols_, "Matrix::operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec data_;
};

inline Vec matvec(const Matrix& m, std::span<const double> x) {
  require_same_size(m.cols(), x.size(), "matvec");
  Vec y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
  return y;
}

inline Vec matvec_transposed(const Matrix& m, std::span<const double> x) {
  require_same_size(m.rows(), x.size(), "matvec_transposed");
  Vec y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) y[c] += row[c] * x[r];
  }
  return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require_same_size(a.cols(), b.rows(), "matmul");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Matrix outer(std::span<const double> a, std::span<const double> b) {
  Matrix m(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
  return m;
}

inline double max_asymmetry(const Matrix& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      worst = std::max(worst, std::abs(m(i, j) - m(j, i)));
  return worst;
}

/// Dense symmetric matrix. Construction checks symmetry to 1e-12 relative
/// to the largest entry and stores the exactly symmetrized average.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Matrix m) : m_(std::move(m)) {
    if (!m_.square() || m_.rows() == 0) {
      std::ostringstream os;
      os << "SymMatrix: expected a non-empty square matrix, got " << m_.rows() << "x"
         << m_.cols();
      throw DimensionError(os.str());
    }
    double scale = 0.0;
    for (double v : m_.data()) scale = std::max(scale, std::abs(v));
    const double asym = max_asymmetry(m_);
    if (asym > 1e-12 * std::max(scale, 1.0)) {
      std::ostringstream os;
      os << "SymMatrix: input is not symmetric (max |a_ij - a_ji| = " << asym << ")";
      throw NotSymmetricError(os.str(), asym);
    }
    for (std::size_t i = 0; i < m_.rows(); ++i)
      for (std::size_t j = i + 1; j < m_.cols(); ++j) {
        const double avg = 0.5 * (m_(i, j) + m_(j, i));
        m_(i, j) = avg;
        m_(j, i) = avg;
      }
  }

  SymMatrix(std::initializer_list<std::initializer_list<double>> rows)
      : SymMatrix(Matrix(rows)) {}

  static SymMatrix identity(std::size_t n) { return SymMatrix(Matrix::identity(n)); }
  static SymMatrix diagonal(std::span<const double> d) {
    return SymMatrix(Matrix::diagonal(d));
  }
  static SymMatrix diagonal(std::initializer_list<double> d) {
    return diagonal(std::span<const double>(d.begin(), d.size()));
  }
  /// Symmetric part (M + M^T)/2 of an arbitrary square matrix.
  static SymMatrix symmetric_part(const Matrix& m) {
    Matrix s = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) s(i, j) = 0.5 * (m(i, j) + m(j, i));
    return SymMatrix(std::move(s));
  }

  std::size_t dim() const noexcept { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  const Matrix& matrix() const noexcept { return m_; }
  double frobenius() const { return m_.frobenius(); }

  friend SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) {
    return SymMatrix(a.m_ + b.m_);
  }
  friend SymMatrix operator-(const SymMatrix& a, const SymMatrix& b) {
    return SymMatrix(a.m_ - b.m_);
  }
  friend SymMatrix operator*(double s, const SymMatrix& a) { return SymMatrix(s * a.m_); }
  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

 private:
  Matrix m_;
};

inline Vec matvec(const SymMatrix& m, std::span<const double> x) {
  return matvec(m.matrix(), x);
}

/// v^T M v (the un-rooted dual norm when M is an inverse preconditioner).
inline double quad_form(std::span<const double> v, const SymMatrix& m) {
  require_same_size(v.size(), m.dim(), "quad_form");
  return dot(v, matvec(m, v));
}

/// Eigenvalues ascending; eigenvectors stored as the columns of `vectors`.
struct EigenDecomp {
  Vec values;
  Matrix vectors;

  std::size_t dim() const noexcept { return values.size(); }
  Vec vector(std::size_t k) const { return vectors.column(k); }

  /// V f(Lambda) V^T for a scalar map f on the spectrum.
  template <class F>
  SymMatrix apply(F&& f) const {
    const std::size_t n = dim();
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
      const double fk = f(values[k]);
      for (std::size_t i = 0; i < n; ++i) {
        const double vik = vectors(i, k) * fk;
        if (vik == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * vectors(j, k);
      }
    }
    return SymMatrix::symmetric_part(out);
  }

  SymMatrix reconstruct() const {
    return apply([](double x) { return x; });
  }
};

/// Cyclic Jacobi eigensolver. Deterministic: eigenpairs sorted ascending
/// (stable for ties) and each eigenvector's first non-negligible component
/// made positive.
inline EigenDecomp sym_eig(const SymMatrix& input) {
  const std::size_t n = input.dim();
  Matrix a = input.matrix();
  Matrix v = Matrix::identity(n);

  const double scale = a.frobenius();
  const double target = kJacobiTolerance * (scale > 0.0 ? scale : 1.0);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < 100 && off_norm() > target; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

  EigenDecomp out{Vec(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.values[k] = a(src, src);
    double sign = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(v(i, src)) > 1e-10) {
        sign = v(i, src) > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = sign * v(i, src);
  }
  return out;
}

inline double min_eigenvalue(const SymMatrix& m) { return sym_eig(m).values.front(); }
inline double max_eigenvalue(const SymMatrix& m) { return sym_eig(m).values.back(); }

inline void require_spd(const EigenDecomp& eig, const char* where) {
  for (double lambda : eig.values) {
    if (!(lambda > kSpdFloor)) {
      std::ostringstream os;
      os << where << ": matrix is not positive definite (eigenvalue " << lambda
         << " <= " << kSpdFloor << ")";
      throw NotPositiveDefiniteError(os.str(), lambda);
    }
  }
}

inline SymMatrix spd_inv_sqrt(const SymMatrix& m) {
  const auto eig = sym_eig(m);
  require_spd(eig, "spd_inv_sqrt");
  return eig.apply([](double x) { return 1.0 / std::sqrt(x); });
}

inline SymMatrix spd_sqrt(const SymMatrix& m) {
  const auto eig = sym_eig(m);
  require_spd(eig, "spd_sqrt");
  return eig.apply([](double x) { return std::sqrt(x); });
}

inline SymMatrix spd_inverse(const SymMatrix& m) {
  const auto eig = sym_eig(m);
  require_spd(eig, "spd_inverse");
  return eig.apply([](double x) { return 1.0 / x; });
}

/// Product of two symmetric matrices that is known to be symmetric
/// (e.g. congruences A B A); symmetrizes away rounding.
inline SymMatrix sym_product(const Matrix& a, const Matrix& b) {
  return SymMatrix::symmetric_part(matmul(a, b));
}

inline SymMatrix congruence(const SymMatrix& outer_factor, const SymMatrix& inner) {
  return sym_product(matmul(outer_factor.matrix(), inner.matrix()), outer_factor.matrix());
}

/// Random orthogonal matrix from Gram-Schmidt on Gaussian columns.
template <class Rng>
Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix q(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    Vec col(n);
    for (;;) {
      for (double& x : col) x = rng.normal();
      for (std::size_t k = 0; k < c; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < n; ++i) proj += q(i, k) * col[i];
        for (std::size_t i = 0; i < n; ++i) col[i] -= proj * q(i, k);
      }
      const double len = norm2(col);
      if (len > 1e-6) {
        for (std::size_t i = 0; i < n; ++i) q(i, c) = col[i] / len;
        break;
      }
    }
  }
  return q;
}

/// Q diag(d) Q^T.
inline SymMatrix from_spectrum(const Matrix& basis, std::span<const double> spectrum) {
  require_same_size(basis.cols(), spectrum.size(), "from_spectrum");
  EigenDecomp e{Vec(spectrum.begin(), spectrum.end()), basis};
  return e.reconstruct();
}

/// Dense solve by Gaussian elimination with partial pivoting.
inline Vec solve(Matrix a, Vec b) {
  const std::size_t n = a.rows();
  require_same_size(a.cols(), n, "solve");
  require_same_size(b.size(), n, "solve");
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) throw std::domain_error("solve: singular matrix");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      b[i] -= f * b[k];
    }
  }
  Vec x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a(k, j) * x[j];
    x[k] = s / a(k, k);
  }
  return x;
}

}  // namespace llqrsam
