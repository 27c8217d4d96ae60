#include <cmath>

#include <gtest/gtest.h>

#include "llqrsam/numkit.hpp"
#include "llqrsam/random.hpp"

using namespace llqrsam;

TEST(SymEig, IdentityGivesCanonicalBasis) {
  const auto e = sym_eig(SymMatrix::identity(3));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(e.values[i], 1.0);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(e.vectors(j, i), i == j ? 1.0 : 0.0);
  }
}

TEST(SymEig, DiagonalSortedAscending) {
  const auto e = sym_eig(SymMatrix::diagonal({5.0, 2.0}));
  EXPECT_DOUBLE_EQ(e.values[0], 2.0);
  EXPECT_DOUBLE_EQ(e.values[1], 5.0);
}

// Characteristic polynomial of [[2,1],[1,2]]: (2-l)^2 - 1 = 0, l in {1, 3}.
TEST(SymEig, TwoByTwoClosedForm) {
  const auto e = sym_eig(SymMatrix{{2.0, 1.0}, {1.0, 2.0}});
  EXPECT_NEAR(e.values[0], 1.0, 1e-14);
  EXPECT_NEAR(e.values[1], 3.0, 1e-14);
  const double s = 1.0 / std::sqrt(2.0);
  // Sign convention: first nonzero component positive.
  EXPECT_NEAR(e.vectors(0, 0), s, 1e-14);
  EXPECT_NEAR(e.vectors(1, 0), -s, 1e-14);
  EXPECT_NEAR(e.vectors(0, 1), s, 1e-14);
  EXPECT_NEAR(e.vectors(1, 1), s, 1e-14);
}

TEST(SymEig, RejectsAsymmetricInputWithDiagnostic) {
  try {
    SymMatrix m(Matrix{{1.0, 2.0}, {0.0, 1.0}});
    FAIL() << "expected NotSymmetricError";
  } catch (const NotSymmetricError& e) {
    EXPECT_DOUBLE_EQ(e.max_asymmetry, 2.0);
  }
}

TEST(SymEig, RandomReconstructionAndOrthonormality) {
  CounterRng rng(3, 0);
  for (std::size_t n = 1; n <= 12; ++n) {
    Vec spec(n);
    for (double& v : spec) v = rng.uniform(-3.0, 3.0);
    const SymMatrix m = from_spectrum(random_orthogonal(n, rng), spec);
    const auto e = sym_eig(m);
    EXPECT_LT((e.reconstruct() - m).frobenius(), 1e-12 * std::max(1.0, m.frobenius()));
    EXPECT_LT((matmul(e.vectors.transposed(), e.vectors) - Matrix::identity(n)).frobenius(), 1e-12);
    for (std::size_t k = 1; k < n; ++k) EXPECT_LE(e.values[k - 1], e.values[k]);
  }
}

TEST(SpdInvSqrt, IdentityAndDiagonal) {
  const auto i = spd_inv_sqrt(SymMatrix::identity(3));
  EXPECT_LT((i - SymMatrix::identity(3)).frobenius(), 1e-15);
  const auto d = spd_inv_sqrt(SymMatrix::diagonal({4.0, 9.0}));
  EXPECT_NEAR(d(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(d(1, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(d(0, 1), 0.0);
}

TEST(SpdInvSqrt, SquareTimesMatrixIsIdentity) {
  const SymMatrix m{{2.0, 1.0}, {1.0, 2.0}};
  const auto w = spd_inv_sqrt(m);
  const Matrix p = matmul(matmul(w.matrix(), w.matrix()), m.matrix());
  EXPECT_LT((p - Matrix::identity(2)).frobenius(), 1e-14);
}

TEST(SpdInvSqrt, RejectsNonPositiveNamingEigenvalue) {
  try {
    spd_inv_sqrt(SymMatrix::diagonal({1.0, -0.5}));
    FAIL() << "expected NotPositiveDefiniteError";
  } catch (const NotPositiveDefiniteError& e) {
    EXPECT_DOUBLE_EQ(e.eigenvalue, -0.5);
  }
  EXPECT_THROW(spd_inv_sqrt(SymMatrix::diagonal({1.0, 0.0})), NotPositiveDefiniteError);
}

TEST(QuadForm, HandExamples) {
  EXPECT_DOUBLE_EQ(quad_form(Vec{1.0, 0.0}, SymMatrix::identity(2)), 1.0);
  EXPECT_DOUBLE_EQ(quad_form(Vec{1.0, 1.0}, SymMatrix::diagonal({2.0, 3.0})), 5.0);
  // [[2,1],[1,2]] (1,2) = (4,5); (1,2).(4,5) = 14.
  EXPECT_DOUBLE_EQ(quad_form(Vec{1.0, 2.0}, SymMatrix{{2.0, 1.0}, {1.0, 2.0}}), 14.0);
}

TEST(QuadForm, DimensionMismatchThrows) {
  EXPECT_THROW(quad_form(Vec{1.0}, SymMatrix::identity(2)), DimensionError);
}

TEST(Solve, MatchesKnownSolution) {
  const Matrix a{{4.0, 1.0}, {1.0, 3.0}};
  const Vec x = solve(a, Vec{1.0, 2.0});
  EXPECT_NEAR(4.0 * x[0] + x[1], 1.0, 1e-14);
  EXPECT_NEAR(x[0] + 3.0 * x[1], 2.0, 1e-14);
}

TEST(CounterRng, DeterministicAndKeyed) {
  EXPECT_EQ(counter_normal(1, 2, 3), counter_normal(1, 2, 3));
  EXPECT_NE(counter_normal(1, 2, 3), counter_normal(1, 2, 4));
  EXPECT_NE(counter_normal(1, 2, 3), counter_normal(2, 2, 3));
}

TEST(CounterRng, NormalQuantileSymmetry) {
  for (double p : {0.01, 0.1, 0.3, 0.45})
    EXPECT_NEAR(normal_quantile(p), -normal_quantile(1.0 - p), 1e-12);
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-9);
}
