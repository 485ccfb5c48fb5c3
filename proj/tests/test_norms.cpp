#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <gtest/gtest.h>

#include "lmo_mvr/norms.hpp"

using namespace lmo_mvr;

namespace {

Matrix randn(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Singular values from the eigenvalues of X^T X; independent of the SVD path.
Eigen::VectorXd singular_values_by_eig(const Matrix& x) {
  const Matrix g = x.cols() <= x.rows() ? Matrix(x.transpose() * x) : Matrix(x * x.transpose());
  Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Matrix>(g).eigenvalues();
  for (Index i = 0; i < ev.size(); ++i) ev(i) = std::sqrt(std::max(0.0, ev(i)));
  std::sort(ev.data(), ev.data() + ev.size(), std::greater<>());
  return ev;
}

Matrix orthonormal_columns(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
  const Matrix r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  for (Index j = 0; j < a.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

// Stochastic hill climb over partial isometries A B^T: a lower bound for the
// supremum of <M, Y> over the spectral unit ball.
double monte_carlo_dual_spectral(const Matrix& m, int proposals, std::mt19937_64& rng) {
  const Index r = std::min(m.rows(), m.cols());
  Matrix a = orthonormal_columns(randn(m.rows(), r, rng));
  Matrix b = orthonormal_columns(randn(m.cols(), r, rng));
  double best = inner(m, a * b.transpose());
  double eps = 0.5;
  for (int i = 0; i < proposals; ++i) {
    const Matrix a2 = orthonormal_columns(a + eps * randn(a.rows(), a.cols(), rng));
    const Matrix b2 = orthonormal_columns(b + eps * randn(b.rows(), b.cols(), rng));
    const double v = inner(m, a2 * b2.transpose());
    if (v > best) {
      best = v;
      a = a2;
      b = b2;
    }
    if (i % 1000 == 999) eps *= 0.6;
  }
  return best;
}

}  // namespace

TEST(Norms, EuclideanPythagorean) {
  Matrix x(1, 2);
  x << 3, 4;
  EXPECT_DOUBLE_EQ(norm(NormKind::Euclidean, x), 5.0);
  EXPECT_DOUBLE_EQ(dual_norm(NormKind::Euclidean, x), 5.0);
}

TEST(Norms, SpectralOfZeroIsZero) { EXPECT_EQ(norm(NormKind::Spectral, Matrix::Zero(3, 2)), 0.0); }

TEST(Norms, SpectralDiagonalMatchesEigenOracle) {
  Matrix x(2, 2);
  x << 3, 0, 0, -4;
  EXPECT_NEAR(norm(NormKind::Spectral, x), singular_values_by_eig(x)(0), 1e-12);
  EXPECT_NEAR(norm(NormKind::Spectral, x), 4.0, 1e-12);
}

TEST(Norms, MaxEntryDualIsL1) {
  Matrix x(2, 2);
  x << 1, -2, 0, 3;
  EXPECT_DOUBLE_EQ(dual_norm(NormKind::MaxEntry, x), 6.0);
  EXPECT_DOUBLE_EQ(norm(NormKind::MaxEntry, x), 3.0);
}

TEST(Norms, NuclearNormMatchesEigenOracleAndMonteCarloSupremum) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const Matrix m = randn(4, 3, rng);
    const double nuc = dual_norm(NormKind::Spectral, m);
    EXPECT_NEAR(nuc, singular_values_by_eig(m).sum(), 1e-10 * nuc);
    const double mc = monte_carlo_dual_spectral(m, 10000, rng);
    EXPECT_LE(mc, nuc * (1 + 1e-12));
    EXPECT_GE(mc, 0.98 * nuc);
  }
}

TEST(Norms, NonFiniteInputIsRejected) {
  Matrix x = Matrix::Ones(2, 2);
  x(0, 1) = std::nan("");
  for (NormKind k : {NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry}) {
    EXPECT_THROW(norm(k, x), InvalidInput);
    EXPECT_THROW(dual_norm(k, x), InvalidInput);
    EXPECT_THROW(lmo_direction(k, x), InvalidInput);
  }
  x(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(polar_factor_svd(x), InvalidInput);
}

TEST(Norms, NormAxiomsOnRandomInputs) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale(-3.0, 3.0);
  for (NormKind k : {NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry}) {
    for (int i = 0; i < 200; ++i) {
      const Matrix x = randn(5, 4, rng);
      const Matrix y = randn(5, 4, rng);
      const double c = scale(rng);
      const double nx = norm(k, x);
      EXPECT_GT(nx, 0.0);
      EXPECT_NEAR(norm(k, c * x), std::abs(c) * nx, 1e-12 * (1 + nx));
      EXPECT_LE(norm(k, x + y), nx + norm(k, y) + 1e-12);
    }
  }
}

TEST(Lmo, Examples) {
  const Matrix i2 = Matrix::Identity(2, 2);
  EXPECT_LT((lmo_direction(NormKind::Spectral, i2) - i2).cwiseAbs().maxCoeff(), 1e-14);

  Matrix m(2, 2);
  m << 1, -2, 0, 3;
  Matrix s(2, 2);
  s << 1, -1, 0, 1;
  EXPECT_EQ(lmo_direction(NormKind::MaxEntry, m), s);

  Matrix e(1, 2);
  e << 3, 4;
  Matrix d = lmo_direction(NormKind::Euclidean, e);
  EXPECT_NEAR(d(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(d(0, 1), 0.8, 1e-15);
}

TEST(Lmo, ZeroMomentumGivesZeroDirection) {
  for (NormKind k : {NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry}) {
    EXPECT_EQ(lmo_direction(k, Matrix::Zero(3, 4)).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Lmo, SharpnessAndFeasibilityProperty) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<Index> dim(1, 12);
  for (NormKind k : {NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry}) {
    for (int i = 0; i < 1000; ++i) {
      const Matrix m = randn(dim(rng), dim(rng), rng);
      const Matrix d = lmo_direction(k, m);
      const double dn = dual_norm(k, m);
      EXPECT_NEAR(inner(m, d), dn, 1e-8 * (1 + dn));
      EXPECT_LE(norm(k, d), 1.0 + 1e-9);
    }
  }
}

TEST(Lmo, HoelderPairing) {
  std::mt19937_64 rng(13);
  for (NormKind k : {NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry}) {
    for (int i = 0; i < 300; ++i) {
      const Matrix x = randn(6, 3, rng);
      const Matrix y = randn(6, 3, rng);
      EXPECT_LE(std::abs(inner(x, y)), dual_norm(k, x) * norm(k, y) * (1 + 1e-12));
    }
  }
}

TEST(Polar, Examples) {
  const Matrix i3 = Matrix::Identity(3, 3);
  EXPECT_LT((polar_factor_svd(i3) - i3).cwiseAbs().maxCoeff(), 1e-14);

  Matrix d(2, 2);
  d << 3, 0, 0, -4;
  Matrix expect(2, 2);
  expect << 1, 0, 0, -1;
  EXPECT_LT((polar_factor_svd(d) - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Polar, RankOneAgreesWithPowerIteration) {
  std::mt19937_64 rng(17);
  Eigen::VectorXd u = randn(5, 1, rng).col(0).normalized();
  Eigen::VectorXd v = randn(4, 1, rng).col(0).normalized();
  const Matrix m = 2.5 * u * v.transpose();
  const Matrix p = polar_factor_svd(m);
  EXPECT_LT((p - u * v.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  // sigma_1 by power iteration on M^T M
  Eigen::VectorXd x = Eigen::VectorXd::Ones(4);
  for (int i = 0; i < 100; ++i) x = (m.transpose() * (m * x)).normalized();
  const double sigma1 = (m * x).norm();
  EXPECT_NEAR(inner(m, p), sigma1, 1e-10);
}

TEST(Polar, SingularValuesAreZeroOrOneAndIdempotent) {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 50; ++i) {
    Matrix m = randn(7, 5, rng);
    if (i % 2) m.col(2) = m.col(0) + m.col(1);  // rank deficient
    const Matrix p = polar_factor_svd(m);
    for (Index j = 0; j < 5; ++j) {
      const double s = singular_values_by_eig(p)(j);
      EXPECT_TRUE(std::abs(s) < 1e-7 || std::abs(s - 1.0) < 1e-10) << s;
    }
    EXPECT_NEAR(inner(m, p), singular_values_by_eig(m).sum(), 1e-8 * singular_values_by_eig(m).sum());
    EXPECT_LT((polar_factor_svd(p) - p).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Polar, ZeroMatrixMapsToZero) { EXPECT_EQ(polar_factor_svd(Matrix::Zero(2, 3)).norm(), 0.0); }

TEST(NewtonSchulz, IdentityIsFixedPoint) {
  const Matrix i2 = Matrix::Identity(2, 2);
  EXPECT_LT((polar_factor_newton_schulz(i2, 5) - i2).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NewtonSchulz, DiagonalConverges) {
  Matrix d(2, 2);
  d << 1, 0, 0, 0.5;
  EXPECT_LT((polar_factor_newton_schulz(d, 5) - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.05);
}

namespace {

// Random n x n with singular values uniform in [lo, 1].
Matrix conditioned(Index n, double lo, std::mt19937_64& rng) {
  const Matrix u = orthonormal_columns(randn(n, n, rng));
  const Matrix v = orthonormal_columns(randn(n, n, rng));
  std::uniform_real_distribution<double> s(lo, 1.0);
  Eigen::VectorXd sv(n);
  for (Index i = 0; i < n; ++i) sv(i) = s(rng);
  sv(0) = lo;
  sv(n - 1) = 1.0;
  return u * sv.asDiagonal() * v.transpose();
}

}  // namespace

TEST(NewtonSchulz, RandomWellConditionedCloseToSvd) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 20; ++i) {
    const Matrix m = conditioned(8, 0.2, rng);
    EXPECT_LE((polar_factor_newton_schulz(m, 5) - polar_factor_svd(m)).cwiseAbs().maxCoeff(), 0.05);
  }
}

TEST(NewtonSchulz, ErrorNonIncreasingInIterations) {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 10; ++i) {
    const Matrix m = conditioned(6, 0.1, rng);
    const Matrix ref = polar_factor_svd(m);
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= 10; ++it) {
      const double err = (polar_factor_newton_schulz(m, it) - ref).norm();
      EXPECT_LE(err, prev + 1e-12);
      prev = err;
    }
  }
}

TEST(NewtonSchulz, TallInputsAreHandled) {
  std::mt19937_64 rng(31);
  const Matrix m = randn(9, 4, rng);
  const Matrix p = polar_factor_newton_schulz(m, 30);
  EXPECT_LT((p - polar_factor_svd(m)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NewtonSchulz, MuonCoefficientsDoNotConvergeToThePolarFactor) {
  // p(1) = a + b + c = 0.701 for the practical Muon quintic, so even the
  // identity is moved away from itself.
  const Matrix i2 = Matrix::Identity(2, 2);
  EXPECT_GT((polar_factor_newton_schulz(i2, 5, kMuonQuintic) - i2).cwiseAbs().maxCoeff(), 0.05);
}

TEST(NewtonSchulz, RejectsNonPositiveIterations) {
  EXPECT_THROW(polar_factor_newton_schulz(Matrix::Identity(2, 2), 0), InvalidInput);
  EXPECT_EQ(polar_factor_newton_schulz(Matrix::Zero(2, 2), 3).norm(), 0.0);
}

TEST(Rho, Values) {
  EXPECT_DOUBLE_EQ(rho_bound(NormKind::Spectral, 4, 3), std::sqrt(3.0));
  EXPECT_DOUBLE_EQ(rho_bound(NormKind::Euclidean, 7, 2), 1.0);
  EXPECT_DOUBLE_EQ(rho_bound(NormKind::MaxEntry, 2, 2), 2.0);
  EXPECT_THROW(rho_bound(NormKind::Spectral, 0, 3), InvalidInput);
}

TEST(Rho, BoundHoldsOnRandomMatrices) {
  std::mt19937_64 rng(37);
  for (NormKind k : {NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry}) {
    for (auto [r, c] : {std::pair<Index, Index>{2, 2}, {4, 3}, {3, 7}, {10, 10}}) {
      for (int i = 0; i < 1000; ++i) {
        const Matrix x = randn(r, c, rng);
        EXPECT_LE(dual_norm(k, x), rho_bound(k, r, c) * x.norm() * (1 + 1e-12));
      }
    }
  }
}

TEST(Rho, SpectralBoundIsAttainedByOrthogonalMatrices) {
  std::mt19937_64 rng(41);
  const Matrix q = orthonormal_columns(randn(5, 5, rng));
  EXPECT_NEAR(dual_norm(NormKind::Spectral, q), rho_bound(NormKind::Spectral, 5, 5) * q.norm(), 1e-10);
}

TEST(NormKindNames, RoundTrip) {
  for (NormKind k : {NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry}) {
    EXPECT_EQ(parse_norm_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_norm_kind("nuclear"), InvalidInput);
}
