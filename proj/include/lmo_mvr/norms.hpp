#ifndef LMO_MVR_NORMS_HPP
#define LMO_MVR_NORMS_HPP

// Norm, dual-norm and linear-minimization-oracle directions for the layer
// geometries used by the optimizers: spectral (dual: nuclear), Frobenius
// (self-dual) and max-entry (dual: entrywise l1).

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace lmo_mvr {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class NormKind { Spectral, Euclidean, MaxEntry };

inline std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::Spectral: return "spectral";
    case NormKind::Euclidean: return "euclidean";
    case NormKind::MaxEntry: return "max_entry";
  }
  return "unknown";
}

inline NormKind parse_norm_kind(std::string_view name) {
  if (name == "spectral") return NormKind::Spectral;
  if (name == "euclidean" || name == "frobenius") return NormKind::Euclidean;
  if (name == "max_entry" || name == "maxentry" || name == "linf") return NormKind::MaxEntry;
  throw InvalidInput("unknown norm kind '" + std::string(name) + "'");
}

namespace detail {

inline void require_finite(const Matrix& x, const char* op) {
  if (!x.allFinite()) {
    throw InvalidInput(std::string(op) + ": matrix has non-finite entries");
  }
}

inline Eigen::VectorXd singular_values(const Matrix& x) {
  if (x.size() == 0) return {};
  Eigen::BDCSVD<Matrix> svd(x);
  return svd.singularValues();
}

}  // namespace detail

/// Frobenius inner product <X, Y> = trace(X^T Y).
inline double inner(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw InvalidInput("inner: shape mismatch");
  }
  return x.cwiseProduct(y).sum();
}

inline double norm(NormKind kind, const Matrix& x) {
  detail::require_finite(x, "norm");
  if (x.size() == 0) return 0.0;
  switch (kind) {
    case NormKind::Spectral: return detail::singular_values(x)(0);
    case NormKind::Euclidean: return x.norm();
    case NormKind::MaxEntry: return x.cwiseAbs().maxCoeff();
  }
  return 0.0;
}

inline double dual_norm(NormKind kind, const Matrix& x) {
  detail::require_finite(x, "dual_norm");
  if (x.size() == 0) return 0.0;
  switch (kind) {
    case NormKind::Spectral: return detail::singular_values(x).sum();
    case NormKind::Euclidean: return x.norm();
    case NormKind::MaxEntry: return x.cwiseAbs().sum();
  }
  return 0.0;
}

/// Polar factor U V^T from the compact SVD. Singular values at or below
/// 1e-10 * sigma_max are treated as zero, so rank-deficient inputs map to a
/// partial isometry. The zero matrix maps to zero.
inline Matrix polar_factor_svd(const Matrix& m) {
  detail::require_finite(m, "polar_factor_svd");
  Matrix out = Matrix::Zero(m.rows(), m.cols());
  if (m.size() == 0) return out;
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return out;
  const double cutoff = 1e-10 * s(0);
  Index rank = 0;
  while (rank < s.size() && s(rank) > cutoff) ++rank;
  out.noalias() = svd.matrixU().leftCols(rank) * svd.matrixV().leftCols(rank).transpose();
  return out;
}

/// Odd quintic p(x) = a x + b x^3 + c x^5 applied to singular values.
struct QuinticCoefficients {
  double a;
  double b;
  double c;
};

/// p(1) = 1, p'(1) = 0: singular values in (0, 1] increase monotonically to 1.
inline constexpr QuinticCoefficients kConvergentQuintic{15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0};

/// Coefficients from the practical Muon implementation. Aggressive near zero
/// but p(1) ~ 0.70, so singular values oscillate in roughly [0.7, 1.2]
/// instead of converging to 1.
inline constexpr QuinticCoefficients kMuonQuintic{3.4445, -4.7750, 2.0315};

/// Approximate polar factor by iterating X <- aX + b(XX^T)X + c(XX^T)^2 X on
/// M / ||M||_F.
inline Matrix polar_factor_newton_schulz(const Matrix& m, int iters,
                                         QuinticCoefficients coeffs = kConvergentQuintic) {
  detail::require_finite(m, "polar_factor_newton_schulz");
  if (iters < 1) throw InvalidInput("polar_factor_newton_schulz: iters must be positive");
  const double scale = m.norm();
  if (scale == 0.0) return Matrix::Zero(m.rows(), m.cols());

  // Work with the wide orientation so the Gram matrix is the smaller one.
  const bool transposed = m.rows() > m.cols();
  Matrix x = transposed ? Matrix(m.transpose() / scale) : Matrix(m / scale);
  Matrix gram(x.rows(), x.rows());
  Matrix poly(x.rows(), x.rows());
  for (int t = 0; t < iters; ++t) {
    gram.noalias() = x * x.transpose();
    poly = coeffs.b * gram;
    poly.noalias() += coeffs.c * gram * gram;
    poly.diagonal().array() += coeffs.a;
    x = poly * x;
  }
  if (transposed) return x.transpose();
  return x;
}

/// Unit-ball maximizer D of <M, D>, so that the LMO over the ball of radius r
/// centered at X is X - r * D. M = 0 gives D = 0.
inline Matrix lmo_direction(NormKind kind, const Matrix& m) {
  detail::require_finite(m, "lmo_direction");
  switch (kind) {
    case NormKind::Spectral: return polar_factor_svd(m);
    case NormKind::Euclidean: {
      const double n = m.norm();
      if (n == 0.0) return Matrix::Zero(m.rows(), m.cols());
      return m / n;
    }
    case NormKind::MaxEntry:
      // sign(0) = 0
      return m.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
  }
  return Matrix::Zero(m.rows(), m.cols());
}

/// Constant rho with dual_norm(kind, X) <= rho * ||X||_F for every X of the
/// given shape.
inline double rho_bound(NormKind kind, Index rows, Index cols) {
  if (rows < 1 || cols < 1) throw InvalidInput("rho_bound: rows and cols must be >= 1");
  switch (kind) {
    case NormKind::Spectral: return std::sqrt(static_cast<double>(std::min(rows, cols)));
    case NormKind::Euclidean: return 1.0;
    case NormKind::MaxEntry: return std::sqrt(static_cast<double>(rows) * static_cast<double>(cols));
  }
  return 1.0;
}

}  // namespace lmo_mvr

#endif  // LMO_MVR_NORMS_HPP
