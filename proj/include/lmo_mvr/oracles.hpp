#ifndef LMO_MVR_ORACLES_HPP
#define LMO_MVR_ORACLES_HPP

// Stochastic gradient oracles with replayable samples and the synthetic
// layer-structured problems used by the harness.
//
// A Sample carries a seed (for injected noise) and, for finite-sum problems, a
// minibatch index set drawn uniformly with replacement. stoch_grad is a pure
// function of (problem, sample, X), so the same sample can be evaluated at two
// different iterates.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "lmo_mvr/model.hpp"
#include "lmo_mvr/norms.hpp"

namespace lmo_mvr {

using RngState = std::mt19937_64;

struct Sample {
  std::uint64_t seed = 0;
  std::vector<std::size_t> indices;  // empty: full dataset (or no dataset)
};

namespace detail {

inline Matrix gaussian_matrix(Index rows, Index cols, RngState& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

inline Matrix random_orthogonal(Index n, RngState& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(n, n, rng));
  return qr.householderQ() * Matrix::Identity(n, n);
}

inline Matrix gather_rows(const Matrix& a, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = a.row(static_cast<Index>(idx[r]));
  return out;
}

inline std::vector<int> gather(const std::vector<int>& v, const std::vector<std::size_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) out[r] = v[idx[r]];
  return out;
}

inline Matrix gather_cols(const Matrix& a, const std::vector<std::size_t>& idx) {
  Matrix out(a.rows(), static_cast<Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Index>(c)) = a.col(static_cast<Index>(idx[c]));
  return out;
}

/// Row-wise softmax, shifted by the row max.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Index r = 0; r < p.rows(); ++r) {
    const double mx = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - mx).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

/// Mean cross-entropy of row-wise softmax(logits) against integer labels.
inline double cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    total += lse - logits(r, labels[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(logits.rows());
}

/// (softmax(logits) - onehot(labels)) / batch
inline Matrix cross_entropy_residual(const Matrix& logits, const std::vector<int>& labels) {
  Matrix p = softmax_rows(logits);
  for (Index r = 0; r < p.rows(); ++r) p(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
  return p / static_cast<double>(p.rows());
}

inline std::vector<int> sample_labels(const Matrix& logits, RngState& rng) {
  Matrix p = softmax_rows(logits);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> labels(static_cast<std::size_t>(p.rows()));
  for (Index r = 0; r < p.rows(); ++r) {
    double u = unif(rng);
    Index c = 0;
    while (c + 1 < p.cols() && u > p(r, c)) {
      u -= p(r, c);
      ++c;
    }
    labels[static_cast<std::size_t>(r)] = static_cast<int>(c);
  }
  return labels;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Problem definitions

/// f(X) = sum_i 1/2 <X_i - X*_i, P_i (X_i - X*_i)> with SPD P_i (rows x rows).
/// Stochastic gradients add i.i.d. N(0, noise^2) entries generated from the
/// sample seed, so the noise cancels in same-sample gradient differences.
struct NoisyQuadratic {
  ModelShape shape;
  std::vector<Matrix> curvature;
  ParamVector minimizer;
  double noise = 0.0;
};

/// Multinomial logistic regression, W in R^{features x classes}, on a fixed
/// synthetic dataset; f(W) = mean cross-entropy + l2/2 ||W||_F^2.
struct LogisticRegression {
  ModelShape shape;
  Matrix features;  // n x d
  std::vector<int> labels;
  std::size_t batch = 8;  // 0 or >= n: full dataset
  double l2 = 0.0;
};

/// f(W1, W2) = 1/(2n) ||W2 W1 A - B||_F^2 with column minibatches.
struct MatrixFactorization {
  ModelShape shape;  // W1: hidden x in, W2: out x hidden
  Matrix inputs;     // in x n
  Matrix targets;    // out x n
  std::size_t batch = 8;
  bool exact_fit = false;
  ParamVector init;
};

/// logits = W2 tanh(W1 a), mean cross-entropy.
struct TwoLayerMlp {
  ModelShape shape;  // W1: hidden x d, W2: classes x hidden
  Matrix features;   // n x d
  std::vector<int> labels;
  std::size_t batch = 8;
  ParamVector init;
};

struct QuadraticOptions {
  std::vector<LayerSpec> layers{{8, 8, NormKind::Spectral, 1.0}};
  double curvature_min = 0.5;
  double curvature_max = 1.0;
  double noise = 0.0;
  double minimizer_norm = 1.0;  // ||X*_i||_(i)
};

struct LogisticOptions {
  std::size_t n_points = 1024;
  Index features = 16;
  Index classes = 4;
  std::size_t batch = 8;
  double feature_scale = 1.0;
  double teacher_scale = 1.0;
  double l2 = 0.0;
  NormKind norm = NormKind::Spectral;
  double radius_scale = 1.0;
};

struct FactorizationOptions {
  std::size_t n_points = 256;
  Index in_dim = 8;
  Index hidden = 6;
  Index out_dim = 5;
  std::size_t batch = 8;
  double target_noise = 0.0;
  double init_scale = 0.3;
  NormKind norm = NormKind::Spectral;
  double radius_scale = 1.0;
};

struct MlpOptions {
  std::size_t n_points = 512;
  Index features = 8;
  Index hidden = 16;
  Index classes = 3;
  std::size_t batch = 8;
  double init_scale = 0.3;
  NormKind norm = NormKind::Spectral;
  double radius_scale = 1.0;
};

NoisyQuadratic make_noisy_quadratic(const QuadraticOptions& opt, std::uint64_t seed);
LogisticRegression make_logistic_regression(const LogisticOptions& opt, std::uint64_t seed);
MatrixFactorization make_matrix_factorization(const FactorizationOptions& opt, std::uint64_t seed);
TwoLayerMlp make_two_layer_mlp(const MlpOptions& opt, std::uint64_t seed);

namespace detail {

inline bool full_batch(std::size_t batch, std::size_t n) { return batch == 0 || batch >= n; }

// Quadratic ---------------------------------------------------------------

inline double value_of(const NoisyQuadratic& p, const ParamVector& x) {
  double v = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Matrix d = x[i] - p.minimizer[i];
    v += 0.5 * inner(d, p.curvature[i] * d);
  }
  return v;
}

inline ParamVector grad_of(const NoisyQuadratic& p, const ParamVector& x) {
  ParamVector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = p.curvature[i] * (x[i] - p.minimizer[i]);
  return g;
}

inline ParamVector stoch_grad_of(const NoisyQuadratic& p, const Sample& s, const ParamVector& x) {
  ParamVector g = grad_of(p, x);
  if (p.noise > 0.0) {
    RngState rng(s.seed);
    for (auto& b : g) b += gaussian_matrix(b.rows(), b.cols(), rng, p.noise);
  }
  return g;
}

// Logistic ----------------------------------------------------------------

inline double value_of(const LogisticRegression& p, const ParamVector& w) {
  return cross_entropy(p.features * w[0], p.labels) + 0.5 * p.l2 * w[0].squaredNorm();
}

inline ParamVector logistic_grad(const LogisticRegression& p, const Matrix& a,
                                 const std::vector<int>& labels, const ParamVector& w) {
  Matrix g = a.transpose() * cross_entropy_residual(a * w[0], labels);
  if (p.l2 != 0.0) g += p.l2 * w[0];
  return {std::move(g)};
}

inline ParamVector grad_of(const LogisticRegression& p, const ParamVector& w) {
  return logistic_grad(p, p.features, p.labels, w);
}

inline ParamVector stoch_grad_of(const LogisticRegression& p, const Sample& s, const ParamVector& w) {
  if (s.indices.empty()) return grad_of(p, w);
  return logistic_grad(p, gather_rows(p.features, s.indices), gather(p.labels, s.indices), w);
}

// Matrix factorization ---------------------------------------------------

inline double value_of(const MatrixFactorization& p, const ParamVector& w) {
  const Matrix r = w[1] * (w[0] * p.inputs) - p.targets;
  return 0.5 * r.squaredNorm() / static_cast<double>(p.inputs.cols());
}

inline ParamVector factorization_grad(const Matrix& a, const Matrix& b, const ParamVector& w) {
  const Matrix hidden = w[0] * a;
  const Matrix r = (w[1] * hidden - b) / static_cast<double>(a.cols());
  ParamVector g(2);
  g[0] = w[1].transpose() * r * a.transpose();
  g[1] = r * hidden.transpose();
  return g;
}

inline ParamVector grad_of(const MatrixFactorization& p, const ParamVector& w) {
  return factorization_grad(p.inputs, p.targets, w);
}

inline ParamVector stoch_grad_of(const MatrixFactorization& p, const Sample& s, const ParamVector& w) {
  if (s.indices.empty()) return grad_of(p, w);
  return factorization_grad(gather_cols(p.inputs, s.indices), gather_cols(p.targets, s.indices), w);
}

// MLP ----------------------------------------------------------------------

inline double value_of(const TwoLayerMlp& p, const ParamVector& w) {
  const Matrix h = (p.features * w[0].transpose()).array().tanh().matrix();
  return cross_entropy(h * w[1].transpose(), p.labels);
}

inline ParamVector mlp_grad(const Matrix& a, const std::vector<int>& labels, const ParamVector& w) {
  const Matrix h = (a * w[0].transpose()).array().tanh().matrix();  // b x hidden
  const Matrix e = cross_entropy_residual(h * w[1].transpose(), labels);  // b x classes
  const Matrix dz = ((e * w[1]).array() * (1.0 - h.array().square())).matrix();
  ParamVector g(2);
  g[0] = dz.transpose() * a;
  g[1] = e.transpose() * h;
  return g;
}

inline ParamVector grad_of(const TwoLayerMlp& p, const ParamVector& w) {
  return mlp_grad(p.features, p.labels, w);
}

inline ParamVector stoch_grad_of(const TwoLayerMlp& p, const Sample& s, const ParamVector& w) {
  if (s.indices.empty()) return grad_of(p, w);
  return mlp_grad(gather_rows(p.features, s.indices), gather(p.labels, s.indices), w);
}

}  // namespace detail

/// Immutable handle over one of the synthetic problems. Copies share the
/// underlying data.
class Problem {
 public:
  using Variant = std::variant<NoisyQuadratic, LogisticRegression, MatrixFactorization, TwoLayerMlp>;

  template <typename P>
  explicit Problem(P p) : impl_(std::make_shared<const Variant>(std::move(p))) {
    shape().validate();
  }

  const Variant& variant() const { return *impl_; }

  const ModelShape& shape() const {
    return std::visit([](const auto& p) -> const ModelShape& { return p.shape; }, *impl_);
  }

  std::string name() const {
    return std::visit(
        [](const auto& p) -> std::string {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, NoisyQuadratic>) return "quadratic";
          else if constexpr (std::is_same_v<T, LogisticRegression>) return "logistic";
          else if constexpr (std::is_same_v<T, MatrixFactorization>) return "matrix_factorization";
          else return "mlp";
        },
        *impl_);
  }

  /// Number of data points behind the finite sum; 0 for the quadratic.
  std::size_t dataset_size() const {
    return std::visit(
        [](const auto& p) -> std::size_t {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, NoisyQuadratic>) return 0;
          else if constexpr (std::is_same_v<T, MatrixFactorization>) return static_cast<std::size_t>(p.inputs.cols());
          else return static_cast<std::size_t>(p.features.rows());
        },
        *impl_);
  }

  /// Minibatch size actually used by draw_sample; 0 means no subsampling.
  std::size_t batch_size() const {
    return std::visit(
        [this](const auto& p) -> std::size_t {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, NoisyQuadratic>) return 0;
          else return detail::full_batch(p.batch, dataset_size()) ? 0 : p.batch;
        },
        *impl_);
  }

  /// True when stoch_grad == full_grad for every sample.
  bool deterministic() const {
    if (const auto* q = std::get_if<NoisyQuadratic>(impl_.get())) return q->noise == 0.0;
    return batch_size() == 0;
  }

  double value(const ParamVector& x) const {
    require_shape(shape(), x, "value");
    return std::visit([&](const auto& p) { return detail::value_of(p, x); }, *impl_);
  }

  ParamVector full_grad(const ParamVector& x) const {
    require_shape(shape(), x, "full_grad");
    return std::visit([&](const auto& p) { return detail::grad_of(p, x); }, *impl_);
  }

  ParamVector stoch_grad(const Sample& s, const ParamVector& x) const {
    require_shape(shape(), x, "stoch_grad");
    const std::size_t n = dataset_size();
    for (auto i : s.indices) {
      if (i >= n) throw InvalidInput("stoch_grad: sample index out of range");
    }
    return std::visit([&](const auto& p) { return detail::stoch_grad_of(p, s, x); }, *impl_);
  }

  ParamVector initial_point() const {
    return std::visit(
        [](const auto& p) -> ParamVector {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, MatrixFactorization> || std::is_same_v<T, TwoLayerMlp>) return p.init;
          else return zeros(p.shape);
        },
        *impl_);
  }

  /// Analytic infimum when known (quadratic, exactly fittable factorization).
  std::optional<double> known_minimum() const {
    if (std::holds_alternative<NoisyQuadratic>(*impl_)) return 0.0;
    if (const auto* mf = std::get_if<MatrixFactorization>(impl_.get()); mf && mf->exact_fit) return 0.0;
    return std::nullopt;
  }

  std::optional<ParamVector> known_minimizer() const {
    if (const auto* q = std::get_if<NoisyQuadratic>(impl_.get())) return q->minimizer;
    return std::nullopt;
  }

 private:
  std::shared_ptr<const Variant> impl_;
};

/// Fresh sample: a 64-bit seed plus, for finite-sum problems with a proper
/// minibatch, `batch` indices drawn uniformly with replacement. Advancing
/// `rng` is the only side effect.
inline Sample draw_sample(RngState& rng, const Problem& problem) {
  Sample s;
  s.seed = rng();
  const std::size_t b = problem.batch_size();
  if (b > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, problem.dataset_size() - 1);
    s.indices.resize(b);
    for (auto& i : s.indices) i = pick(rng);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Factories

inline NoisyQuadratic make_noisy_quadratic(const QuadraticOptions& opt, std::uint64_t seed) {
  if (!(opt.curvature_min > 0.0) || opt.curvature_max < opt.curvature_min) {
    throw InvalidInput("quadratic: need 0 < curvature_min <= curvature_max");
  }
  if (opt.noise < 0.0) throw InvalidInput("quadratic: noise must be nonnegative");
  RngState rng(seed);
  NoisyQuadratic q;
  q.shape.layers = opt.layers;
  q.shape.validate();
  q.noise = opt.noise;
  std::uniform_real_distribution<double> eig(opt.curvature_min, opt.curvature_max);
  for (const auto& l : opt.layers) {
    const Matrix u = detail::random_orthogonal(l.rows, rng);
    Eigen::VectorXd lambda(l.rows);
    for (Index i = 0; i < l.rows; ++i) lambda(i) = eig(rng);
    Matrix p = u * lambda.asDiagonal() * u.transpose();
    q.curvature.push_back(0.5 * (p + p.transpose()));
    Matrix xs = detail::gaussian_matrix(l.rows, l.cols, rng);
    const double n = norm(l.norm, xs);
    q.minimizer.push_back(n > 0.0 ? Matrix(xs * (opt.minimizer_norm / n)) : xs);
  }
  return q;
}

inline LogisticRegression make_logistic_regression(const LogisticOptions& opt, std::uint64_t seed) {
  if (opt.n_points < 1 || opt.features < 1 || opt.classes < 2) {
    throw InvalidInput("logistic: need n_points >= 1, features >= 1, classes >= 2");
  }
  RngState rng(seed);
  LogisticRegression p;
  p.shape.layers = {LayerSpec{opt.features, opt.classes, opt.norm, opt.radius_scale}};
  p.features = detail::gaussian_matrix(static_cast<Index>(opt.n_points), opt.features, rng, opt.feature_scale);
  const Matrix teacher =
      detail::gaussian_matrix(opt.features, opt.classes, rng, opt.teacher_scale / std::sqrt(double(opt.features)));
  p.labels = detail::sample_labels(p.features * teacher, rng);
  p.batch = opt.batch;
  p.l2 = opt.l2;
  return p;
}

inline MatrixFactorization make_matrix_factorization(const FactorizationOptions& opt, std::uint64_t seed) {
  if (opt.n_points < 1) throw InvalidInput("matrix_factorization: need n_points >= 1");
  RngState rng(seed);
  MatrixFactorization p;
  p.shape.layers = {LayerSpec{opt.hidden, opt.in_dim, opt.norm, opt.radius_scale},
                    LayerSpec{opt.out_dim, opt.hidden, opt.norm, opt.radius_scale}};
  p.shape.validate();
  p.inputs = detail::gaussian_matrix(opt.in_dim, static_cast<Index>(opt.n_points), rng);
  const Matrix w1 = detail::gaussian_matrix(opt.hidden, opt.in_dim, rng, 1.0 / std::sqrt(double(opt.in_dim)));
  const Matrix w2 = detail::gaussian_matrix(opt.out_dim, opt.hidden, rng, 1.0 / std::sqrt(double(opt.hidden)));
  p.targets = w2 * w1 * p.inputs;
  if (opt.target_noise > 0.0) {
    p.targets += detail::gaussian_matrix(p.targets.rows(), p.targets.cols(), rng, opt.target_noise);
  }
  p.exact_fit = opt.target_noise == 0.0;
  p.batch = opt.batch;
  p.init = {detail::gaussian_matrix(opt.hidden, opt.in_dim, rng, opt.init_scale / std::sqrt(double(opt.in_dim))),
            detail::gaussian_matrix(opt.out_dim, opt.hidden, rng, opt.init_scale / std::sqrt(double(opt.hidden)))};
  return p;
}

inline TwoLayerMlp make_two_layer_mlp(const MlpOptions& opt, std::uint64_t seed) {
  if (opt.n_points < 1 || opt.classes < 2) throw InvalidInput("mlp: need n_points >= 1, classes >= 2");
  RngState rng(seed);
  TwoLayerMlp p;
  p.shape.layers = {LayerSpec{opt.hidden, opt.features, opt.norm, opt.radius_scale},
                    LayerSpec{opt.classes, opt.hidden, opt.norm, opt.radius_scale}};
  p.shape.validate();
  p.features = detail::gaussian_matrix(static_cast<Index>(opt.n_points), opt.features, rng);
  const Matrix t1 = detail::gaussian_matrix(opt.hidden, opt.features, rng, 1.5 / std::sqrt(double(opt.features)));
  const Matrix t2 = detail::gaussian_matrix(opt.classes, opt.hidden, rng, 2.0 / std::sqrt(double(opt.hidden)));
  const Matrix h = (p.features * t1.transpose()).array().tanh().matrix();
  p.labels = detail::sample_labels(h * t2.transpose(), rng);
  p.batch = opt.batch;
  p.init = {detail::gaussian_matrix(opt.hidden, opt.features, rng, opt.init_scale / std::sqrt(double(opt.features))),
            detail::gaussian_matrix(opt.classes, opt.hidden, rng, opt.init_scale / std::sqrt(double(opt.hidden)))};
  return p;
}

// ---------------------------------------------------------------------------
// Constant estimation

/// Monte-Carlo estimates of the problem constants. All entries are maxima over
/// random probes, so they are lower bounds of the true suprema.
struct ProblemConstants {
  double sigma_hat = 0.0;  // max over layers of sigma_per_layer
  std::vector<double> sigma_per_layer;
  std::vector<double> delta_hat;
  std::vector<double> rho;
  std::vector<double> L0_hat;
  std::vector<double> L1_hat;
  double D = 0.0;      // max_i ||X*_i||_(i) when the minimizer is known
  double L_hat = 0.0;  // product-norm Lipschitz estimate of the full gradient
  bool degenerate = false;
};

/// Constants for the L1 = 0 branches, with rho filled from the shape.
inline ProblemConstants smooth_constants(const ModelShape& shape, double D = 0.0) {
  ProblemConstants c;
  const auto p = shape.size();
  c.sigma_per_layer.assign(p, 0.0);
  c.delta_hat.assign(p, 0.0);
  c.L0_hat.assign(p, 0.0);
  c.L1_hat.assign(p, 0.0);
  for (const auto& l : shape.layers) c.rho.push_back(rho_bound(l.norm, l.rows, l.cols));
  c.D = D;
  return c;
}

inline ProblemConstants estimate_constants(const Problem& problem, std::size_t n_samples, std::size_t n_pairs,
                                           RngState& rng) {
  if (n_samples < 1 || n_pairs < 1) throw InvalidInput("estimate_constants: n_samples and n_pairs must be >= 1");
  const ModelShape& shape = problem.shape();
  const std::size_t p = shape.size();
  ProblemConstants c = smooth_constants(shape);
  if (auto xs = problem.known_minimizer()) {
    for (std::size_t i = 0; i < p; ++i) c.D = std::max(c.D, norm(shape[i].norm, (*xs)[i]));
  }

  const ParamVector x0 = problem.initial_point();
  auto perturb = [&](const ParamVector& base, double scale) {
    ParamVector out = base;
    for (auto& b : out) b += detail::gaussian_matrix(b.rows(), b.cols(), rng, scale / std::sqrt(double(b.size())));
    return out;
  };

  // sigma: RMS deviation of stochastic gradients at a few probe points.
  std::vector<ParamVector> probes{x0, perturb(x0, 0.5), perturb(x0, 1.0)};
  bool any_gradient = false;
  for (const auto& x : probes) {
    const ParamVector g = problem.full_grad(x);
    for (const auto& b : g) any_gradient = any_gradient || b.cwiseAbs().maxCoeff() > 0.0;
    std::vector<double> sq(p, 0.0);
    for (std::size_t s = 0; s < n_samples; ++s) {
      const ParamVector sg = problem.stoch_grad(draw_sample(rng, problem), x);
      for (std::size_t i = 0; i < p; ++i) sq[i] += (sg[i] - g[i]).squaredNorm();
    }
    for (std::size_t i = 0; i < p; ++i) {
      c.sigma_per_layer[i] = std::max(c.sigma_per_layer[i], std::sqrt(sq[i] / double(n_samples)));
    }
  }
  for (double s : c.sigma_per_layer) c.sigma_hat = std::max(c.sigma_hat, s);

  // Pairs at varying distance from x0 and varying separation.
  std::vector<std::vector<double>> ratio(p), gnorm(p);
  std::uniform_real_distribution<double> spread(0.1, 2.0);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const ParamVector x = perturb(x0, spread(rng));
    const ParamVector y = perturb(x, 0.1 * spread(rng));
    const ParamVector gx = problem.full_grad(x);
    const ParamVector gy = problem.full_grad(y);
    std::vector<double> hv(p, 0.0);
    for (std::size_t s = 0; s < n_samples; ++s) {
      const Sample xi = draw_sample(rng, problem);
      const ParamVector sx = problem.stoch_grad(xi, x);
      const ParamVector sy = problem.stoch_grad(xi, y);
      for (std::size_t i = 0; i < p; ++i) hv[i] += ((sx[i] - sy[i]) - (gx[i] - gy[i])).squaredNorm();
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      const double dist = norm(shape[i].norm, x[i] - y[i]);
      const double dg = dual_norm(shape[i].norm, gx[i] - gy[i]);
      num += dg;
      den = std::max(den, dist);
      if (dist <= 0.0) continue;
      c.delta_hat[i] = std::max(c.delta_hat[i], std::sqrt(hv[i] / double(n_samples)) / dist);
      ratio[i].push_back(dg / dist);
      gnorm[i].push_back(dual_norm(shape[i].norm, gx[i]));
    }
    if (den > 0.0) c.L_hat = std::max(c.L_hat, num / den);
  }

  // (L0, L1): least-squares line ratio ~ L0 + L1 * ||grad_i||_*, slope clamped
  // at zero, then L0 raised so the inequality holds on every sampled pair.
  for (std::size_t i = 0; i < p; ++i) {
    const auto& r = ratio[i];
    const auto& g = gnorm[i];
    if (r.empty()) continue;
    double slope = 0.0;
    if (r.size() >= 2) {
      const double n = double(r.size());
      double mg = 0.0, mr = 0.0;
      for (std::size_t k = 0; k < r.size(); ++k) {
        mg += g[k] / n;
        mr += r[k] / n;
      }
      double sgg = 0.0, sgr = 0.0;
      for (std::size_t k = 0; k < r.size(); ++k) {
        sgg += (g[k] - mg) * (g[k] - mg);
        sgr += (g[k] - mg) * (r[k] - mr);
      }
      if (sgg > 0.0) slope = std::max(0.0, sgr / sgg);
    }
    double intercept = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) intercept = std::max(intercept, r[k] - slope * g[k]);
    c.L0_hat[i] = intercept;
    c.L1_hat[i] = slope;
  }

  if (!any_gradient) {
    c = smooth_constants(shape, c.D);
    c.degenerate = true;
  }
  return c;
}

}  // namespace lmo_mvr

#endif  // LMO_MVR_ORACLES_HPP
