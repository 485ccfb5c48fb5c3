#include <cmath>

#include <gtest/gtest.h>

#include "lmo_mvr/optimizers.hpp"

using namespace lmo_mvr;

namespace {

Problem quadratic(double noise, NormKind kind = NormKind::Spectral, std::uint64_t seed = 1) {
  QuadraticOptions o;
  o.layers = {LayerSpec{5, 4, kind, 1.0}, LayerSpec{3, 3, kind, 0.5}};
  o.noise = noise;
  return Problem(make_noisy_quadratic(o, seed));
}

Problem factorization() {
  FactorizationOptions o;
  o.n_points = 64;
  o.batch = 0;
  return Problem(make_matrix_factorization(o, 2));
}

Problem logistic(std::size_t batch = 8) {
  LogisticOptions o;
  o.n_points = 128;
  o.features = 6;
  o.classes = 3;
  o.batch = batch;
  return Problem(make_logistic_regression(o, 3));
}

OptimizerConfig config(Method m, double eta = 0.05, double beta = 0.9, double q = 0.7) {
  OptimizerConfig c;
  c.method = m;
  c.eta = eta;
  c.beta = beta;
  c.alpha = m == Method::MuonMVR ? std::max(beta, 0.1) : 1.0 - beta;
  c.q = q;
  c.K = 50;
  return c;
}

struct Trajectory {
  std::vector<ParamVector> X;
  std::vector<ParamVector> M;
  std::vector<StepReport> reports;
};

Trajectory run(const OptimizerConfig& c, const Problem& p, std::uint64_t seed, int steps,
               const ParamVector* x0 = nullptr) {
  OptimizerState s = init_state(c, p.shape(), x0 ? *x0 : p.initial_point(), p, RngState(seed));
  Trajectory t;
  for (int k = 0; k < steps; ++k) {
    t.reports.push_back(step(s, c, p));
    t.X.push_back(t.reports.back().X);
    t.M.push_back(t.reports.back().M);
  }
  t.X.push_back(s.X);
  return t;
}

double divergence(const Trajectory& a, const Trajectory& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.X.size(); ++k) d = std::max(d, max_abs_diff(a.X[k], b.X[k]));
  for (std::size_t k = 0; k < a.M.size(); ++k) d = std::max(d, max_abs_diff(a.M[k], b.M[k]));
  return d;
}

ParamVector offset_start(const Problem& p, double scale = 1.0) {
  RngState rng(77);
  ParamVector x;
  for (const auto& l : p.shape().layers) x.push_back(detail::gaussian_matrix(l.rows, l.cols, rng, scale));
  return x;
}

}  // namespace

TEST(InitState, DeterministicOracleGivesFullGradient) {
  const Problem p = quadratic(0.0);
  const ParamVector x0 = offset_start(p);
  const auto s = init_state(config(Method::GluonMVR2), p.shape(), x0, p, RngState(1));
  EXPECT_EQ(s.k, 0);
  EXPECT_EQ(max_abs_diff(s.M, p.full_grad(x0)), 0.0);
  EXPECT_EQ(max_abs_diff(s.g, s.M), 0.0);
  EXPECT_EQ(max_abs_diff(s.X_prev, x0), 0.0);
}

TEST(InitState, EqualSeedsGiveIdenticalStates) {
  const Problem p = logistic();
  const auto a = init_state(config(Method::GluonMVR1), p.shape(), p.initial_point(), p, RngState(9));
  const auto b = init_state(config(Method::GluonMVR1), p.shape(), p.initial_point(), p, RngState(9));
  EXPECT_EQ(max_abs_diff(a.M, b.M), 0.0);
  EXPECT_TRUE(a.g.empty());
}

TEST(InitState, ZeroMomentumAtMinimizer) {
  const Problem p = quadratic(0.0);
  const auto s = init_state(config(Method::Gluon), p.shape(), *p.known_minimizer(), p, RngState(1));
  EXPECT_LT(std::sqrt(squared_euclidean(s.M)), 1e-14);
}

TEST(InitState, RejectsShapeMismatch) {
  const Problem p = quadratic(0.0);
  EXPECT_THROW(init_state(config(Method::Gluon), p.shape(), {Matrix::Zero(5, 4)}, p, RngState(1)), InvalidInput);
}

TEST(Config, ValidationRules) {
  auto c = config(Method::GluonMVR2);
  c.q = 0.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = config(Method::MuonMVR, 0.1, 0.5);
  c.alpha = 0.2;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = config(Method::Gluon);
  c.beta = 1.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = config(Method::Gluon);
  c.K = 0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c.K = 1;
  c.eta = -1;
  EXPECT_THROW(c.validate(), InvalidInput);
  EXPECT_EQ(parse_method("gluon_mvr3"), Method::GluonMVR3);
  EXPECT_THROW(parse_method("adam"), InvalidInput);
}

TEST(LmoStep, ZeroMomentumIsNoOp) {
  const Problem p = quadratic(0.0);
  const ParamVector x = offset_start(p);
  EXPECT_EQ(max_abs_diff(lmo_step(p.shape(), x, zeros(p.shape()), {0.3, 0.2}), x), 0.0);
  EXPECT_THROW(lmo_step(p.shape(), x, x, {0.3}), InvalidInput);
  EXPECT_THROW(lmo_step(p.shape(), x, x, {0.3, 0.0}), InvalidInput);
}

TEST(LmoStep, EuclideanIsNormalizedGradientDescent) {
  const Problem p = quadratic(0.0, NormKind::Euclidean);
  const ParamVector x = offset_start(p);
  const ParamVector g = p.full_grad(x);
  const std::vector<double> r{1e-3, 1e-3};
  const ParamVector next = lmo_step(p.shape(), x, g, r);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Matrix expect = x[i] - r[i] * g[i] / g[i].norm();
    EXPECT_LT((next[i] - expect).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_LT(p.value(next), p.value(x));
}

TEST(LmoStep, SpectralBeatsMonteCarloBallPoints) {
  RngState rng(5);
  ModelShape shape;
  shape.layers = {LayerSpec{6, 4, NormKind::Spectral, 1.0}};
  const Matrix m = detail::gaussian_matrix(6, 4, rng);
  const Matrix x = detail::gaussian_matrix(6, 4, rng);
  const double r = 0.7;
  const Matrix next = lmo_step(shape, {x}, {m}, {r})[0];
  const double lmo_value = inner(m, next);
  const Matrix u = polar_factor_svd(m);
  EXPECT_LT((next - (x - r * u)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(inner(m, next - x), -r * dual_norm(NormKind::Spectral, m), 1e-12);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 100000; ++i) {
    Matrix d = detail::gaussian_matrix(6, 4, rng);
    d *= r * unif(rng) / norm(NormKind::Spectral, d);
    best = std::min(best, inner(m, x + d));
  }
  EXPECT_GE(best, lmo_value - 1e-12);
}

TEST(LmoStep, StaysInBallForEveryNorm) {
  RngState rng(6);
  for (NormKind k : {NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry}) {
    ModelShape shape;
    shape.layers = {LayerSpec{7, 3, k, 1.0}};
    for (int i = 0; i < 100; ++i) {
      const Matrix x = detail::gaussian_matrix(7, 3, rng);
      const Matrix m = detail::gaussian_matrix(7, 3, rng);
      const Matrix next = lmo_step(shape, {x}, {m}, {0.4})[0];
      EXPECT_LE(norm(k, next - x), 0.4 + 1e-9);
      EXPECT_NEAR(inner(m, next - x), -0.4 * dual_norm(k, m), 1e-9);
    }
  }
}

TEST(Gluon, ZeroBetaUsesFreshGradient) {
  const Problem p = logistic();
  auto c = config(Method::Gluon, 0.05, 0.0);
  OptimizerState s = init_state(c, p.shape(), p.initial_point(), p, RngState(3));
  step(s, c, p);
  const StepReport rep = step(s, c, p);
  EXPECT_TRUE(rep.sampled);
  EXPECT_EQ(max_abs_diff(rep.M, rep.sg_new), 0.0);
}

TEST(Gluon, TwoDeterministicStepsMatchHandRecursion) {
  const Problem p = quadratic(0.0, NormKind::Spectral, 4);
  const auto c = config(Method::Gluon, 0.1, 0.8);
  const ParamVector x0 = offset_start(p);
  const Trajectory t = run(c, p, 4, 2, &x0);
  const auto& q = std::get<NoisyQuadratic>(p.variant());
  auto grad = [&](const ParamVector& x) {
    ParamVector g;
    for (std::size_t i = 0; i < x.size(); ++i) g.push_back(q.curvature[i] * (x[i] - q.minimizer[i]));
    return g;
  };
  auto move = [&](const ParamVector& x, const ParamVector& m) {
    ParamVector out;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Eigen::JacobiSVD<Matrix> svd(m[i], Eigen::ComputeThinU | Eigen::ComputeThinV);
      out.push_back(x[i] - 0.1 * p.shape()[i].radius_scale * svd.matrixU() * svd.matrixV().transpose());
    }
    return out;
  };
  const ParamVector m0 = grad(x0);
  const ParamVector x1 = move(x0, m0);
  ParamVector m1 = m0;
  const ParamVector g1 = grad(x1);
  for (std::size_t i = 0; i < m1.size(); ++i) m1[i] = 0.8 * m0[i] + 0.2 * g1[i];
  const ParamVector x2 = move(x1, m1);
  EXPECT_LT(max_abs_diff(t.X[1], x1), 1e-12);
  EXPECT_LT(max_abs_diff(t.M[1], m1), 1e-12);
  EXPECT_LT(max_abs_diff(t.X[2], x2), 1e-12);
}

TEST(Gluon, MinimizerIsFixedPointWithoutNoise) {
  // identity curvature makes the gradient at X* exactly zero
  QuadraticOptions o;
  o.layers = {LayerSpec{3, 2, NormKind::Spectral, 1.0}};
  auto q = make_noisy_quadratic(o, 1);
  q.curvature[0] = Matrix::Identity(3, 3);
  const Problem exact(q);
  for (Method m : kAllMethods) {
    const Trajectory t = run(config(m, 0.05, m == Method::MuonMVR ? 0.0 : 0.9), exact, 1, 10, &q.minimizer);
    EXPECT_EQ(max_abs_diff(t.X.back(), q.minimizer), 0.0) << to_string(m);
  }
}

TEST(Exactness, DeterministicOracleMomentumEqualsGradient) {
  const Problem p = factorization();
  for (Method m : {Method::GluonMVR1, Method::GluonMVR1Decreasing, Method::GluonMVR3, Method::MuonMVR}) {
    auto c = config(m, 0.01, m == Method::MuonMVR ? 0.01 : 0.9);
    const Trajectory t = run(c, p, 6, 100);
    double worst = 0.0;
    for (std::size_t k = 0; k < t.M.size(); ++k) worst = std::max(worst, max_abs_diff(t.M[k], p.full_grad(t.X[k])));
    EXPECT_LE(worst, 1e-10) << to_string(m);
  }
}

TEST(Exactness, DeterministicMvr2EstimatorIsTheGradientAndMomentumIsAnAverage) {
  const Problem p = factorization();
  const auto c = config(Method::GluonMVR2, 0.01, 0.9, 0.3);
  OptimizerState s = init_state(c, p.shape(), p.initial_point(), p, RngState(7));
  ParamVector prev_m = s.M;
  for (int k = 0; k < 100; ++k) {
    const StepReport rep = step(s, c, p);
    const ParamVector grad = p.full_grad(rep.X);
    EXPECT_LE(max_abs_diff(s.g, grad), 1e-10);
    // exponential average of exact gradients
    ParamVector expect = prev_m;
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = 0.9 * prev_m[i] + 0.1 * grad[i];
    if (k > 0) EXPECT_LE(max_abs_diff(rep.M, expect), 1e-10);
    prev_m = rep.M;
  }
}

TEST(Reductions, Mvr2WithQOneIsGluon) {
  const Problem p = quadratic(0.2);
  const Trajectory a = run(config(Method::GluonMVR2, 0.05, 0.8, 1.0), p, 11, 50);
  const Trajectory b = run(config(Method::Gluon, 0.05, 0.8), p, 11, 50);
  EXPECT_EQ(divergence(a, b), 0.0);
}

TEST(Reductions, Mvr3WithZeroBetaIsMvr2) {
  const Problem p = logistic();
  const Trajectory a = run(config(Method::GluonMVR3, 0.05, 0.0, 0.4), p, 12, 50);
  const Trajectory b = run(config(Method::GluonMVR2, 0.05, 0.0, 0.4), p, 12, 50);
  EXPECT_LE(divergence(a, b), 1e-10);
}

TEST(Reductions, Mvr1AndGluonAgreeAtZeroBeta) {
  const Problem p = logistic();
  const Trajectory a = run(config(Method::GluonMVR1, 0.05, 0.0), p, 13, 50);
  const Trajectory b = run(config(Method::Gluon, 0.05, 0.0), p, 13, 50);
  EXPECT_EQ(divergence(a, b), 0.0);
}

TEST(Reductions, Mvr2WithZeroBetaIsMvr1WithBetaOneMinusQ) {
  const Problem p = quadratic(0.3);
  const Trajectory a = run(config(Method::GluonMVR2, 0.05, 0.0, 0.35), p, 14, 20);
  const Trajectory b = run(config(Method::GluonMVR1, 0.05, 0.65), p, 14, 20);
  EXPECT_LE(divergence(a, b), 1e-12);
}

TEST(Reductions, Mvr3WithQOneIsMvr1) {
  const Problem p = logistic();
  const Trajectory a = run(config(Method::GluonMVR3, 0.05, 0.7, 1.0), p, 15, 20);
  const Trajectory b = run(config(Method::GluonMVR1, 0.05, 0.7), p, 15, 20);
  EXPECT_LE(divergence(a, b), 1e-10);
}

TEST(Decreasing, ScheduleValues) {
  const Problem p = logistic();
  const auto c = config(Method::GluonMVR1Decreasing);
  const Trajectory t = run(c, p, 16, 8);
  EXPECT_EQ(t.reports[0].beta, 0.0);
  EXPECT_EQ(t.reports[0].radius[0], 1.0);
  EXPECT_FALSE(t.reports[0].sampled);
  EXPECT_NEAR(t.reports[7].beta, 0.75, 1e-15);
  EXPECT_NEAR(t.reports[7].radius[0], 0.25, 1e-15);
}

TEST(Muon, NoDecayNoMemoryIsNormalizedStochasticDescent) {
  const Problem p = logistic();
  OptimizerConfig c = config(Method::MuonMVR, 0.05, 0.0);
  c.alpha = 1.0;
  OptimizerState s = init_state(c, p.shape(), p.initial_point(), p, RngState(17));
  for (int k = 0; k < 5; ++k) {
    const ParamVector x = s.X;
    const ParamVector m = s.M;
    const StepReport rep = step(s, c, p);
    EXPECT_EQ(max_abs_diff(s.X, lmo_step(p.shape(), x, m, {0.05})), 0.0);
    EXPECT_EQ(max_abs_diff(s.M, rep.sg_new), 0.0);
  }
}

TEST(Muon, WeightDecayAppliedAfterTheBallStep) {
  const Problem p = logistic();
  OptimizerConfig c = config(Method::MuonMVR, 0.05, 0.2);
  c.alpha = 0.5;
  OptimizerState s = init_state(c, p.shape(), offset_start(p), p, RngState(18));
  const ParamVector x = s.X;
  const ParamVector m = s.M;
  const StepReport rep = step(s, c, p);
  EXPECT_LT(max_abs_diff(s.X, 0.8 * lmo_step(p.shape(), x, m, {0.05})), 1e-15);
  EXPECT_LE(rep.step[0], 0.05 + 1e-12);
}

TEST(VarianceReduction, Mvr1BeatsGluonOnNoisyQuadraticAtMatchedBeta) {
  const Problem p = quadratic(0.5);
  double e_mvr = 0.0, e_gluon = 0.0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto a = run(config(Method::GluonMVR1, 0.05, 0.9), p, seed, 51);
    const auto b = run(config(Method::Gluon, 0.05, 0.9), p, seed, 51);
    e_mvr += squared_euclidean(a.M[50] - p.full_grad(a.X[50]));
    e_gluon += squared_euclidean(b.M[50] - p.full_grad(b.X[50]));
  }
  EXPECT_LT(e_mvr, e_gluon);
}

TEST(Invariants, BallFeasibilityAndFiniteness) {
  for (const Problem& p : {quadratic(0.3), logistic(), factorization()}) {
    for (Method m : kAllMethods) {
      const auto c = config(m, 0.05, m == Method::MuonMVR ? 0.05 : 0.9);
      const Trajectory t = run(c, p, 19, 40);
      for (const auto& rep : t.reports) {
        for (std::size_t i = 0; i < rep.step.size(); ++i) EXPECT_LE(rep.step[i], rep.radius[i] + 1e-9);
      }
      for (const auto& x : t.X) EXPECT_TRUE(all_finite(x));
    }
  }
}

TEST(Invariants, SeedDeterminism) {
  const Problem p = logistic();
  for (Method m : kAllMethods) {
    const auto c = config(m, 0.05, m == Method::MuonMVR ? 0.05 : 0.9);
    EXPECT_EQ(divergence(run(c, p, 20, 30), run(c, p, 20, 30)), 0.0) << to_string(m);
  }
}

TEST(Schedule, TheoremValues) {
  const ProblemConstants smooth = smooth_constants(logistic().shape());
  auto c = theorem_schedule(Method::GluonMVR1, 1000, smooth);
  EXPECT_NEAR(c.eta, 1e-2, 1e-16);
  EXPECT_NEAR(c.alpha, 1e-2, 1e-16);
  EXPECT_NEAR(c.beta, 0.99, 1e-15);
  EXPECT_EQ(c.schedule, "gluon_mvr1:smooth");

  c = theorem_schedule(Method::Gluon, 10000, smooth);
  EXPECT_NEAR(c.eta, 1e-3, 1e-16);
  EXPECT_NEAR(c.alpha, 1e-2, 1e-16);

  c = theorem_schedule(Method::GluonMVR2, 1000, smooth);
  EXPECT_NEAR(c.eta, 1e-2, 1e-16);
  EXPECT_NEAR(c.q, 1e-2, 1e-16);
  EXPECT_NEAR(c.alpha, 1e-1, 1e-15);

  c = theorem_schedule(Method::GluonMVR3, 1000, smooth);
  EXPECT_NEAR(c.eta, 1e-2, 1e-16);
  EXPECT_NEAR(c.q, 1e-2, 1e-16);

  ProblemConstants withD = smooth;
  withD.D = 2.0;
  c = theorem_schedule(Method::MuonMVR, 100, withD);
  EXPECT_NEAR(c.beta, 2 * std::log(100.0) / 100, 1e-16);
  EXPECT_EQ(c.alpha, c.beta);
  EXPECT_NEAR(c.eta, 2.0 * c.beta, 1e-16);
  // 2 ln K / K peaks below 1 at integer K, so the clamp to 1 never binds
  EXPECT_NEAR(theorem_schedule(Method::MuonMVR, 2, withD).alpha, std::log(2.0), 1e-16);
  EXPECT_LE(theorem_schedule(Method::MuonMVR, 3, withD).alpha, 1.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(Schedule, GeneralizedSmoothnessCapsEta) {
  ProblemConstants k = smooth_constants(logistic().shape());
  k.L1_hat = {50.0};
  auto c = theorem_schedule(Method::GluonMVR1, 10, k, {2.0});
  EXPECT_DOUBLE_EQ(c.eta, 0.01);
  EXPECT_EQ(c.schedule, "gluon_mvr1:l1_capped");
  c = theorem_schedule(Method::Gluon, 100, k, {1.0});
  EXPECT_NEAR(c.eta, 0.1 / 250.0, 1e-18);
  EXPECT_EQ(c.schedule, "gluon:l1_capped");
}

TEST(Schedule, RejectsBadBudgets) {
  const ProblemConstants smooth = smooth_constants(logistic().shape(), 1.0);
  EXPECT_THROW(theorem_schedule(Method::Gluon, 0, smooth), InvalidInput);
  EXPECT_THROW(theorem_schedule(Method::MuonMVR, 1, smooth), InvalidInput);
  EXPECT_THROW(theorem_schedule(Method::MuonMVR, 100, smooth_constants(logistic().shape())), InvalidInput);
}
