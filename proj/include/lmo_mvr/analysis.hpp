#ifndef LMO_MVR_ANALYSIS_HPP
#define LMO_MVR_ANALYSIS_HPP

// Numeric checks of the summation lemmas behind the convergence proofs and of
// the closed-form expansions of the momentum error mu^k = M^k - grad f(X^k).

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lmo_mvr/model.hpp"
#include "lmo_mvr/optimizers.hpp"
#include "lmo_mvr/oracles.hpp"

namespace lmo_mvr {

struct LemmaReport {
  std::string lemma_id;
  std::vector<std::pair<std::string, double>> parameters;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  double margin = 0.0;  // rhs - lhs
};

inline constexpr double kLemmaSlack = 1e-12;

enum class Summation { Plain, Compensated };

namespace detail {

/// Neumaier summation when compensated, plain accumulation otherwise.
class Accumulator {
 public:
  explicit Accumulator(Summation mode) : compensated_(mode == Summation::Compensated) {}

  void add(double x) {
    if (!compensated_) {
      sum_ += x;
      return;
    }
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) c_ += (sum_ - t) + x;
    else c_ += (x - t) + sum_;
    sum_ = t;
  }

  double value() const { return sum_ + c_; }

 private:
  bool compensated_;
  double sum_ = 0.0;
  double c_ = 0.0;
};

inline LemmaReport make_report(std::string id, std::vector<std::pair<std::string, double>> params, double lhs,
                               double rhs) {
  LemmaReport r;
  r.lemma_id = std::move(id);
  r.parameters = std::move(params);
  r.lhs = lhs;
  r.rhs = rhs;
  r.holds = lhs <= rhs + kLemmaSlack;
  r.margin = rhs - lhs;
  return r;
}

inline double lemma_weight(long long k) { return std::pow(static_cast<double>(k + 1), -2.0 / 3.0); }

inline double log_bound(long long K) { return 12.0 + std::sqrt(2.0 * std::exp(3.0)) * std::log(static_cast<double>(K)); }

/// sum_{k<K} a_k sqrt(S_k) with S_k = sum_{tau=first}^{k} (beta^{(tau+1):k} a_tau)^2,
/// a_k = (k+1)^{-2/3}, beta^k = 1 - a_k. Uses S_k = (beta^k)^2 S_{k-1} + a_k^2.
inline double weighted_root_sum(long long K, long long first, Summation mode) {
  Accumulator lhs(mode);
  double s = 0.0;
  for (long long k = 0; k < K; ++k) {
    const double a = lemma_weight(k);
    const double b = 1.0 - a;
    s = b * b * s + (k >= first ? a * a : 0.0);
    lhs.add(a * std::sqrt(s));
  }
  return lhs.value();
}

/// Same quantity by direct double summation with running products.
inline double weighted_root_sum_naive(long long K, long long first) {
  double lhs = 0.0;
  for (long long k = 0; k < K; ++k) {
    double inner = 0.0;
    double prod = 1.0;  // beta^{(tau+1):k}, empty for tau = k
    for (long long tau = k; tau >= first; --tau) {
      const double term = prod * lemma_weight(tau);
      inner += term * term;
      prod *= 1.0 - lemma_weight(tau);
    }
    lhs += lemma_weight(k) * std::sqrt(inner);
  }
  return lhs;
}

inline void require_k(long long K, const char* what) {
  if (K < 1) throw InvalidInput(std::string(what) + ": K must be >= 1");
}

inline void require_alpha_q(double alpha, double q, const char* what) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput(std::string(what) + ": alpha must lie in (0, 1)");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidInput(std::string(what) + ": q must lie in (0, 1]");
}

/// Per distance d = k - j: alpha^2 beta^{2d} and the inner geometric tail
/// W_d = sum_{m=1}^{d} beta^{2d-m} (1-q)^m = beta^{2d} sum_{m=1}^{d} v^m, so
/// that no power of v (which may be huge) is formed.
template <typename Body>
double geometric_double_sum(double alpha, double q, long long k, Summation mode, Body&& body) {
  const double beta = 1.0 - alpha;
  Accumulator lhs(mode);
  double b2d = 1.0;  // beta^{2d}
  double w = 0.0;    // W_d
  double bq = 1.0;   // (beta (1-q))^d
  for (long long d = 0; d < k; ++d) {
    if (d > 0) {
      b2d *= beta * beta;
      bq *= beta * (1.0 - q);
      w = beta * beta * w + bq;
    }
    lhs.add(body(d, alpha * alpha * (b2d + 2.0 * w)));
  }
  return lhs.value();
}

/// Literal double sum over 1 <= j < s <= k with explicit v = (1-q)/(1-alpha).
template <typename Weight>
double geometric_double_sum_naive(double alpha, double q, long long k, Weight&& weight) {
  const double beta = 1.0 - alpha;
  // powers combined in log space: beta^{2(k-j)} underflows where v^{s-j} overflows
  const double log_b = std::log(beta);
  const double log_v = std::log(1.0 - q) - log_b;
  double lhs = 0.0;
  for (long long j = 1; j <= k; ++j) {
    const double w = alpha * alpha * weight(j);
    lhs += w * std::exp(2.0 * double(k - j) * log_b);
    for (long long s = j + 1; s <= k; ++s) lhs += 2.0 * w * std::exp(2.0 * double(k - j) * log_b + double(s - j) * log_v);
  }
  return lhs;
}

}  // namespace detail

/// sum_{k<K} (k+1)^{-2/3} sqrt(sum_{tau<=k} (beta^{(tau+1):k} alpha^tau)^2)
///   <= 12 + sqrt(2 e^3) ln K
inline LemmaReport verify_lemma_sum_alpha(long long K, Summation mode = Summation::Plain) {
  detail::require_k(K, "verify_lemma_sum_alpha");
  return detail::make_report("sum_alpha", {{"K", double(K)}}, detail::weighted_root_sum(K, 0, mode),
                             detail::log_bound(K));
}

inline LemmaReport verify_lemma_sum_alpha_naive(long long K) {
  detail::require_k(K, "verify_lemma_sum_alpha_naive");
  return detail::make_report("sum_alpha", {{"K", double(K)}}, detail::weighted_root_sum_naive(K, 0),
                             detail::log_bound(K));
}

/// Radius version: inner sum starts at tau = 1 and scales with t.
inline LemmaReport verify_lemma_sum_t(long long K, double t, Summation mode = Summation::Plain) {
  detail::require_k(K, "verify_lemma_sum_t");
  if (!(t > 0.0)) throw InvalidInput("verify_lemma_sum_t: t must be positive");
  return detail::make_report("sum_t", {{"K", double(K)}, {"t", t}}, t * detail::weighted_root_sum(K, 1, mode),
                             t * detail::log_bound(K));
}

inline LemmaReport verify_lemma_sum_t_naive(long long K, double t) {
  detail::require_k(K, "verify_lemma_sum_t_naive");
  if (!(t > 0.0)) throw InvalidInput("verify_lemma_sum_t_naive: t must be positive");
  return detail::make_report("sum_t", {{"K", double(K)}, {"t", t}}, t * detail::weighted_root_sum_naive(K, 1),
                             t * detail::log_bound(K));
}

/// sum_j a^2 b^{2k-2j} + 2 sum_{j<s} a^2 b^{2k-2j} v^{s-j} <= 2a / ((2-a)(a + b q))
inline LemmaReport verify_lemma_geom_v(double alpha, double q, long long k, Summation mode = Summation::Plain) {
  detail::require_alpha_q(alpha, q, "verify_lemma_geom_v");
  detail::require_k(k, "verify_lemma_geom_v");
  const double beta = 1.0 - alpha;
  const double lhs = detail::geometric_double_sum(alpha, q, k, mode, [](long long, double term) { return term; });
  return detail::make_report("geom_v", {{"alpha", alpha}, {"q", q}, {"k", double(k)}}, lhs,
                             2.0 * alpha / ((2.0 - alpha) * (alpha + beta * q)));
}

inline LemmaReport verify_lemma_geom_v_naive(double alpha, double q, long long k) {
  detail::require_alpha_q(alpha, q, "verify_lemma_geom_v_naive");
  detail::require_k(k, "verify_lemma_geom_v_naive");
  const double beta = 1.0 - alpha;
  const double lhs = detail::geometric_double_sum_naive(alpha, q, k, [](long long) { return 1.0; });
  return detail::make_report("geom_v", {{"alpha", alpha}, {"q", q}, {"k", double(k)}}, lhs,
                             2.0 * alpha / ((2.0 - alpha) * (alpha + beta * q)));
}

/// Same double sum weighted by (1-q)^j, against 2a(1-q)^{k+1} / (v + a - 1).
/// Requires q < alpha.
inline LemmaReport verify_lemma_geom_decay(double alpha, double q, long long k, Summation mode = Summation::Plain) {
  detail::require_alpha_q(alpha, q, "verify_lemma_geom_decay");
  detail::require_k(k, "verify_lemma_geom_decay");
  if (!(q < alpha)) throw InvalidInput("verify_lemma_geom_decay: requires q < alpha");
  const double v = (1.0 - q) / (1.0 - alpha);
  const double lhs = detail::geometric_double_sum(alpha, q, k, mode, [&](long long d, double term) {
    return std::pow(1.0 - q, double(k - d)) * term;
  });
  return detail::make_report("geom_decay", {{"alpha", alpha}, {"q", q}, {"k", double(k)}}, lhs,
                             2.0 * alpha * std::pow(1.0 - q, double(k + 1)) / (v + alpha - 1.0));
}

inline LemmaReport verify_lemma_geom_decay_naive(double alpha, double q, long long k) {
  detail::require_alpha_q(alpha, q, "verify_lemma_geom_decay_naive");
  detail::require_k(k, "verify_lemma_geom_decay_naive");
  if (!(q < alpha)) throw InvalidInput("verify_lemma_geom_decay_naive: requires q < alpha");
  const double v = (1.0 - q) / (1.0 - alpha);
  const double lhs =
      detail::geometric_double_sum_naive(alpha, q, k, [&](long long j) { return std::pow(1.0 - q, double(j)); });
  return detail::make_report("geom_decay", {{"alpha", alpha}, {"q", q}, {"k", double(k)}}, lhs,
                             2.0 * alpha * std::pow(1.0 - q, double(k + 1)) / (v + alpha - 1.0));
}

/// 0.05, 0.10, ..., 0.95
inline std::vector<double> lemma_parameter_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 19; ++i) g.push_back(0.05 * i);
  return g;
}

struct LemmaGridOptions {
  std::vector<long long> budgets{1, 10, 100, 1000, 10000};
  std::vector<long long> depths{1, 10, 100};
  std::vector<double> t_values{1.0};
};

/// Every lemma on its standard grid: sum_alpha / sum_t over the budgets,
/// geom_v on the full (alpha, q) grid, geom_decay on its q < alpha part.
inline std::vector<LemmaReport> verify_all_lemmas(const LemmaGridOptions& opt = {}) {
  std::vector<LemmaReport> out;
  for (long long K : opt.budgets) out.push_back(verify_lemma_sum_alpha(K));
  for (double t : opt.t_values) {
    for (long long K : opt.budgets) out.push_back(verify_lemma_sum_t(K, t));
  }
  const auto grid = lemma_parameter_grid();
  for (long long k : opt.depths) {
    for (double a : grid) {
      for (double q : grid) out.push_back(verify_lemma_geom_v(a, q, k));
    }
  }
  for (long long k : opt.depths) {
    for (double a : grid) {
      for (double q : grid) {
        if (q < a) out.push_back(verify_lemma_geom_decay(a, q, k));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Momentum-error instrumentation

/// Error terms at one momentum index k (all per layer):
///   mu    = M^k - grad f(X^k)
///   gamma = grad f_xi^k(X^k) - grad f(X^k)
///   Z     = grad f_xi^k(X^k) - grad f_xi^k(X^{k-1}) - (grad f(X^k) - grad f(X^{k-1}))
///   S     = grad f(X^{k-1}) - grad f(X^k)
///   Delta = gamma + (1 - alpha)(grad f(X^{k-1}) - grad f_xi^k(X^{k-1}))   (MuonMVR)
///   g_err = g^k - grad f(X^k)                                           (MVR-2/3)
/// Index 0 holds mu^0 (= gamma^0, since M^0 is a single stochastic gradient).
struct MomentumErrorStep {
  long long k = 0;
  ParamVector mu;
  ParamVector gamma;
  ParamVector Z;
  ParamVector S;
  ParamVector Delta;
  ParamVector g_err;
};

struct MomentumErrorTrace {
  Method method = Method::GluonMVR1;
  std::vector<MomentumErrorStep> steps;
};

/// Builds a MomentumErrorTrace alongside a run. Call start() after
/// init_state and record() after every step.
class MomentumTraceRecorder {
 public:
  MomentumTraceRecorder(const Problem& problem, const OptimizerConfig& config)
      : problem_(&problem), config_(config) {
    trace_.method = config.method;
  }

  void start(const OptimizerState& s) {
    prev_grad_ = problem_->full_grad(s.X);
    MomentumErrorStep e;
    e.k = 0;
    e.mu = s.M - prev_grad_;
    e.gamma = e.mu;
    e.Z = zeros(problem_->shape());
    e.S = e.Z;
    e.Delta = e.Z;
    if (uses_estimator(config_.method)) e.g_err = s.g - prev_grad_;
    trace_.steps.push_back(std::move(e));
  }

  void record(const StepReport& rep, const OptimizerState& after) {
    if (!rep.sampled) return;
    const bool muon = config_.method == Method::MuonMVR;
    // Gluon family: the momentum is tied to X^k = rep.X; MuonMVR: to the new iterate.
    const ParamVector& x = muon ? after.X : rep.X;
    const ParamVector& m = after.M;
    ParamVector grad = problem_->full_grad(x);
    MomentumErrorStep e;
    e.k = muon ? after.k : rep.k;
    e.mu = m - grad;
    e.gamma = rep.sg_new - grad;
    e.S = prev_grad_ - grad;
    if (!rep.sg_old.empty()) {
      e.Z = (rep.sg_new - rep.sg_old) - (grad - prev_grad_);
      e.Delta = e.gamma + (1.0 - config_.alpha) * (prev_grad_ - rep.sg_old);
    } else {
      e.Z = zeros(problem_->shape());
      e.Delta = e.Z;
    }
    if (uses_estimator(config_.method)) e.g_err = after.g - grad;
    trace_.steps.push_back(std::move(e));
    prev_grad_ = std::move(grad);
  }

  const MomentumErrorTrace& trace() const { return trace_; }
  MomentumErrorTrace take() { return std::move(trace_); }

 private:
  const Problem* problem_;
  OptimizerConfig config_;
  ParamVector prev_grad_;
  MomentumErrorTrace trace_;
};

namespace detail {

inline void add_scaled(ParamVector& acc, double c, const ParamVector& x) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += c * x[i];
}

inline double decreasing_beta(long long k) { return 1.0 - lemma_weight(k); }

/// prod_{j=a}^{b} beta^j for the decreasing schedule (1 when a > b).
inline double decreasing_product(long long a, long long b) {
  double p = 1.0;
  for (long long j = a; j <= b; ++j) p *= decreasing_beta(j);
  return p;
}

}  // namespace detail

/// Largest absolute entry difference between the recorded mu^k (and, for
/// MVR-2/3, g^k - grad f(X^k)) and the closed-form expansion in terms of mu^0
/// and the recorded per-step increments. Each expansion is summed from
/// scratch with explicit powers, independent of the running recursion.
inline double momentum_recursion_discrepancy(const MomentumErrorTrace& trace, Method method,
                                             const OptimizerConfig& config) {
  if (trace.method != method || config.method != method) {
    throw InvalidInput("check_momentum_recursion: trace/method mismatch");
  }
  if (trace.steps.empty()) throw InvalidInput("check_momentum_recursion: empty trace");
  const auto& st = trace.steps;
  for (std::size_t k = 0; k < st.size(); ++k) {
    if (st[k].k != static_cast<long long>(k)) throw InvalidInput("check_momentum_recursion: trace is not contiguous");
    if (uses_estimator(method) && st[k].g_err.empty()) {
      throw InvalidInput("check_momentum_recursion: trace lacks estimator errors");
    }
  }
  const ParamVector& mu0 = st[0].mu;
  const double beta = config.beta;
  const double alpha = 1.0 - beta;
  const double keep = 1.0 - config.q;

  // gamma-tilde^k for MVR-2/3, expanded from g^0 - grad f(X^0) = mu^0.
  std::vector<ParamVector> gt(st.size());
  double worst = 0.0;
  if (uses_estimator(method)) {
    for (std::size_t k = 0; k < st.size(); ++k) {
      ParamVector acc = std::pow(keep, double(k)) * mu0;
      for (std::size_t tau = 1; tau <= k; ++tau) {
        const double w = std::pow(keep, double(k - tau));
        detail::add_scaled(acc, w * config.q, st[tau].gamma);
        detail::add_scaled(acc, w * keep, st[tau].Z);
      }
      worst = std::max(worst, max_abs_diff(acc, st[k].g_err));
      gt[k] = std::move(acc);
    }
  }

  for (std::size_t k = 0; k < st.size(); ++k) {
    const double kd = double(k);
    ParamVector acc;
    switch (method) {
      case Method::Gluon:
      case Method::GluonMVR1: {
        // beta^k mu^0 + sum beta^{k-tau} alpha gamma^tau + sum beta^{k+1-tau} (S or Z)^tau
        const bool mvr = method == Method::GluonMVR1;
        acc = std::pow(beta, kd) * mu0;
        for (std::size_t tau = 1; tau <= k; ++tau) {
          detail::add_scaled(acc, std::pow(beta, double(k - tau)) * alpha, st[tau].gamma);
          detail::add_scaled(acc, std::pow(beta, double(k + 1 - tau)), mvr ? st[tau].Z : st[tau].S);
        }
        break;
      }
      case Method::GluonMVR1Decreasing: {
        // beta^{1:k} mu^0 + sum beta^{(tau+1):k} alpha^tau gamma^tau + sum beta^{tau:k} Z^tau
        const long long kk = static_cast<long long>(k);
        acc = detail::decreasing_product(1, kk) * mu0;
        for (long long tau = 1; tau <= kk; ++tau) {
          const double a = 1.0 - detail::decreasing_beta(tau);
          detail::add_scaled(acc, detail::decreasing_product(tau + 1, kk) * a, st[std::size_t(tau)].gamma);
          detail::add_scaled(acc, detail::decreasing_product(tau, kk), st[std::size_t(tau)].Z);
        }
        break;
      }
      case Method::GluonMVR2:
      case Method::GluonMVR3: {
        // beta^k mu^0 + sum beta^{k-tau} alpha gt^tau + sum beta^{k+1-tau} (S or Z)^tau
        const bool mvr3 = method == Method::GluonMVR3;
        acc = std::pow(beta, kd) * mu0;
        for (std::size_t tau = 1; tau <= k; ++tau) {
          detail::add_scaled(acc, std::pow(beta, double(k - tau)) * alpha, gt[tau]);
          detail::add_scaled(acc, std::pow(beta, double(k + 1 - tau)), mvr3 ? st[tau].Z : st[tau].S);
        }
        break;
      }
      case Method::MuonMVR: {
        // (1-alpha)^k mu^0 + sum (1-alpha)^{k-i} Delta_i
        const double keep_m = 1.0 - config.alpha;
        acc = std::pow(keep_m, kd) * mu0;
        for (std::size_t i = 1; i <= k; ++i) detail::add_scaled(acc, std::pow(keep_m, double(k - i)), st[i].Delta);
        break;
      }
    }
    worst = std::max(worst, max_abs_diff(acc, st[k].mu));
  }
  return worst;
}

inline constexpr double kRecursionTolerance = 1e-9;

inline bool check_momentum_recursion(const MomentumErrorTrace& trace, Method method, const OptimizerConfig& config) {
  return momentum_recursion_discrepancy(trace, method, config) <= kRecursionTolerance;
}

}  // namespace lmo_mvr

#endif  // LMO_MVR_ANALYSIS_HPP
