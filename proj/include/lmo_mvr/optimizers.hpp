#ifndef LMO_MVR_OPTIMIZERS_HPP
#define LMO_MVR_OPTIMIZERS_HPP

// LMO-based optimizers with momentum variance reduction.
//
// Every Gluon-family step k >= 1 draws one sample xi^k and, for the MVR
// variants, evaluates it at both X^k and X^{k-1}. Step 0 uses the momentum
// produced by init_state unchanged. MuonMVR moves first and then refreshes the
// momentum at the (weight-decayed) new point.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "lmo_mvr/model.hpp"
#include "lmo_mvr/norms.hpp"
#include "lmo_mvr/oracles.hpp"

namespace lmo_mvr {

enum class Method { Gluon, GluonMVR1, GluonMVR1Decreasing, GluonMVR2, GluonMVR3, MuonMVR };

inline constexpr Method kAllMethods[] = {Method::Gluon,     Method::GluonMVR1, Method::GluonMVR1Decreasing,
                                         Method::GluonMVR2, Method::GluonMVR3, Method::MuonMVR};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Gluon: return "gluon";
    case Method::GluonMVR1: return "gluon_mvr1";
    case Method::GluonMVR1Decreasing: return "gluon_mvr1_decreasing";
    case Method::GluonMVR2: return "gluon_mvr2";
    case Method::GluonMVR3: return "gluon_mvr3";
    case Method::MuonMVR: return "muon_mvr";
  }
  return "unknown";
}

inline Method parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (to_string(m) == name) return m;
  }
  throw InvalidInput("unknown method '" + std::string(name) + "'");
}

inline bool uses_estimator(Method m) { return m == Method::GluonMVR2 || m == Method::GluonMVR3; }

/// For the Gluon family alpha is implied (1 - beta) and the stored value is
/// informational. For MuonMVR beta is the weight decay and alpha the momentum
/// refresh weight.
struct OptimizerConfig {
  Method method = Method::GluonMVR1;
  double eta = 3.6e-4;
  double beta = 0.9;
  double alpha = 0.1;
  double q = 0.7;
  long long K = 5000;
  std::string schedule = "manual";  // which theorem branch produced the values

  void validate() const {
    if (K < 1) throw InvalidInput("OptimizerConfig: K must be >= 1");
    if (method != Method::GluonMVR1Decreasing && !(eta > 0.0 && std::isfinite(eta))) {
      throw InvalidInput("OptimizerConfig: eta must be positive");
    }
    if (!(beta >= 0.0 && beta < 1.0)) throw InvalidInput("OptimizerConfig: beta must lie in [0, 1)");
    if (uses_estimator(method) && !(q > 0.0 && q <= 1.0)) throw InvalidInput("OptimizerConfig: q must lie in (0, 1]");
    if (method == Method::MuonMVR) {
      if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidInput("OptimizerConfig: alpha must lie in (0, 1]");
      if (alpha < beta) throw InvalidInput("OptimizerConfig: MuonMVR requires alpha >= beta");
    }
  }
};

struct OptimizerState {
  long long k = 0;
  ParamVector X;
  ParamVector X_prev;
  ParamVector M;
  ParamVector g;  // MVR estimator (GluonMVR2/3 only)
  RngState rng;
};

/// What a single step did; the harness uses it for ball checks and the
/// momentum-error instrumentation.
struct StepReport {
  long long k = 0;
  ParamVector X;               // X^k, the ball center
  ParamVector M;               // momentum used for the LMO at X^k
  std::vector<double> radius;  // per-layer radius of the LMO ball
  std::vector<double> step;    // ||X_i^{k+1} - X_i^k||_(i) (Muon: before decay)
  double beta = 0.0;           // momentum weight in effect
  bool sampled = false;        // a new sample was drawn during this step
  // Same-sample gradients of the freshly drawn xi: for the Gluon family at
  // (X^k, X^{k-1}); for MuonMVR at (X^{k+1}, X^k).
  ParamVector sg_new;
  ParamVector sg_old;
};

inline OptimizerState init_state(const OptimizerConfig& config, const ModelShape& shape, const ParamVector& x0,
                                 const Problem& problem, RngState rng) {
  config.validate();
  require_shape(shape, x0, "init_state");
  require_shape(problem.shape(), x0, "init_state");
  OptimizerState s;
  s.rng = std::move(rng);
  s.X = x0;
  s.X_prev = x0;
  s.M = problem.stoch_grad(draw_sample(s.rng, problem), x0);
  if (uses_estimator(config.method)) s.g = s.M;
  return s;
}

/// X_i - radius_i * lmo_direction(norm_i, M_i) per layer.
inline ParamVector lmo_step(const ModelShape& shape, const ParamVector& x, const ParamVector& m,
                            const std::vector<double>& radius) {
  require_shape(shape, x, "lmo_step");
  require_shape(shape, m, "lmo_step");
  if (radius.size() != shape.size()) throw InvalidInput("lmo_step: one radius per layer is required");
  ParamVector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(radius[i] > 0.0)) throw InvalidInput("lmo_step: radii must be positive");
    out[i] = x[i] - radius[i] * lmo_direction(shape[i].norm, m[i]);
  }
  return out;
}

namespace detail {

inline std::vector<double> radii(const ModelShape& shape, double scale) {
  std::vector<double> r;
  r.reserve(shape.size());
  for (const auto& l : shape.layers) r.push_back(l.radius_scale * scale);
  return r;
}

inline std::vector<double> step_norms(const ModelShape& shape, const ParamVector& a, const ParamVector& b) {
  std::vector<double> out(shape.size());
  for (std::size_t i = 0; i < shape.size(); ++i) out[i] = norm(shape[i].norm, a[i] - b[i]);
  return out;
}

/// (k+1)^{-2/3}
inline double decreasing_weight(long long k) { return std::pow(static_cast<double>(k + 1), -2.0 / 3.0); }

inline void move(OptimizerState& s, const ModelShape& shape, StepReport& rep) {
  ParamVector next = lmo_step(shape, s.X, rep.M, rep.radius);
  rep.step = step_norms(shape, next, s.X);
  s.X_prev = std::move(s.X);
  s.X = std::move(next);
  ++s.k;
}

template <typename Update>
StepReport gluon_family_step(OptimizerState& s, const Problem& problem, double beta, double radius_scale,
                             bool two_point, Update&& update) {
  const ModelShape& shape = problem.shape();
  StepReport rep;
  rep.k = s.k;
  rep.beta = beta;
  rep.X = s.X;
  if (s.k > 0) {
    const Sample xi = draw_sample(s.rng, problem);
    rep.sampled = true;
    rep.sg_new = problem.stoch_grad(xi, s.X);
    if (two_point) rep.sg_old = problem.stoch_grad(xi, s.X_prev);
    update(rep.sg_new, rep.sg_old);
  }
  rep.M = s.M;
  rep.radius = radii(shape, radius_scale);
  move(s, shape, rep);
  return rep;
}

}  // namespace detail

/// M^k = beta M^{k-1} + (1 - beta) grad f_xi(X^k)
inline StepReport step_gluon(OptimizerState& s, const OptimizerConfig& c, const Problem& problem) {
  const double beta = c.beta;
  return detail::gluon_family_step(s, problem, beta, c.eta, false, [&](const ParamVector& sg, const ParamVector&) {
    for (std::size_t i = 0; i < s.M.size(); ++i) s.M[i] = beta * s.M[i] + (1.0 - beta) * sg[i];
  });
}

/// M^k = grad f_xi(X^k) + beta (M^{k-1} - grad f_xi(X^{k-1}))
inline StepReport step_gluon_mvr1(OptimizerState& s, const OptimizerConfig& c, const Problem& problem) {
  const double beta = c.beta;
  return detail::gluon_family_step(s, problem, beta, c.eta, true, [&](const ParamVector& sg, const ParamVector& so) {
    for (std::size_t i = 0; i < s.M.size(); ++i) s.M[i] = sg[i] + beta * (s.M[i] - so[i]);
  });
}

/// MVR-1 with beta^k = 1 - (k+1)^{-2/3} and radius t_i (k+1)^{-2/3}.
inline StepReport step_gluon_mvr1_decreasing(OptimizerState& s, const OptimizerConfig&, const Problem& problem) {
  const double w = detail::decreasing_weight(s.k);
  const double beta = 1.0 - w;
  return detail::gluon_family_step(s, problem, beta, w, true, [&](const ParamVector& sg, const ParamVector& so) {
    for (std::size_t i = 0; i < s.M.size(); ++i) s.M[i] = sg[i] + beta * (s.M[i] - so[i]);
  });
}

/// g^k = grad f_xi(X^k) + (1-q)(g^{k-1} - grad f_xi(X^{k-1})),
/// M^k = beta M^{k-1} + (1 - beta) g^k
inline StepReport step_gluon_mvr2(OptimizerState& s, const OptimizerConfig& c, const Problem& problem) {
  const double beta = c.beta;
  const double keep = 1.0 - c.q;
  return detail::gluon_family_step(s, problem, beta, c.eta, true, [&](const ParamVector& sg, const ParamVector& so) {
    for (std::size_t i = 0; i < s.M.size(); ++i) {
      s.g[i] = sg[i] + keep * (s.g[i] - so[i]);
      s.M[i] = beta * s.M[i] + (1.0 - beta) * s.g[i];
    }
  });
}

/// MVR-2 estimator plus the correction beta (grad f_xi(X^k) - grad f_xi(X^{k-1})).
inline StepReport step_gluon_mvr3(OptimizerState& s, const OptimizerConfig& c, const Problem& problem) {
  const double beta = c.beta;
  const double keep = 1.0 - c.q;
  return detail::gluon_family_step(s, problem, beta, c.eta, true, [&](const ParamVector& sg, const ParamVector& so) {
    for (std::size_t i = 0; i < s.M.size(); ++i) {
      s.g[i] = sg[i] + keep * (s.g[i] - so[i]);
      s.M[i] = beta * s.M[i] + (1.0 - beta) * s.g[i] + beta * (sg[i] - so[i]);
    }
  });
}

/// X^{k+1} = (1 - beta)(X^k - eta D(M^k)) per layer (radius t_i eta), then
/// M^{k+1} = (1 - alpha)(M^k - grad f_xi(X^k)) + grad f_xi(X^{k+1}) with a
/// fresh xi evaluated at the decayed point.
inline StepReport step_muon_mvr(OptimizerState& s, const OptimizerConfig& c, const Problem& problem) {
  const ModelShape& shape = problem.shape();
  StepReport rep;
  rep.k = s.k;
  rep.beta = 1.0 - c.alpha;
  rep.X = s.X;
  rep.M = s.M;
  rep.radius = detail::radii(shape, c.eta);
  ParamVector moved = lmo_step(shape, s.X, s.M, rep.radius);
  rep.step = detail::step_norms(shape, moved, s.X);
  for (auto& b : moved) b *= (1.0 - c.beta);

  const Sample xi = draw_sample(s.rng, problem);
  rep.sampled = true;
  rep.sg_new = problem.stoch_grad(xi, moved);
  rep.sg_old = problem.stoch_grad(xi, s.X);
  const double keep = 1.0 - c.alpha;
  for (std::size_t i = 0; i < s.M.size(); ++i) s.M[i] = rep.sg_new[i] + keep * (s.M[i] - rep.sg_old[i]);

  s.X_prev = std::move(s.X);
  s.X = std::move(moved);
  ++s.k;
  return rep;
}

inline StepReport step(OptimizerState& s, const OptimizerConfig& c, const Problem& problem) {
  switch (c.method) {
    case Method::Gluon: return step_gluon(s, c, problem);
    case Method::GluonMVR1: return step_gluon_mvr1(s, c, problem);
    case Method::GluonMVR1Decreasing: return step_gluon_mvr1_decreasing(s, c, problem);
    case Method::GluonMVR2: return step_gluon_mvr2(s, c, problem);
    case Method::GluonMVR3: return step_gluon_mvr3(s, c, problem);
    case Method::MuonMVR: return step_muon_mvr(s, c, problem);
  }
  throw InvalidInput("step: unknown method");
}

namespace detail {

/// min_i 1 / (scale * L1_i * t_i) over layers with L1_i > 0; +inf otherwise.
inline double l1_cap(const ProblemConstants& c, const std::vector<double>& t, double scale) {
  double cap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < c.L1_hat.size(); ++i) {
    const double ti = i < t.size() ? t[i] : 1.0;
    if (c.L1_hat[i] > 0.0) cap = std::min(cap, 1.0 / (scale * c.L1_hat[i] * ti));
  }
  return cap;
}

}  // namespace detail

/// Step size and momentum prescribed by the convergence theorem of each
/// method for budget K. `t` holds the per-layer radius multipliers (missing
/// entries are 1). When some L1_hat > 0 the generalized-smoothness branch caps
/// eta; `schedule` records the branch.
inline OptimizerConfig theorem_schedule(Method method, long long K, const ProblemConstants& constants,
                                        const std::vector<double>& t = {}) {
  if (K < 1) throw InvalidInput("theorem_schedule: K must be >= 1");
  const double k = static_cast<double>(K);
  OptimizerConfig c;
  c.method = method;
  c.K = K;
  c.q = 1.0;
  bool capped = false;
  auto cap = [&](double limit) {
    if (limit < c.eta) {
      c.eta = limit;
      capped = true;
    }
  };
  switch (method) {
    case Method::GluonMVR1: {
      c.alpha = std::pow(k, -2.0 / 3.0);
      c.eta = c.alpha;
      cap(detail::l1_cap(constants, t, 1.0));
      c.schedule = capped ? "gluon_mvr1:l1_capped" : "gluon_mvr1:smooth";
      break;
    }
    case Method::GluonMVR1Decreasing: {
      c.alpha = 1.0;  // beta^0 = 0; later steps follow (k+1)^{-2/3}
      c.eta = 1.0;
      c.schedule = "gluon_mvr1_decreasing:(k+1)^(-2/3)";
      break;
    }
    case Method::Gluon: {
      c.alpha = std::pow(k, -0.5);
      c.eta = std::pow(k, -0.75);
      cap(c.alpha * detail::l1_cap(constants, t, 5.0));
      c.schedule = capped ? "gluon:l1_capped" : "gluon:smooth";
      break;
    }
    case Method::GluonMVR2: {
      c.q = std::pow(k, -2.0 / 3.0);
      c.eta = c.q;
      c.alpha = std::pow(k, -1.0 / 3.0);
      cap(c.alpha * detail::l1_cap(constants, t, 5.0));
      c.schedule = capped ? "gluon_mvr2:l1_capped" : "gluon_mvr2:smooth";
      break;
    }
    case Method::GluonMVR3: {
      c.alpha = std::pow(k, -2.0 / 3.0);
      c.q = c.alpha;
      c.eta = c.alpha;
      cap(detail::l1_cap(constants, t, 1.0));
      c.schedule = capped ? "gluon_mvr3:l1_capped" : "gluon_mvr3:smooth";
      break;
    }
    case Method::MuonMVR: {
      if (K < 2) throw InvalidInput("theorem_schedule: MuonMVR needs K >= 2 (log K > 0)");
      if (!(constants.D > 0.0)) throw InvalidInput("theorem_schedule: MuonMVR needs a positive distance bound D");
      c.alpha = std::min(1.0, 2.0 * std::log(k) / k);
      c.beta = c.alpha;
      c.eta = c.beta * constants.D;
      c.schedule = "muon_mvr:eta=beta*D";
      return c;
    }
  }
  c.beta = 1.0 - c.alpha;
  return c;
}

}  // namespace lmo_mvr

#endif  // LMO_MVR_OPTIMIZERS_HPP
