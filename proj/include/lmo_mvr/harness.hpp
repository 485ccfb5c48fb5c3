#ifndef LMO_MVR_HARNESS_HPP
#define LMO_MVR_HARNESS_HPP

// Experiment runner: full runs with per-iterate stationarity metrics, seed
// sweeps on a worker pool, and log-log rate fits over iteration budgets.

#include <algorithm>
#include <atomic>
#include <exception>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lmo_mvr/analysis.hpp"
#include "lmo_mvr/model.hpp"
#include "lmo_mvr/optimizers.hpp"
#include "lmo_mvr/oracles.hpp"

namespace lmo_mvr {

inline std::vector<double> layer_dual_norms(const ModelShape& shape, const ParamVector& grad) {
  std::vector<double> out(shape.size());
  for (std::size_t i = 0; i < shape.size(); ++i) out[i] = dual_norm(shape[i].norm, grad[i]);
  return out;
}

/// sum_i t_i ||grad_i f(X)||_(i)*
inline double stationarity_metric(const Problem& problem, const ModelShape& shape, const ParamVector& x) {
  require_shape(shape, x, "stationarity_metric");
  const auto norms = layer_dual_norms(shape, problem.full_grad(x));
  double m = 0.0;
  for (std::size_t i = 0; i < shape.size(); ++i) m += shape[i].radius_scale * norms[i];
  return m;
}

inline double stationarity_metric(const Problem& problem, const ParamVector& x) {
  return stationarity_metric(problem, problem.shape(), x);
}

struct RunRow {
  long long k = 0;
  double f_value = 0.0;
  std::vector<double> dual_norms;
  double metric = 0.0;
  double min_metric = 0.0;
  double momentum_error = 0.0;  // ||M^k - grad f(X^k)||_2^2 over all layers
};

struct RunRecord {
  OptimizerConfig config;
  std::uint64_t seed = 0;
  std::vector<RunRow> rows;  // k = 0 .. K-1
  double final_f = 0.0;      // f(X^K)
  double f_min = std::numeric_limits<double>::quiet_NaN();
  double delta0 = std::numeric_limits<double>::quiet_NaN();  // f(X^0) - f_min
  double wall_seconds = 0.0;
  double max_ball_violation = -std::numeric_limits<double>::infinity();  // max_k,i step_i - radius_i
  bool aborted = false;
  std::string abort_reason;
  std::optional<RunRow> diagnostic;  // last state when a non-finite iterate aborted the run
  std::optional<MomentumErrorTrace> trace;

  double final_min_metric() const { return rows.empty() ? std::numeric_limits<double>::quiet_NaN() : rows.back().min_metric; }
};

inline constexpr double kBallTolerance = 1e-9;

struct RunOptions {
  bool instrument = false;
  std::optional<double> f_min;
  ParamVector x0;  // empty: problem.initial_point()
};

/// K steps of the configured method from seed; row k describes X^k and the
/// momentum used at it.
inline RunRecord run_experiment(const OptimizerConfig& config, const Problem& problem, std::uint64_t seed,
                                const RunOptions& opt = {}) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const ModelShape& shape = problem.shape();
  RunRecord rec;
  rec.config = config;
  rec.seed = seed;
  if (opt.f_min) rec.f_min = *opt.f_min;
  else if (auto fm = problem.known_minimum()) rec.f_min = *fm;

  const ParamVector x0 = opt.x0.empty() ? problem.initial_point() : opt.x0;
  OptimizerState state = init_state(config, shape, x0, problem, RngState(seed));
  std::optional<MomentumTraceRecorder> recorder;
  if (opt.instrument) {
    recorder.emplace(problem, config);
    recorder->start(state);
  }

  rec.rows.reserve(static_cast<std::size_t>(config.K));
  double running_min = std::numeric_limits<double>::infinity();
  for (long long k = 0; k < config.K; ++k) {
    StepReport rep;
    try {
      rep = step(state, config, problem);
    } catch (const InvalidInput& e) {
      // a non-finite gradient or momentum reaches the LMO
      rec.aborted = true;
      rec.abort_reason = "step " + std::to_string(k) + " failed: " + e.what();
      RunRow diag;
      diag.k = k;
      diag.f_value = all_finite(state.X) ? problem.value(state.X) : std::numeric_limits<double>::quiet_NaN();
      diag.metric = std::numeric_limits<double>::quiet_NaN();
      diag.min_metric = running_min;
      rec.diagnostic = diag;
      break;
    }
    const ParamVector grad = problem.full_grad(rep.X);
    RunRow row;
    row.k = k;
    row.f_value = problem.value(rep.X);
    row.momentum_error = squared_euclidean(rep.M - grad);
    if (!std::isfinite(row.f_value) || !all_finite(grad) || !all_finite(rep.M)) {
      row.metric = std::numeric_limits<double>::quiet_NaN();
      row.min_metric = running_min;
      rec.aborted = true;
      rec.abort_reason = "non-finite iterate, gradient or momentum at k = " + std::to_string(k);
      rec.diagnostic = row;
      break;
    }
    row.dual_norms = layer_dual_norms(shape, grad);
    for (std::size_t i = 0; i < shape.size(); ++i) row.metric += shape[i].radius_scale * row.dual_norms[i];
    running_min = std::min(running_min, row.metric);
    row.min_metric = running_min;
    for (std::size_t i = 0; i < rep.step.size(); ++i) {
      rec.max_ball_violation = std::max(rec.max_ball_violation, rep.step[i] - rep.radius[i]);
    }
    if (k == 0) rec.delta0 = row.f_value - rec.f_min;
    rec.rows.push_back(std::move(row));
    if (recorder) recorder->record(rep, state);
    if (!all_finite(state.X)) {
      rec.aborted = true;
      rec.abort_reason = "non-finite iterate after step " + std::to_string(k);
      RunRow diag;
      diag.k = k + 1;
      diag.f_value = std::numeric_limits<double>::quiet_NaN();
      diag.metric = std::numeric_limits<double>::quiet_NaN();
      diag.min_metric = running_min;
      rec.diagnostic = diag;
      break;
    }
  }
  rec.final_f = rec.aborted ? std::numeric_limits<double>::quiet_NaN() : problem.value(state.X);
  if (recorder) rec.trace = recorder->take();
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Rate fitting

struct RateFit {
  std::vector<long long> budgets;
  std::vector<double> metric_at_K;  // mean over seeds of the final min-metric
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
};

/// Ordinary least squares of y on x: (slope, intercept, stderr of slope).
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("fit_line: need at least two paired points");
  const double n = double(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw InvalidInput("fit_line: x values must not all coincide");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (x.size() > 2) {
    double ssr = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - (f.intercept + f.slope * x[i]);
      ssr += r * r;
    }
    f.stderr_slope = std::sqrt(ssr / (n - 2.0) / sxx);
  }
  return f;
}

struct BudgetSamples {
  long long K = 0;
  std::vector<double> min_metrics;  // one per seed
};

inline constexpr std::size_t kMinRateBudgets = 3;
inline constexpr std::size_t kMinRateSeeds = 5;

/// Slope of log(mean min-metric) against log K.
inline RateFit fit_rate(const std::vector<BudgetSamples>& groups) {
  if (groups.size() < kMinRateBudgets) throw InvalidInput("fit_rate: at least 3 budgets are required");
  RateFit fit;
  std::vector<double> lx, ly;
  for (const auto& g : groups) {
    if (g.min_metrics.size() < kMinRateSeeds) throw InvalidInput("fit_rate: at least 5 seeds per budget are required");
    if (g.K < 1) throw InvalidInput("fit_rate: budgets must be positive");
    if (std::find(fit.budgets.begin(), fit.budgets.end(), g.K) != fit.budgets.end()) {
      throw InvalidInput("fit_rate: budgets must be distinct");
    }
    double mean = 0.0;
    for (double v : g.min_metrics) mean += v;
    mean /= double(g.min_metrics.size());
    if (!(mean > 0.0) || !std::isfinite(mean)) throw InvalidInput("fit_rate: mean metric must be positive and finite");
    fit.budgets.push_back(g.K);
    fit.metric_at_K.push_back(mean);
    lx.push_back(std::log(double(g.K)));
    ly.push_back(std::log(mean));
  }
  const LineFit lf = fit_line(lx, ly);
  fit.slope = lf.slope;
  fit.intercept = lf.intercept;
  fit.stderr_slope = lf.stderr_slope;
  return fit;
}

inline RateFit fit_rate(const std::vector<RunRecord>& records) {
  std::vector<BudgetSamples> groups;
  for (const auto& r : records) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const BudgetSamples& g) { return g.K == r.config.K; });
    if (it == groups.end()) {
      groups.push_back({r.config.K, {}});
      it = groups.end() - 1;
    }
    it->min_metrics.push_back(r.final_min_metric());
  }
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.K < b.K; });
  return fit_rate(groups);
}

// ---------------------------------------------------------------------------
// Parallel execution

/// Runs task(i) for i in [0, n) on up to `parallelism` threads. Results are
/// written by index, so scheduling order never affects the output.
template <typename Task>
void parallel_for(std::size_t n, unsigned parallelism, Task&& task) {
  const unsigned workers = std::max(1u, std::min<unsigned>(parallelism, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) task(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline unsigned default_parallelism() { return std::max(1u, std::thread::hardware_concurrency()); }

struct CellSummary {
  OptimizerConfig config;
  std::size_t seed_count = 0;
  std::size_t aborted = 0;
  double mean_min_metric = 0.0;
  double std_min_metric = 0.0;
  double mean_final_f = 0.0;
  double std_final_f = 0.0;
};

struct SweepResult {
  std::vector<RunRecord> records;  // cell-major, seed-minor
  std::vector<CellSummary> cells;
};

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= double(v.size());
  if (v.size() < 2) return;
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / double(v.size() - 1));
}

}  // namespace detail

inline CellSummary summarize(const OptimizerConfig& config, const std::vector<const RunRecord*>& runs) {
  CellSummary c;
  c.config = config;
  c.seed_count = runs.size();
  std::vector<double> mins, fs;
  for (const auto* r : runs) {
    if (r->aborted) {
      ++c.aborted;
      continue;
    }
    mins.push_back(r->final_min_metric());
    fs.push_back(r->final_f);
  }
  detail::mean_std(mins, c.mean_min_metric, c.std_min_metric);
  detail::mean_std(fs, c.mean_final_f, c.std_final_f);
  return c;
}

/// Every (config, seed) pair; aborted runs are kept in the output.
inline SweepResult sweep(const std::vector<OptimizerConfig>& grid, const Problem& problem,
                         const std::vector<std::uint64_t>& seeds, unsigned parallelism,
                         const RunOptions& opt = {}) {
  if (grid.empty()) throw InvalidInput("sweep: grid must not be empty");
  if (seeds.empty()) throw InvalidInput("sweep: at least one seed is required");
  for (const auto& c : grid) c.validate();
  SweepResult out;
  out.records.resize(grid.size() * seeds.size());
  parallel_for(out.records.size(), parallelism, [&](std::size_t i) {
    out.records[i] = run_experiment(grid[i / seeds.size()], problem, seeds[i % seeds.size()], opt);
  });
  for (std::size_t c = 0; c < grid.size(); ++c) {
    std::vector<const RunRecord*> runs;
    for (std::size_t s = 0; s < seeds.size(); ++s) runs.push_back(&out.records[c * seeds.size() + s]);
    out.cells.push_back(summarize(grid[c], runs));
  }
  return out;
}

struct RateStudy {
  RateFit fit;
  std::vector<CellSummary> budgets;  // one per K, same order as fit.budgets
  std::vector<RunRecord> records;
};

/// One sweep cell per budget with config_for(K), then a rate fit on the
/// per-seed final min-metrics.
inline RateStudy rate_study(const std::function<OptimizerConfig(long long)>& config_for,
                            const std::vector<long long>& budgets, const Problem& problem,
                            const std::vector<std::uint64_t>& seeds, unsigned parallelism,
                            const RunOptions& opt = {}) {
  if (budgets.size() < kMinRateBudgets) throw InvalidInput("rate_study: at least 3 budgets are required");
  if (seeds.size() < kMinRateSeeds) throw InvalidInput("rate_study: at least 5 seeds are required");
  std::vector<OptimizerConfig> grid;
  for (long long K : budgets) grid.push_back(config_for(K));
  SweepResult sw = sweep(grid, problem, seeds, parallelism, opt);
  RateStudy st;
  st.budgets = std::move(sw.cells);
  std::vector<BudgetSamples> groups;
  for (std::size_t b = 0; b < grid.size(); ++b) {
    BudgetSamples g{grid[b].K, {}};
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const auto& r = sw.records[b * seeds.size() + s];
      if (r.aborted) throw InvalidInput("rate_study: run aborted (" + r.abort_reason + ")");
      g.min_metrics.push_back(r.final_min_metric());
    }
    groups.push_back(std::move(g));
  }
  st.fit = fit_rate(groups);
  st.records = std::move(sw.records);
  return st;
}

inline std::vector<std::uint64_t> seed_range(std::size_t n, std::uint64_t first = 1) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = first + i;
  return s;
}

/// Known infimum when available; otherwise the best value of a long
/// deterministic gradient-descent run with Armijo backtracking from the
/// problem's initial point.
inline double reference_minimum(const Problem& problem, long long iterations = 20000) {
  if (auto fm = problem.known_minimum()) return *fm;
  ParamVector x = problem.initial_point();
  double f = problem.value(x);
  double step_size = 1.0;
  for (long long it = 0; it < iterations; ++it) {
    const ParamVector g = problem.full_grad(x);
    const double gg = squared_euclidean(g);
    if (gg < 1e-28) break;
    step_size *= 2.0;
    for (;;) {
      ParamVector trial = x - step_size * g;
      const double ft = problem.value(trial);
      if (ft <= f - 0.5 * step_size * gg) {
        x = std::move(trial);
        f = ft;
        break;
      }
      step_size *= 0.5;
      if (step_size < 1e-20) return f;
    }
  }
  return f;
}

}  // namespace lmo_mvr

#endif  // LMO_MVR_HARNESS_HPP
