#ifndef LMO_MVR_CLI_HPP
#define LMO_MVR_CLI_HPP

// Config parsing, CSV output and subcommand dispatch behind the lmo-mvr
// executable. Kept in the library so tests can drive it in-process.
//
// Config files are flat INI: `[section]` headers, `key = value` lines, `#` or
// `;` comments. Unknown keys and out-of-range values are errors carrying the
// line number.

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lmo_mvr/analysis.hpp"
#include "lmo_mvr/harness.hpp"
#include "lmo_mvr/model.hpp"
#include "lmo_mvr/norms.hpp"
#include "lmo_mvr/optimizers.hpp"
#include "lmo_mvr/oracles.hpp"

namespace lmo_mvr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitVerificationFailed = 1, kExitUsage = 2 };

// ---------------------------------------------------------------------------
// Formatting

/// 17 significant digits: enough for an exact double round trip.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw InvalidInput("csv: no column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      t.header = split(line, ',');
      first = false;
    } else {
      t.rows.push_back(split(line, ','));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Configuration

struct ProblemSettings {
  std::string kind = "logistic";  // logistic | quadratic | matrix_factorization | mlp
  NormKind norm = NormKind::Spectral;
  std::vector<double> t{1.0};  // one value for all layers or one per layer
  std::uint64_t data_seed = 0;
  std::size_t n_points = 1024;
  long long features = 16;
  long long classes = 4;
  std::size_t batch = 8;
  double feature_scale = 1.0;
  double teacher_scale = 1.0;
  double l2 = 0.0;
  // quadratic
  long long rows = 8;
  long long cols = 8;
  long long layers = 1;
  double noise = 0.1;
  double curvature_min = 0.5;
  double curvature_max = 1.0;
  double minimizer_norm = 1.0;
  // factorization / mlp
  long long in_dim = 8;
  long long hidden = 6;
  long long out_dim = 5;
  double target_noise = 0.0;
  double init_scale = 0.3;
};

struct MethodSettings {
  Method method = Method::GluonMVR1;
  std::optional<double> eta = 3.6e-4;  // nullopt: auto
  std::optional<double> beta;          // unset keys take the schedule (auto) or the defaults below
  std::optional<double> alpha;
  std::optional<double> q;
  long long K = 5000;
};

inline constexpr double kDefaultBeta = 0.9;
inline constexpr double kDefaultQ = 0.7;

struct HarnessSettings {
  std::size_t seeds = 10;
  std::uint64_t first_seed = 1;
  unsigned parallelism = 0;  // 0: hardware concurrency
  std::vector<long long> budgets{500, 1000, 2000, 4000, 8000};
  std::vector<double> sweep_beta;
  std::vector<double> sweep_eta;
  std::vector<double> sweep_q;
  long long reference_iters = 20000;
  std::size_t estimate_samples = 64;
  std::size_t estimate_pairs = 32;
  std::size_t lmo_samples = 1000;
  bool trace_files = true;
};

struct ExperimentConfig {
  MethodSettings method;
  ProblemSettings problem;
  HarnessSettings harness;
};

namespace detail {

struct Entry {
  std::string value;
  std::string where;  // "line N" or "--set"
};

using Sections = std::map<std::string, std::map<std::string, Entry>>;

[[noreturn]] inline void config_fail(const std::string& where, const std::string& msg) {
  throw ConfigError(where + ": " + msg);
}

inline double to_double(const Entry& e, const std::string& key) {
  const std::string v = trim(e.value);
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(x)) {
    config_fail(e.where, "'" + key + "' expects a number, got '" + v + "'");
  }
  return x;
}

inline long long to_int(const Entry& e, const std::string& key) {
  const std::string v = trim(e.value);
  char* end = nullptr;
  errno = 0;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
    config_fail(e.where, "'" + key + "' expects an integer, got '" + v + "'");
  }
  return x;
}

inline bool to_bool(const Entry& e, const std::string& key) {
  const std::string v = trim(e.value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  config_fail(e.where, "'" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<double> to_doubles(const Entry& e, const std::string& key) {
  std::vector<double> out;
  for (const auto& part : split(e.value, ',')) out.push_back(to_double({part, e.where}, key));
  if (out.empty()) config_fail(e.where, "'" + key + "' expects a comma-separated list");
  return out;
}

inline void require(bool ok, const Entry& e, const std::string& key, const std::string& range) {
  if (!ok) config_fail(e.where, "'" + key + "' out of range (" + range + "), got '" + trim(e.value) + "'");
}

inline const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"method", {"method", "eta", "beta", "alpha", "q", "K"}},
      {"problem",
       {"problem", "norm", "t", "data_seed", "n_points", "features", "classes", "batch", "feature_scale",
        "teacher_scale", "l2", "rows", "cols", "layers", "noise", "curvature_min", "curvature_max", "minimizer_norm",
        "in_dim", "hidden", "out_dim", "target_noise", "init_scale"}},
      {"harness",
       {"seeds", "first_seed", "parallelism", "budgets", "sweep_beta", "sweep_eta", "sweep_q", "reference_iters",
        "estimate_samples", "estimate_pairs", "lmo_samples", "trace_files"}},
  };
  return keys;
}

inline void put(Sections& sections, const std::string& section, const std::string& key, Entry e) {
  const auto& allowed = allowed_keys();
  auto it = allowed.find(section);
  if (it == allowed.end()) config_fail(e.where, "unknown section [" + section + "]");
  if (!it->second.count(key)) config_fail(e.where, "unknown key '" + key + "' in [" + section + "]");
  sections[section][key] = std::move(e);
}

inline Sections parse_sections(const std::string& text) {
  Sections sections;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = "line " + std::to_string(line_no);
    std::string line = raw;
    if (auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') config_fail(where, "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (!allowed_keys().count(section)) config_fail(where, "unknown section [" + section + "]");
      sections[section];  // an empty section still counts as present
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_fail(where, "expected 'key = value', got '" + line + "'");
    if (section.empty()) config_fail(where, "key outside of any [section]");
    const std::string key = trim(line.substr(0, eq));
    if (sections[section].count(key)) config_fail(where, "duplicate key '" + key + "'");
    put(sections, section, key, {trim(line.substr(eq + 1)), where});
  }
  return sections;
}

inline void apply_override(Sections& sections, const std::string& assignment) {
  const std::string where = "--set " + assignment;
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    config_fail(where, "expected section.key=value");
  }
  put(sections, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
      {trim(assignment.substr(eq + 1)), where});
}

inline ExperimentConfig resolve(const Sections& sections, bool require_problem) {
  if (require_problem && !sections.count("problem")) throw ConfigError("config: missing required section [problem]");
  ExperimentConfig cfg;
  auto get = [&](const std::string& sec, const std::string& key) -> const Entry* {
    auto s = sections.find(sec);
    if (s == sections.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  };

  auto& m = cfg.method;
  if (auto e = get("method", "method")) {
    try {
      m.method = parse_method(trim(e->value));
    } catch (const InvalidInput&) {
      config_fail(e->where, "unknown method '" + trim(e->value) + "'");
    }
  }
  if (auto e = get("method", "eta")) {
    if (trim(e->value) == "auto") {
      m.eta.reset();
    } else {
      m.eta = to_double(*e, "eta");
      require(*m.eta > 0.0, *e, "eta", "> 0 or auto");
    }
  }
  if (auto e = get("method", "beta")) {
    m.beta = to_double(*e, "beta");
    require(*m.beta >= 0.0 && *m.beta < 1.0, *e, "beta", "[0, 1)");
  }
  if (auto e = get("method", "alpha")) {
    m.alpha = to_double(*e, "alpha");
    require(*m.alpha > 0.0 && *m.alpha <= 1.0, *e, "alpha", "(0, 1]");
  }
  if (auto e = get("method", "q")) {
    m.q = to_double(*e, "q");
    require(*m.q > 0.0 && *m.q <= 1.0, *e, "q", "(0, 1]");
  }
  if (auto e = get("method", "K")) {
    m.K = to_int(*e, "K");
    require(m.K >= 1, *e, "K", ">= 1");
  }

  auto& p = cfg.problem;
  auto pos_int = [&](const char* key, auto& field, long long lo) {
    if (auto e = get("problem", key)) {
      const long long v = to_int(*e, key);
      require(v >= lo, *e, key, ">= " + std::to_string(lo));
      field = static_cast<std::decay_t<decltype(field)>>(v);
    }
  };
  auto real = [&](const char* section, const char* key, double& field, double lo, bool strict) {
    if (auto e = get(section, key)) {
      field = to_double(*e, key);
      require(strict ? field > lo : field >= lo, *e, key, std::string(strict ? "> " : ">= ") + format_double(lo));
    }
  };
  if (auto e = get("problem", "problem")) {
    p.kind = trim(e->value);
    require(p.kind == "logistic" || p.kind == "quadratic" || p.kind == "matrix_factorization" || p.kind == "mlp", *e,
            "problem", "logistic | quadratic | matrix_factorization | mlp");
  }
  if (auto e = get("problem", "norm")) {
    try {
      p.norm = parse_norm_kind(trim(e->value));
    } catch (const InvalidInput&) {
      config_fail(e->where, "unknown norm '" + trim(e->value) + "'");
    }
  }
  if (auto e = get("problem", "t")) {
    p.t = to_doubles(*e, "t");
    for (double v : p.t) require(v > 0.0, *e, "t", "> 0");
  }
  if (auto e = get("problem", "data_seed")) {
    const long long v = to_int(*e, "data_seed");
    require(v >= 0, *e, "data_seed", ">= 0");
    p.data_seed = static_cast<std::uint64_t>(v);
  }
  pos_int("n_points", p.n_points, 1);
  pos_int("features", p.features, 1);
  pos_int("classes", p.classes, 2);
  pos_int("batch", p.batch, 0);
  real("problem", "feature_scale", p.feature_scale, 0.0, true);
  real("problem", "teacher_scale", p.teacher_scale, 0.0, false);
  real("problem", "l2", p.l2, 0.0, false);
  pos_int("rows", p.rows, 1);
  pos_int("cols", p.cols, 1);
  pos_int("layers", p.layers, 1);
  real("problem", "noise", p.noise, 0.0, false);
  real("problem", "curvature_min", p.curvature_min, 0.0, true);
  real("problem", "curvature_max", p.curvature_max, 0.0, true);
  real("problem", "minimizer_norm", p.minimizer_norm, 0.0, false);
  pos_int("in_dim", p.in_dim, 1);
  pos_int("hidden", p.hidden, 1);
  pos_int("out_dim", p.out_dim, 1);
  real("problem", "target_noise", p.target_noise, 0.0, false);
  real("problem", "init_scale", p.init_scale, 0.0, false);
  if (p.curvature_max < p.curvature_min) {
    config_fail(get("problem", "curvature_max") ? get("problem", "curvature_max")->where : "config",
                "curvature_max must be >= curvature_min");
  }

  auto& h = cfg.harness;
  auto hint = [&](const char* key, auto& field, long long lo) {
    if (auto e = get("harness", key)) {
      const long long v = to_int(*e, key);
      require(v >= lo, *e, key, ">= " + std::to_string(lo));
      field = static_cast<std::decay_t<decltype(field)>>(v);
    }
  };
  hint("seeds", h.seeds, 1);
  hint("first_seed", h.first_seed, 0);
  hint("parallelism", h.parallelism, 0);
  hint("reference_iters", h.reference_iters, 0);
  hint("estimate_samples", h.estimate_samples, 1);
  hint("estimate_pairs", h.estimate_pairs, 1);
  hint("lmo_samples", h.lmo_samples, 1);
  if (auto e = get("harness", "budgets")) {
    h.budgets.clear();
    for (double v : to_doubles(*e, "budgets")) {
      require(v >= 1.0 && v == std::floor(v), *e, "budgets", "integers >= 1");
      h.budgets.push_back(static_cast<long long>(v));
    }
  }
  if (auto e = get("harness", "sweep_beta")) {
    h.sweep_beta = to_doubles(*e, "sweep_beta");
    for (double v : h.sweep_beta) require(v >= 0.0 && v < 1.0, *e, "sweep_beta", "[0, 1)");
  }
  if (auto e = get("harness", "sweep_eta")) {
    h.sweep_eta = to_doubles(*e, "sweep_eta");
    for (double v : h.sweep_eta) require(v > 0.0, *e, "sweep_eta", "> 0");
  }
  if (auto e = get("harness", "sweep_q")) {
    h.sweep_q = to_doubles(*e, "sweep_q");
    for (double v : h.sweep_q) require(v > 0.0 && v <= 1.0, *e, "sweep_q", "(0, 1]");
  }
  if (auto e = get("harness", "trace_files")) h.trace_files = to_bool(*e, "trace_files");
  return cfg;
}

}  // namespace detail

/// Parses config text plus `section.key=value` overrides. `require_problem`
/// makes a missing [problem] section an error.
inline ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                                     bool require_problem = true) {
  detail::Sections sections = detail::parse_sections(text);
  for (const auto& o : overrides) detail::apply_override(sections, o);
  return detail::resolve(sections, require_problem);
}

// ---------------------------------------------------------------------------
// Building problems and optimizer configs from settings

inline std::vector<double> expand_t(const ProblemSettings& p, std::size_t layers) {
  if (p.t.size() == 1) return std::vector<double>(layers, p.t[0]);
  if (p.t.size() != layers) {
    throw ConfigError("problem: 't' lists " + std::to_string(p.t.size()) + " values for " + std::to_string(layers) +
                      " layers");
  }
  return p.t;
}

inline Problem build_problem(const ProblemSettings& p) {
  if (p.kind == "quadratic") {
    QuadraticOptions o;
    const auto t = expand_t(p, static_cast<std::size_t>(p.layers));
    o.layers.clear();
    for (long long i = 0; i < p.layers; ++i) o.layers.push_back({p.rows, p.cols, p.norm, t[std::size_t(i)]});
    o.noise = p.noise;
    o.curvature_min = p.curvature_min;
    o.curvature_max = p.curvature_max;
    o.minimizer_norm = p.minimizer_norm;
    return Problem(make_noisy_quadratic(o, p.data_seed));
  }
  if (p.kind == "matrix_factorization") {
    FactorizationOptions o;
    const auto t = expand_t(p, 2);
    if (t[0] != t[1]) throw ConfigError("problem: per-layer t for matrix_factorization must currently be equal");
    o.n_points = p.n_points;
    o.in_dim = p.in_dim;
    o.hidden = p.hidden;
    o.out_dim = p.out_dim;
    o.batch = p.batch;
    o.target_noise = p.target_noise;
    o.init_scale = p.init_scale;
    o.norm = p.norm;
    o.radius_scale = t[0];
    return Problem(make_matrix_factorization(o, p.data_seed));
  }
  if (p.kind == "mlp") {
    MlpOptions o;
    const auto t = expand_t(p, 2);
    if (t[0] != t[1]) throw ConfigError("problem: per-layer t for mlp must currently be equal");
    o.n_points = p.n_points;
    o.features = p.features;
    o.hidden = p.hidden;
    o.classes = p.classes;
    o.batch = p.batch;
    o.init_scale = p.init_scale;
    o.norm = p.norm;
    o.radius_scale = t[0];
    return Problem(make_two_layer_mlp(o, p.data_seed));
  }
  LogisticOptions o;
  o.n_points = p.n_points;
  o.features = p.features;
  o.classes = p.classes;
  o.batch = p.batch;
  o.feature_scale = p.feature_scale;
  o.teacher_scale = p.teacher_scale;
  o.l2 = p.l2;
  o.norm = p.norm;
  o.radius_scale = expand_t(p, 1)[0];
  return Problem(make_logistic_regression(o, p.data_seed));
}

/// Constants fed to theorem_schedule: the L1 = 0 branch, with D taken from
/// the known minimizer when there is one.
inline ProblemConstants schedule_constants(const Problem& problem) {
  double d = 0.0;
  if (auto xs = problem.known_minimizer()) {
    for (std::size_t i = 0; i < xs->size(); ++i) d = std::max(d, norm(problem.shape()[i].norm, (*xs)[i]));
  }
  return smooth_constants(problem.shape(), d);
}

/// OptimizerConfig for budget K. With eta = auto the theorem schedule supplies
/// every parameter that the config does not set explicitly.
inline OptimizerConfig optimizer_config(const MethodSettings& m, long long K, const Problem& problem) {
  OptimizerConfig c;
  if (!m.eta) {
    std::vector<double> t;
    for (const auto& l : problem.shape().layers) t.push_back(l.radius_scale);
    c = theorem_schedule(m.method, K, schedule_constants(problem), t);
  } else {
    c.method = m.method;
    c.K = K;
    c.eta = *m.eta;
    c.beta = kDefaultBeta;
    c.q = kDefaultQ;
    c.alpha = m.method == Method::MuonMVR ? c.beta : 1.0 - c.beta;
    c.schedule = "manual";
  }
  if (m.beta) c.beta = *m.beta;
  if (m.q) c.q = *m.q;
  if (m.alpha) c.alpha = *m.alpha;
  else if (m.method != Method::MuonMVR) c.alpha = 1.0 - c.beta;
  else if (m.eta && !m.beta) c.alpha = c.beta;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Output

inline std::string resolved_config_text(const ExperimentConfig& cfg, const OptimizerConfig& oc) {
  std::ostringstream o;
  const auto& p = cfg.problem;
  const auto& h = cfg.harness;
  auto list = [](const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      if constexpr (std::is_floating_point_v<std::decay_t<decltype(v[i])>>) s += format_double(v[i]);
      else s += std::to_string(v[i]);
    }
    return s;
  };
  o << "# resolved configuration (schedule: " << oc.schedule << ")\n";
  o << "[method]\n";
  o << "method = " << to_string(oc.method) << "\n";
  o << "eta = " << format_double(oc.eta) << "\n";
  o << "beta = " << format_double(oc.beta) << "\n";
  o << "alpha = " << format_double(oc.alpha) << "\n";
  o << "q = " << format_double(oc.q) << "\n";
  o << "K = " << oc.K << "\n\n";
  o << "[problem]\n";
  o << "problem = " << p.kind << "\n";
  o << "norm = " << to_string(p.norm) << "\n";
  o << "t = " << list(p.t) << "\n";
  o << "data_seed = " << p.data_seed << "\n";
  o << "n_points = " << p.n_points << "\nfeatures = " << p.features << "\nclasses = " << p.classes
    << "\nbatch = " << p.batch << "\n";
  o << "feature_scale = " << format_double(p.feature_scale) << "\nteacher_scale = " << format_double(p.teacher_scale)
    << "\nl2 = " << format_double(p.l2) << "\n";
  o << "rows = " << p.rows << "\ncols = " << p.cols << "\nlayers = " << p.layers << "\n";
  o << "noise = " << format_double(p.noise) << "\ncurvature_min = " << format_double(p.curvature_min)
    << "\ncurvature_max = " << format_double(p.curvature_max)
    << "\nminimizer_norm = " << format_double(p.minimizer_norm) << "\n";
  o << "in_dim = " << p.in_dim << "\nhidden = " << p.hidden << "\nout_dim = " << p.out_dim << "\n";
  o << "target_noise = " << format_double(p.target_noise) << "\ninit_scale = " << format_double(p.init_scale)
    << "\n\n";
  o << "[harness]\n";
  o << "seeds = " << h.seeds << "\nfirst_seed = " << h.first_seed << "\nparallelism = " << h.parallelism << "\n";
  o << "budgets = " << list(h.budgets) << "\n";
  if (!h.sweep_beta.empty()) o << "sweep_beta = " << list(h.sweep_beta) << "\n";
  if (!h.sweep_eta.empty()) o << "sweep_eta = " << list(h.sweep_eta) << "\n";
  if (!h.sweep_q.empty()) o << "sweep_q = " << list(h.sweep_q) << "\n";
  o << "reference_iters = " << h.reference_iters << "\nestimate_samples = " << h.estimate_samples
    << "\nestimate_pairs = " << h.estimate_pairs << "\nlmo_samples = " << h.lmo_samples << "\n";
  o << "trace_files = " << (h.trace_files ? "true" : "false") << "\n";
  return o.str();
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

/// Creates `dir` if needed and proves it writable before any work starts.
inline void prepare_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError("output directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = detail::open_out(path);
  out << text;
  detail::finish(out, path);
}

/// k,f_value,metric,min_metric,dual_norm_1..p
inline void write_trace_csv(const std::filesystem::path& path, const RunRecord& rec) {
  if (rec.rows.empty()) throw InvalidInput("write_trace_csv: record has no rows");
  auto out = detail::open_out(path);
  out << "k,f_value,metric,min_metric";
  for (std::size_t i = 0; i < rec.rows.front().dual_norms.size(); ++i) out << ",dual_norm_" << (i + 1);
  out << "\n";
  for (const auto& r : rec.rows) {
    out << r.k << ',' << format_double(r.f_value) << ',' << format_double(r.metric) << ','
        << format_double(r.min_metric);
    for (double d : r.dual_norms) out << ',' << format_double(d);
    out << "\n";
  }
  detail::finish(out, path);
}

inline constexpr const char* kSummaryHeader = "method,eta,beta,q,K,seed_count,mean_min_metric,std,slope,stderr";

inline std::string summary_row(const CellSummary& c) {
  std::ostringstream o;
  o << to_string(c.config.method) << ',' << format_double(c.config.eta) << ',' << format_double(c.config.beta) << ','
    << format_double(c.config.q) << ',' << c.config.K << ',' << c.seed_count << ','
    << format_double(c.mean_min_metric) << ',' << format_double(c.std_min_metric) << ",,";
  return o.str();
}

inline std::string fit_row(Method method, const RateFit& fit, std::size_t seeds) {
  std::ostringstream o;
  o << to_string(method) << ",,,,fit," << seeds << ",,," << format_double(fit.slope) << ','
    << format_double(fit.stderr_slope);
  return o.str();
}

inline void write_lemmas_csv(const std::filesystem::path& path, const std::vector<LemmaReport>& reports) {
  auto out = detail::open_out(path);
  out << "lemma_id,K,t,alpha,q,k,lhs,rhs,holds,margin\n";
  for (const auto& r : reports) {
    auto param = [&](const char* name) {
      for (const auto& [k, v] : r.parameters) {
        if (k == name) return format_double(v);
      }
      return std::string();
    };
    out << r.lemma_id << ',' << param("K") << ',' << param("t") << ',' << param("alpha") << ',' << param("q") << ','
        << param("k") << ',' << format_double(r.lhs) << ',' << format_double(r.rhs) << ','
        << (r.holds ? "true" : "false") << ',' << format_double(r.margin) << "\n";
  }
  detail::finish(out, path);
}

inline void write_constants_csv(const std::filesystem::path& path, const ProblemConstants& c) {
  auto out = detail::open_out(path);
  out << "quantity,layer,value\n";
  out << "sigma_hat,," << format_double(c.sigma_hat) << "\n";
  auto per_layer = [&](const char* name, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) out << name << ',' << (i + 1) << ',' << format_double(v[i]) << "\n";
  };
  per_layer("sigma", c.sigma_per_layer);
  per_layer("delta_hat", c.delta_hat);
  per_layer("rho", c.rho);
  per_layer("L0_hat", c.L0_hat);
  per_layer("L1_hat", c.L1_hat);
  out << "D,," << format_double(c.D) << "\n";
  out << "L_hat,," << format_double(c.L_hat) << "\n";
  out << "degenerate,," << (c.degenerate ? 1 : 0) << "\n";
  detail::finish(out, path);
}

// ---------------------------------------------------------------------------
// LMO property suite

using LmoFunction = std::function<Matrix(NormKind, const Matrix&)>;

struct LmoCheckResult {
  std::size_t checked = 0;
  std::size_t violations = 0;
  double worst_sharpness = 0.0;  // relative |<M,D> - ||M||_*| / (1 + ||M||_*)
  double worst_norm_excess = 0.0;  // ||D|| - 1
  double worst_rho_excess = 0.0;   // ||X||_* - rho ||X||_F
  double worst_holder_excess = 0.0;
  std::string first_violation;
};

inline constexpr double kSharpnessTolerance = 1e-8;
inline constexpr double kUnitBallTolerance = 1e-9;
inline constexpr NormKind kAllNorms[] = {NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry};

/// Sharpness and unit-ball feasibility of `lmo` plus rho validity and Hoelder
/// pairing of the norms, on `samples` random matrices per norm kind with
/// shapes up to max_dim x max_dim.
inline LmoCheckResult check_lmo_properties(std::size_t samples, std::uint64_t seed, const LmoFunction& lmo = lmo_direction,
                                           Index max_dim = 64) {
  LmoCheckResult res;
  RngState rng(seed);
  std::uniform_int_distribution<Index> dim(1, max_dim);
  auto flag = [&](bool bad, const std::string& what) {
    if (!bad) return;
    ++res.violations;
    if (res.first_violation.empty()) res.first_violation = what;
  };
  for (NormKind kind : kAllNorms) {
    for (std::size_t s = 0; s < samples; ++s) {
      const Index r = dim(rng);
      const Index c = dim(rng);
      const Matrix m = detail::gaussian_matrix(r, c, rng);
      const Matrix d = lmo(kind, m);
      const double dn = dual_norm(kind, m);
      const double sharp = std::abs(inner(m, d) - dn) / (1.0 + dn);
      const double excess = norm(kind, d) - 1.0;
      const double rho_excess = dn - rho_bound(kind, r, c) * m.norm();
      const Matrix y = detail::gaussian_matrix(r, c, rng);
      const double holder = std::abs(inner(m, y)) - dn * norm(kind, y);
      res.worst_sharpness = std::max(res.worst_sharpness, sharp);
      res.worst_norm_excess = std::max(res.worst_norm_excess, excess);
      res.worst_rho_excess = std::max(res.worst_rho_excess, rho_excess);
      res.worst_holder_excess = std::max(res.worst_holder_excess, holder);
      const std::string where = std::string(to_string(kind)) + " " + std::to_string(r) + "x" + std::to_string(c);
      flag(sharp > kSharpnessTolerance, where + ": <M, D> differs from the dual norm");
      flag(excess > kUnitBallTolerance, where + ": direction leaves the unit ball");
      flag(rho_excess > 1e-9 * (1.0 + dn), where + ": dual norm exceeds rho * Frobenius");
      flag(holder > 1e-9 * (1.0 + dn * norm(kind, y)), where + ": Hoelder pairing violated");
      ++res.checked;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Dispatch

struct CliRequest {
  std::string subcommand;
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path out_dir = "lmo_mvr_out";
  std::optional<std::size_t> seeds;
  std::vector<std::string> overrides;
  LmoFunction lmo = lmo_direction;  // replaceable for mutation tests
};

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"run", "sweep", "rate", "verify-lemmas", "check-lmo",
                                              "estimate-constants"};
  return names;
}

namespace detail {

inline ExperimentConfig load_config(const CliRequest& req, bool require_problem) {
  std::string text;
  if (req.config_path) {
    std::ifstream in(*req.config_path);
    if (!in) throw IoError("cannot read config " + req.config_path->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  ExperimentConfig cfg = parse_config(text, req.overrides, require_problem);
  if (req.seeds) {
    if (*req.seeds < 1) throw ConfigError("--seeds must be >= 1");
    cfg.harness.seeds = *req.seeds;
  }
  return cfg;
}

inline unsigned workers(const HarnessSettings& h) { return h.parallelism ? h.parallelism : default_parallelism(); }

inline std::vector<std::uint64_t> seeds_of(const HarnessSettings& h) { return seed_range(h.seeds, h.first_seed); }

inline void write_traces(const std::filesystem::path& dir, const std::vector<RunRecord>& recs, std::size_t first,
                         std::size_t count) {
  for (std::size_t i = first; i < first + count; ++i) {
    const auto& r = recs[i];
    if (r.rows.empty()) continue;
    write_trace_csv(dir / ("trace_" + std::to_string(r.seed) + ".csv"), r);
  }
}

inline int cmd_run(const CliRequest& req, std::ostream& out) {
  const ExperimentConfig cfg = load_config(req, true);
  const Problem problem = build_problem(cfg.problem);
  const OptimizerConfig oc = optimizer_config(cfg.method, cfg.method.K, problem);
  prepare_output_dir(req.out_dir);
  RunOptions opt;
  opt.f_min = reference_minimum(problem, cfg.harness.reference_iters);
  const SweepResult sw = sweep({oc}, problem, seeds_of(cfg.harness), workers(cfg.harness), opt);
  write_text(req.out_dir / "config.resolved.ini", resolved_config_text(cfg, oc));
  if (cfg.harness.trace_files) write_traces(req.out_dir, sw.records, 0, sw.records.size());
  write_text(req.out_dir / "summary.csv", std::string(kSummaryHeader) + "\n" + summary_row(sw.cells[0]) + "\n");
  std::size_t aborted = 0;
  for (const auto& r : sw.records) aborted += r.aborted;
  out << "run: " << to_string(oc.method) << " K=" << oc.K << " eta=" << format_double(oc.eta) << " ("
      << oc.schedule << "), " << sw.records.size() << " seeds, mean min-metric "
      << format_double(sw.cells[0].mean_min_metric) << ", aborted " << aborted << "\n";
  return kExitOk;
}

inline std::vector<OptimizerConfig> sweep_grid(const ExperimentConfig& cfg, const Problem& problem) {
  const auto& h = cfg.harness;
  std::vector<double> betas = h.sweep_beta;
  if (betas.empty() && h.sweep_eta.empty() && h.sweep_q.empty()) {
    for (int i = 1; i <= 9; ++i) betas.push_back(0.1 * i);
  }
  std::vector<std::optional<double>> beta_axis(betas.begin(), betas.end());
  std::vector<std::optional<double>> eta_axis(h.sweep_eta.begin(), h.sweep_eta.end());
  std::vector<std::optional<double>> q_axis(h.sweep_q.begin(), h.sweep_q.end());
  if (beta_axis.empty()) beta_axis.push_back(std::nullopt);
  if (eta_axis.empty()) eta_axis.push_back(std::nullopt);
  if (q_axis.empty()) q_axis.push_back(std::nullopt);
  std::vector<OptimizerConfig> grid;
  for (const auto& e : eta_axis) {
    for (const auto& b : beta_axis) {
      for (const auto& q : q_axis) {
        MethodSettings m = cfg.method;
        if (e) m.eta = *e;
        if (b) {
          m.beta = *b;
          if (m.method == Method::MuonMVR && !m.alpha) m.alpha = std::max(*b, 1.0 - *b);
        }
        if (q) m.q = *q;
        grid.push_back(optimizer_config(m, m.K, problem));
      }
    }
  }
  return grid;
}

inline int cmd_sweep(const CliRequest& req, std::ostream& out) {
  const ExperimentConfig cfg = load_config(req, true);
  const Problem problem = build_problem(cfg.problem);
  const auto grid = sweep_grid(cfg, problem);
  prepare_output_dir(req.out_dir);
  RunOptions opt;
  opt.f_min = reference_minimum(problem, cfg.harness.reference_iters);
  const auto seeds = seeds_of(cfg.harness);
  const SweepResult sw = sweep(grid, problem, seeds, workers(cfg.harness), opt);
  std::string summary = std::string(kSummaryHeader) + "\n";
  for (std::size_t c = 0; c < grid.size(); ++c) {
    const auto dir = req.out_dir / ("cell_" + std::to_string(c));
    prepare_output_dir(dir);
    write_text(dir / "config.resolved.ini", resolved_config_text(cfg, grid[c]));
    if (cfg.harness.trace_files) write_traces(dir, sw.records, c * seeds.size(), seeds.size());
    summary += summary_row(sw.cells[c]) + "\n";
  }
  write_text(req.out_dir / "summary.csv", summary);
  out << "sweep: " << grid.size() << " cells x " << seeds.size() << " seeds\n";
  return kExitOk;
}

inline int cmd_rate(const CliRequest& req, std::ostream& out) {
  const ExperimentConfig cfg = load_config(req, true);
  const Problem problem = build_problem(cfg.problem);
  std::vector<long long> budgets = cfg.harness.budgets;
  std::sort(budgets.begin(), budgets.end());
  budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
  if (budgets.size() < kMinRateBudgets) throw ConfigError("harness: rate needs at least 3 distinct budgets");
  if (cfg.harness.seeds < kMinRateSeeds) throw ConfigError("harness: rate needs at least 5 seeds");
  std::vector<OptimizerConfig> configs;
  for (long long K : budgets) configs.push_back(optimizer_config(cfg.method, K, problem));
  prepare_output_dir(req.out_dir);
  RunOptions opt;
  opt.f_min = reference_minimum(problem, cfg.harness.reference_iters);
  const auto seeds = seeds_of(cfg.harness);
  const RateStudy st = rate_study([&](long long K) { return optimizer_config(cfg.method, K, problem); }, budgets,
                                  problem, seeds, workers(cfg.harness), opt);
  std::string summary = std::string(kSummaryHeader) + "\n";
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    const auto dir = req.out_dir / ("K_" + std::to_string(budgets[b]));
    prepare_output_dir(dir);
    write_text(dir / "config.resolved.ini", resolved_config_text(cfg, configs[b]));
    if (cfg.harness.trace_files) write_traces(dir, st.records, b * seeds.size(), seeds.size());
    summary += summary_row(st.budgets[b]) + "\n";
  }
  summary += fit_row(cfg.method.method, st.fit, seeds.size()) + "\n";
  write_text(req.out_dir / "summary.csv", summary);
  out << "rate: " << to_string(cfg.method.method) << " slope " << format_double(st.fit.slope) << " +/- "
      << format_double(st.fit.stderr_slope) << "\n";
  return kExitOk;
}

inline int cmd_verify_lemmas(const CliRequest& req, std::ostream& out) {
  if (req.config_path || !req.overrides.empty()) load_config(req, false);  // validates, nothing to use
  prepare_output_dir(req.out_dir);
  const auto reports = verify_all_lemmas();
  write_lemmas_csv(req.out_dir / "lemmas.csv", reports);
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // id -> (checked, failed)
  for (const auto& r : reports) {
    auto& t = tally[r.lemma_id];
    ++t.first;
    t.second += r.holds ? 0 : 1;
  }
  std::size_t failed = 0;
  for (const auto& [id, t] : tally) {
    out << "verify-lemmas: " << id << " " << (t.first - t.second) << "/" << t.first << " hold\n";
    failed += t.second;
  }
  return failed ? kExitVerificationFailed : kExitOk;
}

inline int cmd_check_lmo(const CliRequest& req, std::ostream& out) {
  std::size_t samples = 1000;
  if (req.config_path || !req.overrides.empty()) samples = load_config(req, false).harness.lmo_samples;
  prepare_output_dir(req.out_dir);
  const LmoCheckResult r = check_lmo_properties(samples, 20240101, req.lmo);
  std::ostringstream csv;
  csv << "checked,violations,worst_sharpness,worst_norm_excess,worst_rho_excess,worst_holder_excess\n"
      << r.checked << ',' << r.violations << ',' << format_double(r.worst_sharpness) << ','
      << format_double(r.worst_norm_excess) << ',' << format_double(r.worst_rho_excess) << ','
      << format_double(r.worst_holder_excess) << "\n";
  write_text(req.out_dir / "lmo_check.csv", csv.str());
  out << "check-lmo: " << r.checked << " matrices, " << r.violations << " violations";
  if (!r.first_violation.empty()) out << " (first: " << r.first_violation << ")";
  out << "\n";
  return r.violations ? kExitVerificationFailed : kExitOk;
}

inline int cmd_estimate_constants(const CliRequest& req, std::ostream& out) {
  const ExperimentConfig cfg = load_config(req, true);
  const Problem problem = build_problem(cfg.problem);
  prepare_output_dir(req.out_dir);
  RngState rng(cfg.harness.first_seed);
  const ProblemConstants c =
      estimate_constants(problem, cfg.harness.estimate_samples, cfg.harness.estimate_pairs, rng);
  write_constants_csv(req.out_dir / "constants.csv", c);
  out << "estimate-constants: sigma_hat " << format_double(c.sigma_hat) << ", L_hat " << format_double(c.L_hat)
      << (c.degenerate ? " (degenerate: zero gradients)" : "") << "\n";
  return kExitOk;
}

}  // namespace detail

/// Exit codes: 0 success, 1 verification failure, 2 usage/config/I-O error.
inline int dispatch(const CliRequest& req, std::ostream& out, std::ostream& err) {
  try {
    if (req.subcommand == "run") return detail::cmd_run(req, out);
    if (req.subcommand == "sweep") return detail::cmd_sweep(req, out);
    if (req.subcommand == "rate") return detail::cmd_rate(req, out);
    if (req.subcommand == "verify-lemmas") return detail::cmd_verify_lemmas(req, out);
    if (req.subcommand == "check-lmo") return detail::cmd_check_lmo(req, out);
    if (req.subcommand == "estimate-constants") return detail::cmd_estimate_constants(req, out);
    err << "error: unknown subcommand '" << req.subcommand << "'\n";
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
  } catch (const InvalidInput& e) {
    err << "invalid input: " << e.what() << "\n";
  }
  return kExitUsage;
}

}  // namespace lmo_mvr

#endif  // LMO_MVR_CLI_HPP
