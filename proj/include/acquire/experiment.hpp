#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "acquire/acquire.hpp"
#include "acquire/image_io.hpp"
#include "acquire/metrics.hpp"
#include "acquire/psf.hpp"
#include "acquire/sgp_baseline.hpp"
#include "acquire/testbed.hpp"

namespace acquire {

/// Invalid run configuration; `field` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct BlurSpec {
  std::string kind = "gaussian";  // gaussian | motion | defocus | none
  double sigma = 2.0;
  int size = 0;                    // gaussian support; 0 picks the largest odd size fitting the image
  int length = 11;
  double angle = 45.0;
  double radius = 4.0;
};

struct ProblemSpec {
  std::string name = "phantom";
  std::string image;               // PGM path for non-phantom problems
  std::string bundle;              // load a saved problem instead of generating one
  std::size_t size = 256;          // phantom side length
  std::string phantom_variant = "modified";
  BlurSpec blur{};
  double snr = 35.0;
  std::uint64_t seed = 1;
  bool noiseless = false;
};

struct SolverSpec {
  std::vector<std::string> methods{"acquire"};
  std::optional<double> lambda;    // falls back to the preset table
  double mu = 1e-2;
  double gamma = 1e-5;
  double theta = 0.1;
  double eta = 1e-5;
  double delta = 0.5;
  int memory = 5;
  bool monotone = false;
  int inner_max_iters = 10;
  std::vector<double> tols{1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7};
  std::string constraint = "s1";   // s1 | s2
  std::string start = "auto";      // auto | observed | flat
  bool reuse_trajectory = false;   // derive every tolerance from one run at the smallest
  SgpConfig sgp{};
};

struct BudgetSpec {
  double max_time = 25.0;
  int max_iters = 100000;
};

struct RunConfig {
  ProblemSpec problem{};
  SolverSpec solver{};
  BudgetSpec budget{};
  std::string output = "out";
  int threads = 0;                 // 0 uses the hardware concurrency
  bool deterministic = false;      // zero time columns, ignore the time budget

  void validate() const {
    const auto& s = solver;
    if (s.methods.empty()) throw ConfigError("solver.methods", "at least one method is required");
    for (const auto& m : s.methods)
      if (m != "acquire" && m != "sgp") throw ConfigError("solver.methods", "unknown method '" + m + "'");
    if (s.tols.empty()) throw ConfigError("solver.tol", "tolerance list is empty");
    for (std::size_t i = 0; i < s.tols.size(); ++i) {
      if (!(s.tols[i] >= 0.0)) throw ConfigError("solver.tol", "tolerances must be nonnegative");
      if (i > 0 && !(s.tols[i] < s.tols[i - 1])) throw ConfigError("solver.tol", "tolerances must strictly decrease");
    }
    if (s.lambda && !(*s.lambda > 0.0)) throw ConfigError("solver.lambda", "must be positive");
    if (!(s.mu > 0.0)) throw ConfigError("solver.mu", "must be positive");
    if (!(s.gamma >= 0.0)) throw ConfigError("solver.gamma", "must be nonnegative");
    if (!(s.theta > 0.0 && s.theta < 1.0)) throw ConfigError("solver.theta", "must lie in (0,1)");
    if (!(s.eta > 0.0 && s.eta < 1.0)) throw ConfigError("solver.eta", "must lie in (0,1)");
    if (!(s.delta > 0.0 && s.delta < 1.0)) throw ConfigError("solver.delta", "must lie in (0,1)");
    if (s.memory < 1) throw ConfigError("solver.memory", "must be >= 1");
    if (s.inner_max_iters < 0) throw ConfigError("solver.inner_max_iters", "must be >= 0");
    if (s.constraint != "s1" && s.constraint != "s2") throw ConfigError("solver.constraint", "expected s1 or s2");
    if (s.start != "auto" && s.start != "observed" && s.start != "flat")
      throw ConfigError("solver.start", "expected auto, observed or flat");
    const auto& b = problem.blur;
    if (b.kind != "gaussian" && b.kind != "motion" && b.kind != "defocus" && b.kind != "none")
      throw ConfigError("problem.blur.kind", "expected gaussian, motion, defocus or none");
    if (problem.phantom_variant != "original" && problem.phantom_variant != "modified")
      throw ConfigError("problem.phantom_variant", "expected original or modified");
    if (budget.max_iters < 1) throw ConfigError("budget.max_iters", "must be >= 1");
    if (threads < 0) throw ConfigError("threads", "must be >= 0");
  }
};

// ------------------------------------------------------------------- presets

/// Regularization weights for the smoothed problem by test problem, blur
/// and SNR (35 or 40).
inline std::optional<double> preset_lambda(const std::string& name, const std::string& blur, double snr) {
  struct Entry {
    const char* name;
    const char* blur;
    double snr35;
    double snr40;
  };
  static constexpr Entry kTable[] = {
      {"cameraman", "gaussian", 1.55e-2, 5e-3}, {"micro", "gaussian", 4.5e-3, 1e-3},
      {"phantom", "gaussian", 6e-3, 4e-3},      {"satellite", "gaussian", 9e-4, 9e-5},
      {"cameraman", "motion", 0.75e-2, 1.75e-3}, {"satellite", "motion", 1.5e-3, 2.25e-4},
      {"cameraman", "defocus", 1e-2, 1.2e-3},   {"satellite", "defocus", 0.5e-3, 1.9e-4},
  };
  for (const auto& e : kTable) {
    if (name != e.name || blur != e.blur) continue;
    if (snr == 35.0) return e.snr35;
    if (snr == 40.0) return e.snr40;
  }
  return std::nullopt;
}

/// Gaussian width for the Gaussian-blur test set.
inline double preset_sigma(const std::string& name) { return name == "cameraman" ? 1.4 : 2.0; }

// ---------------------------------------------------------------------- JSON

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(prefix + key, e.what());
  }
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix.substr(0, prefix.size() - 1),
                                        "expected an object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
    if (!known) throw ConfigError(prefix + item.key(), "unknown key");
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read_field;
  RunConfig c;
  check_keys(j, {"problem", "solver", "budget", "output", "threads", "deterministic"}, "");
  read_field(j, "output", c.output, "");
  read_field(j, "threads", c.threads, "");
  read_field(j, "deterministic", c.deterministic, "");

  if (j.contains("problem")) {
    const auto& p = j.at("problem");
    check_keys(p, {"name", "image", "bundle", "size", "phantom_variant", "blur", "snr", "seed", "noiseless"},
               "problem.");
    read_field(p, "name", c.problem.name, "problem.");
    read_field(p, "image", c.problem.image, "problem.");
    read_field(p, "bundle", c.problem.bundle, "problem.");
    read_field(p, "size", c.problem.size, "problem.");
    read_field(p, "phantom_variant", c.problem.phantom_variant, "problem.");
    read_field(p, "snr", c.problem.snr, "problem.");
    read_field(p, "seed", c.problem.seed, "problem.");
    read_field(p, "noiseless", c.problem.noiseless, "problem.");
    c.problem.blur.sigma = preset_sigma(c.problem.name);
    if (p.contains("blur")) {
      const auto& b = p.at("blur");
      check_keys(b, {"kind", "sigma", "size", "length", "angle", "radius"}, "problem.blur.");
      read_field(b, "kind", c.problem.blur.kind, "problem.blur.");
      read_field(b, "sigma", c.problem.blur.sigma, "problem.blur.");
      read_field(b, "size", c.problem.blur.size, "problem.blur.");
      read_field(b, "length", c.problem.blur.length, "problem.blur.");
      read_field(b, "angle", c.problem.blur.angle, "problem.blur.");
      read_field(b, "radius", c.problem.blur.radius, "problem.blur.");
    }
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    check_keys(s,
               {"methods", "lambda", "mu", "gamma", "theta", "eta", "delta", "memory", "monotone", "inner_max_iters",
                "tol", "constraint", "start", "reuse_trajectory", "sgp"},
               "solver.");
    read_field(s, "methods", c.solver.methods, "solver.");
    if (s.contains("lambda") && !s.at("lambda").is_null()) {
      double v = 0.0;
      read_field(s, "lambda", v, "solver.");
      c.solver.lambda = v;
    }
    read_field(s, "mu", c.solver.mu, "solver.");
    read_field(s, "gamma", c.solver.gamma, "solver.");
    read_field(s, "theta", c.solver.theta, "solver.");
    read_field(s, "eta", c.solver.eta, "solver.");
    read_field(s, "delta", c.solver.delta, "solver.");
    read_field(s, "memory", c.solver.memory, "solver.");
    read_field(s, "monotone", c.solver.monotone, "solver.");
    read_field(s, "inner_max_iters", c.solver.inner_max_iters, "solver.");
    read_field(s, "tol", c.solver.tols, "solver.");
    read_field(s, "constraint", c.solver.constraint, "solver.");
    read_field(s, "start", c.solver.start, "solver.");
    read_field(s, "reuse_trajectory", c.solver.reuse_trajectory, "solver.");
    if (s.contains("sgp")) {
      const auto& g = s.at("sgp");
      auto& cfg = c.solver.sgp;
      check_keys(g,
                 {"armijo", "backtrack", "max_backtracks", "scaling_lower", "scaling_upper", "identity_scaling",
                  "step_min", "step_max", "memory", "tau_init", "tau_shrink", "tau_grow"},
                 "solver.sgp.");
      read_field(g, "armijo", cfg.armijo, "solver.sgp.");
      read_field(g, "backtrack", cfg.backtrack, "solver.sgp.");
      read_field(g, "max_backtracks", cfg.max_backtracks, "solver.sgp.");
      read_field(g, "scaling_lower", cfg.scaling_lower, "solver.sgp.");
      read_field(g, "scaling_upper", cfg.scaling_upper, "solver.sgp.");
      read_field(g, "identity_scaling", cfg.identity_scaling, "solver.sgp.");
      read_field(g, "step_min", cfg.step_min, "solver.sgp.");
      read_field(g, "step_max", cfg.step_max, "solver.sgp.");
      read_field(g, "memory", cfg.memory, "solver.sgp.");
      read_field(g, "tau_init", cfg.tau_init, "solver.sgp.");
      read_field(g, "tau_shrink", cfg.tau_shrink, "solver.sgp.");
      read_field(g, "tau_grow", cfg.tau_grow, "solver.sgp.");
    }
  }
  if (j.contains("budget")) {
    const auto& b = j.at("budget");
    check_keys(b, {"max_time", "max_iters"}, "budget.");
    read_field(b, "max_time", c.budget.max_time, "budget.");
    read_field(b, "max_iters", c.budget.max_iters, "budget.");
  }
  return c;
}

/// Regularization weight for a run: explicit value or the preset table.
inline double resolve_lambda(const RunConfig& c) {
  if (c.solver.lambda) return *c.solver.lambda;
  if (auto v = preset_lambda(c.problem.name, c.problem.blur.kind, c.problem.snr)) return *v;
  throw ConfigError("solver.lambda", "no preset for problem '" + c.problem.name + "' with " + c.problem.blur.kind +
                                         " blur at this SNR; set it explicitly");
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  const auto& p = c.problem;
  j["problem"] = {{"name", p.name},
                  {"image", p.image},
                  {"bundle", p.bundle},
                  {"size", p.size},
                  {"phantom_variant", p.phantom_variant},
                  {"snr", p.snr},
                  {"seed", p.seed},
                  {"noiseless", p.noiseless},
                  {"blur",
                   {{"kind", p.blur.kind},
                    {"sigma", p.blur.sigma},
                    {"size", p.blur.size},
                    {"length", p.blur.length},
                    {"angle", p.blur.angle},
                    {"radius", p.blur.radius}}}};
  const auto& s = c.solver;
  const auto& g = s.sgp;
  j["solver"] = {{"methods", s.methods},
                 {"lambda", s.lambda ? nlohmann::json(*s.lambda) : nlohmann::json(nullptr)},
                 {"mu", s.mu},
                 {"gamma", s.gamma},
                 {"theta", s.theta},
                 {"eta", s.eta},
                 {"delta", s.delta},
                 {"memory", s.memory},
                 {"monotone", s.monotone},
                 {"inner_max_iters", s.inner_max_iters},
                 {"tol", s.tols},
                 {"constraint", s.constraint},
                 {"start", s.start},
                 {"reuse_trajectory", s.reuse_trajectory},
                 {"sgp",
                  {{"armijo", g.armijo},
                   {"backtrack", g.backtrack},
                   {"max_backtracks", g.max_backtracks},
                   {"scaling_lower", g.scaling_lower},
                   {"scaling_upper", g.scaling_upper},
                   {"identity_scaling", g.identity_scaling},
                   {"step_min", g.step_min},
                   {"step_max", g.step_max},
                   {"memory", g.memory},
                   {"tau_init", g.tau_init},
                   {"tau_shrink", g.tau_shrink},
                   {"tau_grow", g.tau_grow}}}};
  j["budget"] = {{"max_time", c.budget.max_time}, {"max_iters", c.budget.max_iters}};
  j["output"] = c.output;
  j["threads"] = c.threads;
  j["deterministic"] = c.deterministic;
  return j;
}

// ------------------------------------------------------------------ problems

inline Psf make_psf(const BlurSpec& b, const GridShape& shape) {
  if (b.kind == "gaussian") {
    int size = b.size;
    if (size == 0) {
      const auto side = std::min(shape.rows, shape.cols);
      size = static_cast<int>(side % 2 == 1 ? side : side - 1);
    }
    return gaussian_psf(size, b.sigma);
  }
  if (b.kind == "motion") return motion_psf(b.length, b.angle);
  if (b.kind == "defocus") return disk_psf(b.radius);
  if (b.kind == "none") return delta_psf();
  throw ConfigError("problem.blur.kind", "unknown blur '" + b.kind + "'");
}

inline Image load_reference(const ProblemSpec& p) {
  if (p.name == "phantom" && p.image.empty())
    return shepp_logan(p.size, p.phantom_variant == "original" ? PhantomVariant::Original : PhantomVariant::Modified);
  if (p.image.empty()) throw ConfigError("problem.image", "problem '" + p.name + "' needs a PGM image path");
  if (!std::filesystem::exists(p.image)) throw ConfigError("problem.image", "cannot find '" + p.image + "'");
  return read_pgm(p.image);
}

inline TestProblem build_problem(const RunConfig& c) {
  if (!c.problem.bundle.empty()) {
    if (!std::filesystem::exists(std::filesystem::path(c.problem.bundle) / "meta.json"))
      throw ConfigError("problem.bundle", "no problem bundle at '" + c.problem.bundle + "'");
    return load_problem(c.problem.bundle);
  }
  const Image reference = load_reference(c.problem);
  ProblemOptions opts;
  opts.noiseless = c.problem.noiseless;
  return make_problem(reference, make_psf(c.problem.blur, reference.shape()), c.problem.snr, c.problem.seed, opts);
}

inline StartRule resolve_start(const RunConfig& c) {
  if (c.solver.start == "observed") return StartRule::Observed;
  if (c.solver.start == "flat") return StartRule::Flat;
  return c.problem.blur.kind == "gaussian" || c.problem.blur.kind == "none" ? StartRule::Observed : StartRule::Flat;
}

inline AcquireConfig acquire_config(const RunConfig& c, double tol) {
  AcquireConfig a;
  a.lambda = resolve_lambda(c);
  a.mu = c.solver.mu;
  a.gamma = c.solver.gamma;
  a.eta = c.solver.eta;
  a.delta = c.solver.delta;
  a.memory = c.solver.memory;
  a.monotone = c.solver.monotone;
  a.theta = c.solver.theta;
  a.inner_max_iters = c.solver.inner_max_iters;
  a.tol = tol;
  a.max_iters = c.budget.max_iters;
  a.max_time = c.deterministic ? 0.0 : c.budget.max_time;
  a.inner = c.solver.sgp;
  return a;
}

inline SgpBaselineConfig sgp_config(const RunConfig& c, double tol) {
  SgpBaselineConfig s;
  s.lambda = resolve_lambda(c);
  s.mu = c.solver.mu;
  s.tol = tol;
  s.max_iters = c.budget.max_iters;
  s.max_time = c.deterministic ? 0.0 : c.budget.max_time;
  s.sgp = c.solver.sgp;
  return s;
}

inline RestorationResult run_method(const std::string& method, const TestProblem& problem, const RunConfig& c,
                                    double tol, const IterationCallback& on_iteration = {}) {
  const PoissonData data = problem.data();
  const FeasibleSet set = make_feasible_set(problem, c.solver.constraint == "s2");
  const Vector x0 = initial_guess(problem, resolve_start(c), set);
  if (method == "acquire")
    return acquire_solve(data, set, x0, acquire_config(c, tol), problem.ground_truth.data(), on_iteration);
  if (method == "sgp")
    return sgp_baseline_solve(data, set, x0, sgp_config(c, tol), problem.ground_truth.data(), on_iteration);
  throw ConfigError("solver.methods", "unknown method '" + method + "'");
}

// ------------------------------------------------------------------- summary

struct SummaryRow {
  std::string method;
  std::string problem;
  double snr = 0.0;
  double tol = 0.0;
  double min_rel_err = 0.0;
  double mssim = 0.0;
  int iters = 0;
  double time_s = 0.0;
};

inline constexpr const char* kSummaryHeader = "method,problem,snr,tol,min_rel_err,mssim,iters,time_s";

inline void write_summary(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kSummaryHeader << '\n';
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%g,%g,%.17g,%.17g,%d,%.6f\n", r.method.c_str(), r.problem.c_str(), r.snr,
                  r.tol, r.min_rel_err, r.mssim, r.iters, r.time_s);
    out << buf;
  }
}

inline std::vector<SummaryRow> read_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kSummaryHeader) throw std::runtime_error(path.string() + ": unexpected summary header");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 8) throw std::runtime_error(path.string() + ": malformed summary row");
    rows.push_back({f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stoi(f[6]),
                    std::stod(f[7])});
  }
  return rows;
}

/// Directory name for one (method, tolerance) run.
inline std::string run_directory(const std::string& method, double tol) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_tol%.0e", method.c_str(), tol);
  return buf;
}

/// One finished (method, tolerance) run ready to be written out.
struct RunRecord {
  std::string method;
  double tol = 0.0;
  SolverTrace trace;
  StopReason reason = StopReason::MaxIterations;
  Vector final_x;
  Vector best_x;
  int best_iter = 0;
};

namespace detail {

// Row of the trace with the smallest relative error; the first one on ties.
inline const TraceRow* best_row(const SolverTrace& t) {
  const TraceRow* best = nullptr;
  for (const auto& r : t.rows)
    if (!best || r.rel_error < best->rel_error) best = &r;
  return best;
}

inline bool tolerance_met(const TraceRow& r, double tol) { return r.rel_change <= tol; }

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Cuts a run at the smallest tolerance into the runs that larger
/// tolerances would have produced. Exact: the solvers are deterministic and
/// only the stopping test depends on the tolerance.
class TrajectorySplitter {
 public:
  TrajectorySplitter(std::vector<double> tols, std::string method) : tols_(std::move(tols)), method_(std::move(method)) {
    records_.resize(tols_.size());
    done_.assign(tols_.size(), false);
  }

  IterationCallback callback() {
    return [this](const TraceRow& row, const Vector& x) {
      if (!best_ || row.rel_error < best_error_) {
        best_error_ = row.rel_error;
        best_ = x;
        best_iter_ = row.iter;
      }
      rows_.push_back(row);
      for (std::size_t i = 0; i + 1 < tols_.size(); ++i) {
        if (done_[i] || !detail::tolerance_met(row, tols_[i])) continue;
        done_[i] = true;
        snapshot(i, x, StopReason::Tolerance);
      }
    };
  }

  std::vector<RunRecord> finish(const RestorationResult& full) {
    for (std::size_t i = 0; i + 1 < tols_.size(); ++i)
      if (!done_[i]) snapshot(i, full.x, full.reason);
    rows_ = full.trace.rows;
    snapshot(tols_.size() - 1, full.x, full.reason);
    for (auto& r : records_) r.trace.initial_objective = full.trace.initial_objective;
    for (auto& r : records_) r.trace.initial_rel_error = full.trace.initial_rel_error;
    return std::move(records_);
  }

 private:
  void snapshot(std::size_t i, const Vector& x, StopReason reason) {
    RunRecord& r = records_[i];
    r.method = method_;
    r.tol = tols_[i];
    r.trace.rows = rows_;
    r.reason = reason;
    r.final_x = x;
    r.best_x = best_ ? *best_ : x;
    r.best_iter = best_iter_;
  }

  std::vector<double> tols_;
  std::string method_;
  std::vector<RunRecord> records_;
  std::vector<TraceRow> rows_;
  std::vector<bool> done_;
  std::optional<Vector> best_;
  double best_error_ = 0.0;
  int best_iter_ = 0;
};

inline RunRecord record_from(const std::string& method, double tol, RestorationResult&& r) {
  RunRecord rec;
  rec.method = method;
  rec.tol = tol;
  rec.trace = std::move(r.trace);
  rec.reason = r.reason;
  rec.best_x = r.best_x ? *r.best_x : r.x;
  rec.best_iter = r.best_iter;
  rec.final_x = std::move(r.x);
  return rec;
}

/// Runs every (method, tolerance) pair of the configuration on one problem.
/// Independent runs are spread over a worker pool; results come back in
/// config order.
inline std::vector<RunRecord> run_all(const RunConfig& c, const TestProblem& problem) {
  c.validate();
  const auto& tols = c.solver.tols;
  const auto& methods = c.solver.methods;
  std::vector<RunRecord> out(methods.size() * tols.size());
  if (c.solver.reuse_trajectory) {
    detail::parallel_for(methods.size(), c.threads, [&](std::size_t m) {
      TrajectorySplitter splitter(tols, methods[m]);
      RestorationResult full = run_method(methods[m], problem, c, tols.back(), splitter.callback());
      auto records = splitter.finish(full);
      for (std::size_t t = 0; t < tols.size(); ++t) out[m * tols.size() + t] = std::move(records[t]);
    });
  } else {
    detail::parallel_for(out.size(), c.threads, [&](std::size_t i) {
      const std::size_t m = i / tols.size(), t = i % tols.size();
      out[i] = record_from(methods[m], tols[t], run_method(methods[m], problem, c, tols[t]));
    });
  }
  return out;
}

inline SummaryRow summarize(const RunRecord& r, const TestProblem& problem, const std::string& name,
                            bool deterministic) {
  SummaryRow s;
  s.method = r.method;
  s.problem = name;
  s.snr = problem.snr_target;
  s.tol = r.tol;
  const TraceRow* best = detail::best_row(r.trace);
  if (best) {
    s.min_rel_err = best->rel_error;
    s.iters = best->iter;
    s.time_s = deterministic ? 0.0 : best->time_s;
  } else {
    s.min_rel_err = r.trace.initial_rel_error;
  }
  s.mssim = mssim(Image(problem.ground_truth.shape(), r.best_x), problem.ground_truth);
  return s;
}

inline void write_run(const RunRecord& r, const TestProblem& problem, const RunConfig& c,
                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  r.trace.write_csv(dir / "trace.csv", !c.deterministic);
  const Image best(problem.ground_truth.shape(), r.best_x);
  const Image last(problem.ground_truth.shape(), r.final_x);
  write_f64img(best, dir / "restored.f64img");
  write_pgm(best, dir / "restored.pgm", 16);
  write_f64img(last, dir / "final.f64img");
  nlohmann::json meta;
  meta["method"] = r.method;
  meta["tol"] = r.tol;
  meta["lambda"] = resolve_lambda(c);
  meta["stop_reason"] = to_string(r.reason);
  meta["iterations"] = r.trace.rows.size();
  meta["best_iteration"] = r.best_iter;
  meta["initial_objective"] = r.trace.initial_objective;
  meta["initial_rel_error"] = r.trace.initial_rel_error;
  meta["config"] = to_json(c);
  std::ofstream out(dir / "meta.json");
  out << meta.dump(2) << '\n';
}

/// Full tolerance sweep: problem bundle, one directory per run, summary.csv.
inline std::vector<SummaryRow> run_sweep(const RunConfig& c) {
  c.validate();
  resolve_lambda(c);
  const TestProblem problem = build_problem(c);
  const std::filesystem::path out = c.output;
  std::filesystem::create_directories(out);
  nlohmann::json extra;
  extra["problem"] = c.problem.name;
  extra["lambda_hint"] = resolve_lambda(c);
  save_problem(problem, out / "problem", extra);
  write_pgm(problem.observed, out / "problem" / "observed.pgm", 16);
  write_pgm(problem.ground_truth, out / "problem" / "ground_truth.pgm", 16);

  const std::vector<RunRecord> records = run_all(c, problem);
  std::vector<SummaryRow> rows;
  for (const auto& r : records) {
    write_run(r, problem, c, out / run_directory(r.method, r.tol));
    rows.push_back(summarize(r, problem, c.problem.name, c.deterministic));
  }
  write_summary(rows, out / "summary.csv");
  std::ofstream cfg(out / "config.json");
  cfg << to_json(c).dump(2) << '\n';
  return rows;
}

// --------------------------------------------------------------------- plots

/// Writes <problem>_err_vs_tol.dat and <problem>_time_vs_tol.dat (one column
/// per method, tolerances in decreasing order) plus plots.gp.
inline std::vector<std::filesystem::path> emit_plots(const std::vector<SummaryRow>& rows,
                                                     const std::vector<std::string>& methods,
                                                     const std::filesystem::path& dir) {
  if (methods.empty()) throw std::invalid_argument("emit_plots: empty method list");
  std::map<std::string, std::map<double, std::map<std::string, const SummaryRow*>, std::greater<>>> table;
  for (const auto& r : rows) table[r.problem][r.tol][r.method] = &r;
  if (table.empty()) throw std::invalid_argument("emit_plots: no summary rows");
  for (const auto& [problem, by_tol] : table)
    for (const auto& [tol, by_method] : by_tol)
      for (const auto& m : methods)
        if (!by_method.count(m))
          throw std::runtime_error("emit_plots: no result for " + m + " on " + problem + " at tol " +
                                   std::to_string(tol));

  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  std::ostringstream script;
  script << "set logscale x\nset xlabel 'Tol'\nset key outside\nset terminal pngcairo size 900,400\n";
  for (const auto& [problem, by_tol] : table) {
    for (const char* what : {"err", "time"}) {
      const std::filesystem::path file = dir / (problem + "_" + what + "_vs_tol.dat");
      std::ofstream out(file);
      out << "# tol";
      for (const auto& m : methods) out << ' ' << m;
      out << '\n';
      char buf[64];
      for (const auto& [tol, by_method] : by_tol) {
        std::snprintf(buf, sizeof(buf), "%g", tol);
        out << buf;
        for (const auto& m : methods) {
          const SummaryRow* r = by_method.at(m);
          std::snprintf(buf, sizeof(buf), " %.10g", std::string(what) == "err" ? r->min_rel_err : r->time_s);
          out << buf;
        }
        out << '\n';
      }
      written.push_back(file);
      script << "set output '" << problem << "_" << what << "_vs_tol.png'\n";
      script << "set ylabel '" << (std::string(what) == "err" ? "relative error" : "time (s)") << "'\n";
      script << "plot ";
      for (std::size_t i = 0; i < methods.size(); ++i)
        script << (i ? ", " : "") << "'" << file.filename().string() << "' using 1:" << i + 2
               << " with linespoints title '" << methods[i] << "'";
      script << '\n';
    }
  }
  const std::filesystem::path gp = dir / "plots.gp";
  std::ofstream(gp) << script.str();
  written.push_back(gp);
  return written;
}

/// Re-derives the summary of a sweep directory from its trace files and
/// checks it against summary.csv.
inline std::vector<SummaryRow> load_sweep(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "summary.csv")) throw std::runtime_error("no summary.csv in " + dir.string());
  std::vector<SummaryRow> rows = read_summary(dir / "summary.csv");
  for (const auto& r : rows) {
    const auto trace_path = dir / run_directory(r.method, r.tol) / "trace.csv";
    if (!std::filesystem::exists(trace_path)) throw std::runtime_error("missing trace " + trace_path.string());
    const SolverTrace t = SolverTrace::read_csv(trace_path);
    const TraceRow* best = detail::best_row(t);
    if (best && (best->iter != r.iters || best->rel_error != r.min_rel_err))
      throw std::runtime_error("summary row for " + r.method + " disagrees with " + trace_path.string());
  }
  return rows;
}

/// Plain-text table, one row per problem and method at its best tolerance.
inline std::string format_table(const std::vector<SummaryRow>& rows) {
  std::map<std::pair<std::string, std::string>, const SummaryRow*> best;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.problem, r.method);
    auto it = best.find(key);
    if (it == best.end()) order.push_back(key);
    if (it == best.end() || r.min_rel_err < it->second->min_rel_err) best[key] = &r;
  }
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s %-8s %11s %9s %7s %9s %9s\n", "problem", "method", "min_rel_err", "mssim",
                "iters", "time_s", "tol");
  out << buf;
  for (const auto& key : order) {
    const SummaryRow& r = *best.at(key);
    std::snprintf(buf, sizeof(buf), "%-12s %-8s %11.3e %9.3e %7d %9.3e %9.2e\n", r.problem.c_str(), r.method.c_str(),
                  r.min_rel_err, r.mssim, r.iters, r.time_s, r.tol);
    out << buf;
  }
  return out.str();
}

}  // namespace acquire
