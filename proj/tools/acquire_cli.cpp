#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "acquire/experiment.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> problem;
  std::optional<std::string> image;
  std::optional<std::string> method;
  std::optional<double> lambda;
  std::optional<double> mu;
  std::optional<double> snr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> tol;
  std::optional<std::string> constraint;
  std::optional<double> max_time;
  std::optional<int> max_iters;
  std::optional<std::string> out;
  std::optional<std::string> blur;
  std::optional<std::string> variant;
  std::optional<std::string> start;
  std::optional<int> threads;
  std::optional<int> inner_max_iters;
  bool deterministic = false;
  bool reuse = false;
  bool monotone = false;
};

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--problem", o.problem, "phantom, cameraman, micro, satellite or a problem bundle directory");
  cmd->add_option("--image", o.image, "PGM reference image");
  cmd->add_option("--snr", o.snr, "target SNR in dB");
  cmd->add_option("--seed", o.seed, "noise seed");
  cmd->add_option("--blur", o.blur, "gaussian, motion, defocus or none");
  cmd->add_option("--phantom-variant", o.variant, "original or modified");
  cmd->add_option("--out", o.out, "output directory");
}

void add_solver(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--method", o.method, "acquire, sgp or a comma list");
  cmd->add_option("--lambda", o.lambda, "regularization weight (default: preset table)");
  cmd->add_option("--mu", o.mu, "TV smoothing threshold");
  cmd->add_option("--tol", o.tol, "comma-separated stopping tolerances");
  cmd->add_option("--constraint", o.constraint, "s1 (x >= 0) or s2 (x >= 0, flux preserved)");
  cmd->add_option("--max-time", o.max_time, "wall-clock budget per run in seconds");
  cmd->add_option("--max-iters", o.max_iters, "iteration cap per run");
  cmd->add_option("--start", o.start, "auto, observed or flat");
  cmd->add_option("--inner-max-iters", o.inner_max_iters, "inner iteration cap, 0 for none");
  cmd->add_option("--threads", o.threads, "worker threads, 0 for all cores");
  cmd->add_flag("--monotone", o.monotone, "monotone outer line search");
  cmd->add_flag("--deterministic", o.deterministic, "no time budget, zero time columns");
  cmd->add_flag("--reuse-trajectory", o.reuse, "derive all tolerances from one run");
}

acquire::RunConfig resolve(const Overrides& o) {
  acquire::RunConfig c;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw std::runtime_error("cannot read config " + o.config);
    c = acquire::run_config_from_json(nlohmann::json::parse(in));
  }
  if (o.problem) {
    if (std::filesystem::exists(std::filesystem::path(*o.problem) / "meta.json")) {
      c.problem.bundle = *o.problem;
    } else {
      c.problem.name = *o.problem;
      c.problem.blur.sigma = acquire::preset_sigma(c.problem.name);
    }
  }
  if (o.image) c.problem.image = *o.image;
  if (o.snr) c.problem.snr = *o.snr;
  if (o.seed) c.problem.seed = *o.seed;
  if (o.blur) c.problem.blur.kind = *o.blur;
  if (o.variant) c.problem.phantom_variant = *o.variant;
  if (o.out) c.output = *o.out;
  if (o.method) c.solver.methods = split(*o.method);
  if (o.lambda) c.solver.lambda = *o.lambda;
  if (o.mu) c.solver.mu = *o.mu;
  if (o.tol) {
    c.solver.tols.clear();
    for (const auto& t : split(*o.tol)) {
      try {
        c.solver.tols.push_back(std::stod(t));
      } catch (const std::exception&) {
        throw acquire::ConfigError("solver.tol", "not a number: '" + t + "'");
      }
    }
  }
  if (o.constraint) c.solver.constraint = *o.constraint;
  if (o.max_time) c.budget.max_time = *o.max_time;
  if (o.max_iters) c.budget.max_iters = *o.max_iters;
  if (o.start) c.solver.start = *o.start;
  if (o.inner_max_iters) c.solver.inner_max_iters = *o.inner_max_iters;
  if (o.threads) c.threads = *o.threads;
  if (o.monotone) c.solver.monotone = true;
  if (o.deterministic) c.deterministic = true;
  if (o.reuse) c.solver.reuse_trajectory = true;
  c.validate();
  return c;
}

int cmd_generate(const Overrides& o) {
  const acquire::RunConfig c = resolve(o);
  const acquire::TestProblem p = acquire::build_problem(c);
  nlohmann::json extra;
  extra["problem"] = c.problem.name;
  if (auto lam = acquire::preset_lambda(c.problem.name, c.problem.blur.kind, c.problem.snr)) extra["lambda_hint"] = *lam;
  extra["blur"] = acquire::to_json(c)["problem"]["blur"];
  acquire::save_problem(p, c.output, extra);
  acquire::write_pgm(p.observed, std::filesystem::path(c.output) / "observed.pgm", 16);
  acquire::write_pgm(p.ground_truth, std::filesystem::path(c.output) / "ground_truth.pgm", 16);
  std::printf("wrote %s (%zux%zu, measured SNR %.3f dB, flux %.6g)\n", c.output.c_str(), p.observed.rows(),
              p.observed.cols(), p.measured_snr(), p.flux);
  return 0;
}

int cmd_solve(const Overrides& o) {
  acquire::RunConfig c = resolve(o);
  c.solver.methods.resize(1);
  c.solver.tols.resize(1);
  const acquire::TestProblem p = acquire::build_problem(c);
  const std::string& method = c.solver.methods.front();
  const double tol = c.solver.tols.front();
  acquire::RestorationResult r = acquire::run_method(method, p, c, tol);
  const acquire::RunRecord rec = acquire::record_from(method, tol, std::move(r));
  const std::filesystem::path out = c.output;
  acquire::write_run(rec, p, c, out);
  const acquire::SummaryRow row = acquire::summarize(rec, p, c.problem.name, c.deterministic);
  acquire::write_summary({row}, out / "summary.csv");
  std::printf("%s: %zu iterations (%s), min rel err %.4e at iteration %d, MSSIM %.4f\n", method.c_str(),
              rec.trace.rows.size(), acquire::to_string(rec.reason), row.min_rel_err, row.iters, row.mssim);
  return 0;
}

int cmd_sweep(const Overrides& o) {
  const acquire::RunConfig c = resolve(o);
  const auto rows = acquire::run_sweep(c);
  acquire::emit_plots(rows, c.solver.methods, std::filesystem::path(c.output) / "plots");
  std::cout << acquire::format_table(rows);
  return 0;
}

int cmd_report(const std::string& dir) {
  const auto rows = acquire::load_sweep(dir);
  std::vector<std::string> methods;
  for (const auto& r : rows)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  acquire::emit_plots(rows, methods, std::filesystem::path(dir) / "plots");
  const std::string table = acquire::format_table(rows);
  std::ofstream(std::filesystem::path(dir) / "table.txt") << table;
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TV-regularized Poisson image restoration"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("generate", "write a blurred, noisy test problem bundle");
  add_common(gen, o);
  auto* solve = app.add_subcommand("solve", "restore one problem at one tolerance");
  add_common(solve, o);
  add_solver(solve, o);
  auto* sweep = app.add_subcommand("sweep", "tolerance sweep with summary table and plot data");
  add_common(sweep, o);
  add_solver(sweep, o);
  std::string report_dir;
  auto* report = app.add_subcommand("report", "tables and plot data from a finished sweep");
  report->add_option("--out", report_dir, "sweep output directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_generate(o);
    if (solve->parsed()) return cmd_solve(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const acquire::ConfigError& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
