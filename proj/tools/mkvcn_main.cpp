// Command-line front end: run experiments from JSON configs, dump metric
// tables, fit rates from series files, regress finite-size floors, and run
// named presets with their pass/fail checks.
//
// Exit codes: 0 success / all checks pass, 2 a preset check failed, 1 error.

#include "mkvcn/acceptance.hpp"
#include "mkvcn/errors.hpp"
#include "mkvcn/harness.hpp"
#include "mkvcn/metric.hpp"
#include "mkvcn/numerics.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace mkvcn;
namespace fs = std::filesystem;

double tail_median_of(const Eigen::VectorXd& v) {
  const Eigen::Index tail = std::max<Eigen::Index>(3, v.size() / 5);
  std::vector<double> tv(v.data() + (v.size() - tail), v.data() + v.size());
  return median(std::move(tv));
}

void print_rate(const RateFit& rf) {
  std::printf("rate      %.6g\n", rf.rate);
  std::printf("rate_se   %.3g\n", rf.rate_se);
  std::printf("plateau   %.6g\n", rf.plateau);
  std::printf("r2        %.4f\n", rf.r2);
  std::printf("window    [%g, %g] (%d points)\n", rf.window_lo, rf.window_hi,
              rf.points_used);
}

int cmd_run(const std::string& path, const ExperimentConfig& overrides,
            const std::vector<std::string>& set_flags) {
  ExperimentConfig cfg = load_config(path);
  auto flag = [&](const char* name) {
    return std::find(set_flags.begin(), set_flags.end(), name) != set_flags.end();
  };
  if (flag("seed")) cfg.seed = overrides.seed;
  if (flag("realizations")) cfg.realizations = overrides.realizations;
  if (flag("workers")) cfg.workers = overrides.workers;
  if (flag("output-dir")) cfg.output_dir = overrides.output_dir;
  if (flag("t-final")) cfg.t_final = overrides.t_final;
  if (flag("particles")) cfg.particles = overrides.particles;

  const ExperimentResult res = run_experiment(cfg);
  std::printf("experiment %s: %d realizations, %lld observation rows\n",
              cfg.name.c_str(), cfg.realizations,
              static_cast<long long>(res.times.size()));
  if (res.metric)
    std::printf("metric     R0=%.6g R1=%.6g ell=%.6g c=%.6g\n", res.metric->R0,
                res.metric->R1, res.metric->ell, res.rate_c_value);
  for (const auto& w : res.warnings)
    std::printf("warning    %s\n", w.c_str());
  for (std::size_t j = 0; j < res.observers.size(); ++j)
    std::printf("final      %-12s %.6g (se %.2g)\n", res.observers[j].c_str(),
                res.mean(res.times.size() - 1, Eigen::Index(j)),
                res.se(res.times.size() - 1, Eigen::Index(j)));
  if (!cfg.output_dir.empty())
    std::printf("artifacts  %s\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_metric_dump(const std::string& path, const std::string& out_file) {
  const ExperimentConfig cfg = load_config(path);
  const double s0 = cfg.metric_sigma0.value_or(cfg.sigma0);
  if (s0 <= 0) throw ConfigError("metric dump needs a positive sigma0");
  const PotentialSpec v = build_potential(cfg.potential, cfg.dim);
  const InteractionSpec w = build_interaction(cfg.interaction);
  const DistortedMetric m = build_metric(v, s0, 1e-3, cfg.metric_diff);

  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_file.empty()) {
    file.open(out_file);
    if (!file) throw std::runtime_error("cannot open " + out_file);
    os = &file;
  }
  char line[256];
  std::snprintf(line, sizeof line,
                "# R0 %.17g\n# R1 %.17g\n# ell %.17g\n# phi_R0 %.17g\n# c %.17g\n",
                m.R0, m.R1, m.ell, m.phi_R0, rate_c(m, w));
  *os << line << "r,f,fp,phi,g\n";
  for (Eigen::Index i = 0; i < m.r.size(); ++i) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g\n", m.r[i],
                  m.f[i], m.fp[i], m.phi[i], m.g[i]);
    *os << line;
  }
  return 0;
}

// Reads a series.csv produced by run (header t,<name>_mean,<name>_se,...).
void read_series(const std::string& path, const std::string& column,
                 Eigen::VectorXd& t, Eigen::VectorXd& v) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::vector<std::string> names;
  {
    std::stringstream ss(header);
    std::string cell;
    while (std::getline(ss, cell, ',')) names.push_back(cell);
  }
  const std::string want = column.empty() ? (names.size() > 1 ? names[1] : "")
                                          : column + "_mean";
  std::size_t idx = names.size();
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == want) idx = j;
  if (idx == names.size())
    throw std::runtime_error("column '" + column + "' not found in " + path);

  std::vector<double> ts, vs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t j = 0;
    double tval = 0, vval = 0;
    while (std::getline(ss, cell, ',')) {
      if (j == 0) tval = std::stod(cell);
      if (j == idx) vval = std::stod(cell);
      ++j;
    }
    ts.push_back(tval);
    vs.push_back(vval);
  }
  t.resize(Eigen::Index(ts.size()));
  v.resize(Eigen::Index(vs.size()));
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    t[i] = ts[std::size_t(i)];
    v[i] = vs[std::size_t(i)];
  }
}

int cmd_fit(const std::string& csv, const std::string& column,
            std::optional<double> plateau) {
  Eigen::VectorXd t, v;
  read_series(csv, column, t, v);
  const RateFit rf = fit_rate(t, v, plateau);
  print_rate(rf);
  return 0;
}

int cmd_scaling(const std::string& dir, const std::string& column) {
  std::vector<fs::path> configs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") configs.push_back(entry.path());
  std::sort(configs.begin(), configs.end());
  if (configs.size() < 3)
    throw std::runtime_error("scaling needs at least 3 configs in " + dir);

  std::vector<double> ns, plateaus;
  for (const auto& p : configs) {
    const ExperimentConfig cfg = load_config(p.string());
    const ExperimentResult res = run_experiment(cfg);
    const std::string col = column.empty()
                                ? (cfg.ensembles == 2
                                       ? (cfg.dim == 1 ? "w2" : "paired_rms")
                                       : "spread_a")
                                : column;
    const double plateau = tail_median_of(result_mean(res, col));
    std::printf("%-30s N=%-6d plateau=%.6g\n", p.filename().string().c_str(),
                cfg.particles, plateau);
    ns.push_back(double(cfg.particles));
    plateaus.push_back(plateau);
  }
  const LineFit lf = regress_loglog(ns, plateaus);
  std::printf("slope     %.4f (se %.3g)\nr2        %.4f\n", lf.slope,
              lf.slope_se, lf.r2);
  return 0;
}

int report(const CriterionResult& r) {
  std::printf("%s criterion %d: %s — %s\n", r.pass ? "PASS" : "FAIL", r.id,
              r.name.c_str(), r.detail.c_str());
  return r.pass ? 0 : 2;
}

int cmd_preset(const std::string& name, const std::string& out_root) {
  if (name == "t2_convex") return report(criterion_convex_convergence(out_root));
  if (name == "chaos_scaling") return report(criterion_chaos_floor(out_root));
  if (name == "p4_ou") return report(criterion_ou_invariant(out_root));
  if (name == "t3_double_well")
    return report(criterion_double_well_rate(out_root));
  if (name == "sg0_collapse")
    return report(criterion_zero_idio_collapse(out_root));
  if (name == "p9_gibbs") return report(criterion_gibbs_barycenter(out_root));
  if (name == "p6_threshold") {
    // Root find for the sign change of the contraction rate over sigma0.
    const ExperimentConfig cfg = preset_config(name);
    const PotentialSpec v = build_potential(cfg.potential, cfg.dim);
    const InteractionSpec w = build_interaction(cfg.interaction);
    ThresholdReport rep;
    try {
      rep = sigma0_threshold(v, w, 0.5, 8.0);
    } catch (const NoThresholdError& e) {
      std::printf("FAIL threshold: %s\n", e.what());
      return 2;
    }
    for (Eigen::Index i = 0; i < rep.grid.rows(); ++i)
      std::printf("sigma0=%-8.4f c=%.6f\n", rep.grid(i, 0), rep.grid(i, 1));
    if (rep.boundary_positive)
      std::printf("PASS threshold: c already positive at sigma0 = 0.5\n");
    else
      std::printf("PASS threshold: c crosses zero at sigma0 = %.6f\n",
                  rep.threshold.value_or(0.5));
    return 0;
  }
  // Remaining named configs run as plain experiments with a rate summary.
  ExperimentConfig cfg = preset_config(name);
  cfg.output_dir = (fs::path(out_root) / name).string();
  const ExperimentResult res = run_experiment(cfg);
  const std::string col = cfg.fit_column.empty() ? "spread_a" : cfg.fit_column;
  if (col != "none") {
    const RateFit rf = fit_rate(res.times, result_mean(res, col));
    std::printf("%s: fitted %s rate\n", name.c_str(), col.c_str());
    print_rate(rf);
  }
  std::printf("artifacts  %s\n", cfg.output_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"interacting-particle simulation and verification toolkit "
               "(common-noise couplings, distorted metrics, rate fits)"};
  app.require_subcommand(1);

  // run
  auto* run_cmd = app.add_subcommand("run", "run an experiment from a JSON config");
  std::string run_config;
  ExperimentConfig ov;
  run_cmd->add_option("config", run_config, "config file")->required();
  auto* o_seed = run_cmd->add_option("--seed", ov.seed, "override seed");
  auto* o_real =
      run_cmd->add_option("--realizations", ov.realizations, "override count");
  auto* o_workers = run_cmd->add_option("--workers", ov.workers, "override workers");
  auto* o_out =
      run_cmd->add_option("--output-dir", ov.output_dir, "override output dir");
  auto* o_tf = run_cmd->add_option("--t-final", ov.t_final, "override horizon");
  auto* o_np = run_cmd->add_option("--particles", ov.particles, "override N");

  // metric dump
  auto* metric_cmd = app.add_subcommand("metric", "metric table utilities");
  metric_cmd->require_subcommand(1);
  auto* dump_cmd =
      metric_cmd->add_subcommand("dump", "emit r,f,fp,phi,g table with header");
  std::string dump_config, dump_out;
  dump_cmd->add_option("config", dump_config, "config file")->required();
  dump_cmd->add_option("--out", dump_out, "write to file instead of stdout");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit a decay rate from a series CSV");
  std::string fit_csv, fit_column;
  double fit_plateau = 0;
  fit_cmd->add_option("csv", fit_csv, "series.csv path")->required();
  fit_cmd->add_option("--column", fit_column, "observer name (default: first)");
  auto* o_plateau =
      fit_cmd->add_option("--plateau", fit_plateau, "override plateau");

  // scaling
  auto* scale_cmd =
      app.add_subcommand("scaling", "run all configs in a directory and "
                                    "regress plateau vs particle count");
  std::string scale_dir, scale_column;
  scale_cmd->add_option("config-dir", scale_dir, "directory of .json configs")
      ->required();
  scale_cmd->add_option("--column", scale_column, "observer used for plateaus");

  // preset
  auto* preset_cmd =
      app.add_subcommand("preset", "run a named preset and its check");
  std::string preset_name, preset_out = "preset_out";
  bool list_presets = false;
  preset_cmd->add_option("name", preset_name, "preset name");
  preset_cmd->add_option("--output-dir", preset_out, "artifact root");
  preset_cmd->add_flag("--list", list_presets, "list preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (run_cmd->parsed()) {
      std::vector<std::string> set_flags;
      if (o_seed->count()) set_flags.push_back("seed");
      if (o_real->count()) set_flags.push_back("realizations");
      if (o_workers->count()) set_flags.push_back("workers");
      if (o_out->count()) set_flags.push_back("output-dir");
      if (o_tf->count()) set_flags.push_back("t-final");
      if (o_np->count()) set_flags.push_back("particles");
      return cmd_run(run_config, ov, set_flags);
    }
    if (metric_cmd->parsed()) return cmd_metric_dump(dump_config, dump_out);
    if (fit_cmd->parsed())
      return cmd_fit(fit_csv, fit_column,
                     o_plateau->count() ? std::optional<double>(fit_plateau)
                                        : std::nullopt);
    if (scale_cmd->parsed()) return cmd_scaling(scale_dir, scale_column);
    if (preset_cmd->parsed()) {
      if (list_presets || preset_name.empty()) {
        for (const auto& n : preset_names()) std::printf("%s\n", n.c_str());
        return 0;
      }
      return cmd_preset(preset_name, preset_out);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
