#include "doctest.h"

#include "mkvcn/errors.hpp"
#include "mkvcn/harness.hpp"
#include "mkvcn/metric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace mkvcn;
namespace fs = std::filesystem;

namespace {

Eigen::VectorXd linspace(double lo, double hi, int n) {
  Eigen::VectorXd t(n);
  for (int i = 0; i < n; ++i) t[i] = lo + (hi - lo) * i / double(n - 1);
  return t;
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("mkvcn_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("rate fit recovers a clean exponential with known floor") {
  const Eigen::VectorXd t = linspace(0.0, 5.0, 101);
  Eigen::VectorXd v(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i)
    v[i] = 5.0 * std::exp(-2.0 * t[i]) + 0.01;

  SUBCASE("automatic plateau") {
    const RateFit fit = fit_rate(t, v);
    CHECK(fit.rate == doctest::Approx(2.0).epsilon(0.05));
    CHECK(fit.plateau == doctest::Approx(0.01).epsilon(0.25));
    CHECK(fit.points_used >= 10);
    CHECK(fit.r2 > 0.99);
    CHECK(fit.window_lo == doctest::Approx(0.0));
    CHECK(fit.window_hi < 3.5);
  }
  SUBCASE("exact plateau override makes the fit exact") {
    const RateFit fit = fit_rate(t, v, 0.01);
    CHECK(fit.rate == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(fit.intercept == doctest::Approx(std::log(5.0)).epsilon(1e-9));
    CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.rate_se == doctest::Approx(0.0).scale(1.0));
  }
}

TEST_CASE("rate fit isolates the slow mode of a two-scale decay") {
  const Eigen::VectorXd t = linspace(0.0, 10.0, 201);
  Eigen::VectorXd v(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i)
    v[i] = std::exp(-t[i]) + std::exp(-10.0 * t[i]);
  const RateFit fit = fit_rate(t, v);
  CHECK(fit.rate > 0.9);
  CHECK(fit.rate < 1.15);
  CHECK(fit.points_used >= 10);
}

TEST_CASE("rate fit refuses degenerate inputs") {
  const Eigen::VectorXd t = linspace(0.0, 5.0, 101);
  CHECK_THROWS_AS(fit_rate(t, Eigen::VectorXd::Constant(101, 1.0)),
                  FitImpossibleError);

  const Eigen::VectorXd t5 = linspace(0.0, 1.0, 5);
  Eigen::VectorXd v5(5);
  for (int i = 0; i < 5; ++i) v5[i] = std::exp(-t5[i]);
  CHECK_THROWS_AS(fit_rate(t5, v5), FitImpossibleError);
}

TEST_CASE("log-log regression on an exact power law") {
  const std::vector<double> ns = {100, 400, 1600, 6400};
  std::vector<double> plateaus;
  for (double n : ns) plateaus.push_back(2.0 / std::sqrt(n));
  const LineFit fit = regress_loglog(ns, plateaus);
  CHECK(fit.slope == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(regress_loglog({100, 400}, {1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(regress_loglog({100, 100, 400}, {1.0, 1.0, 0.5}),
                  std::invalid_argument);
  CHECK_THROWS_AS(regress_loglog({100, 400, 1600}, {1.0, -0.5, 0.25}),
                  std::invalid_argument);
}

TEST_CASE("presets exist, validate, and round-trip through json") {
  const std::vector<std::string> names = preset_names();
  for (const char* required :
       {"t2_convex", "p4_ou", "t3_double_well", "sg0_collapse",
        "chaos_scaling", "p6_threshold"})
    CHECK(std::find(names.begin(), names.end(), required) != names.end());

  for (const std::string& name : names) {
    CAPTURE(name);
    const ExperimentConfig cfg = preset_config(name);  // validated inside
    const ExperimentConfig back = parse_config(config_to_json(cfg));
    CHECK(back.name == cfg.name);
    CHECK(back.dim == cfg.dim);
    CHECK(back.potential.kind == cfg.potential.kind);
    CHECK(back.interaction.kind == cfg.interaction.kind);
    CHECK(back.interaction.alpha == cfg.interaction.alpha);
    CHECK(back.sigma == cfg.sigma);
    CHECK(back.sigma0 == cfg.sigma0);
    CHECK(back.particles == cfg.particles);
    CHECK(back.aux_particles == cfg.aux_particles);
    CHECK(back.ensembles == cfg.ensembles);
    CHECK(back.dt == cfg.dt);
    CHECK(back.t_final == cfg.t_final);
    CHECK(back.observe_every == cfg.observe_every);
    CHECK(back.realizations == cfg.realizations);
    CHECK(back.seed == cfg.seed);
    CHECK(back.coupling == cfg.coupling);
    CHECK(back.coupling_delta.has_value() == cfg.coupling_delta.has_value());
    CHECK(back.pair_initials == cfg.pair_initials);
    CHECK(back.functional == cfg.functional);
    CHECK(back.fit_column == cfg.fit_column);
    CHECK(back.snapshot_times == cfg.snapshot_times);
    CHECK(back.initial_a.kind == cfg.initial_a.kind);
  }
  CHECK_THROWS_AS(preset_config("no_such_preset"), ConfigError);
}

TEST_CASE("selected preset parameters") {
  const ExperimentConfig t2 = preset_config("t2_convex");
  CHECK(t2.dim == 1);
  CHECK(t2.ensembles == 2);
  CHECK(t2.aux_particles == t2.particles);
  CHECK(t2.sigma0 == doctest::Approx(0.5));
  CHECK(t2.fit_column == "w2");

  const ExperimentConfig ou = preset_config("p4_ou");
  CHECK(ou.potential.curvature == doctest::Approx(0.5));
  CHECK(ou.interaction.kind == "none");
  CHECK(ou.initial_a.kind == "gaussian_random_center");
  CHECK_FALSE(ou.initial_a.share_center);
  CHECK(ou.functional == "x2");
  CHECK(ou.snapshot_times.size() == 10);

  const ExperimentConfig dw = preset_config("t3_double_well");
  CHECK(dw.potential.kind == "double_well_1d");
  CHECK(dw.sigma0 == doctest::Approx(3.0));
  CHECK(dw.coupling == "reflection_1d");
  CHECK_FALSE(dw.coupling_delta.has_value());  // resolved automatically

  const ExperimentConfig sg = preset_config("sg0_collapse");
  CHECK(sg.sigma == 0.0);
  CHECK(sg.ensembles == 1);
  CHECK(sg.dim == 2);
}

TEST_CASE("config parsing rejects malformed input with named errors") {
  auto message_of = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };

  SUBCASE("unknown key is named") {
    const std::string msg = message_of(R"({"sigmaO": 1.0})");
    CHECK(msg.find("sigmaO") != std::string::npos);
  }
  SUBCASE("reflection coupling in higher dimension") {
    const std::string msg = message_of(
        R"({"dim": 2, "ensembles": 2, "coupling": {"mode": "reflection_1d"}})");
    CHECK(msg.find("reflection_1d") != std::string::npos);
  }
  SUBCASE("snapshot time off the observation grid") {
    const std::string msg = message_of(
        R"({"dim": 1, "ensembles": 1, "dt": 0.001, "t_final": 1.0,
            "observe_every": 10, "snapshot_times": [0.005]})");
    CHECK(msg.find("snapshot_times") != std::string::npos);
  }
  SUBCASE("coupled run with zero common noise and no metric override") {
    const std::string msg =
        message_of(R"({"dim": 1, "ensembles": 2, "sigma": 1.0, "sigma0": 0.0})");
    CHECK(msg.find("sigma0") != std::string::npos);
  }
  SUBCASE("duration not a step multiple") {
    const std::string msg = message_of(
        R"({"dim": 1, "ensembles": 1, "dt": 0.003, "t_final": 1.0})");
    CHECK(msg.find("t_final") != std::string::npos);
  }
  SUBCASE("bad json is reported as a parse failure") {
    CHECK_THROWS_AS(parse_config("{\"dim\": "), ConfigError);
  }
}

TEST_CASE("scalar shorthands widen to the requested dimension") {
  const ExperimentConfig cfg = parse_config(
      R"({"dim": 2, "ensembles": 1, "sigma0": 1.0,
          "initial_a": {"kind": "gaussian", "mean": 1.5, "cov": 0.25}})");
  const InitialLaw law = build_initial(cfg.initial_a, cfg.dim);
  REQUIRE(law.mean.size() == 2);
  CHECK(law.mean[0] == doctest::Approx(1.5));
  CHECK(law.mean[1] == doctest::Approx(1.5));
  // A 1x1 covariance is kept as-is and interpreted isotropically at sample
  // time; check the sampled law, not the representation.
  REQUIRE(law.cov.size() == 1);
  CHECK(law.cov(0, 0) == doctest::Approx(0.25));
  const NoisePlan plan{99, 1e-3, 1.0, 1.0};
  const Ensemble e =
      sample_initial(law, 20000, 2, plan, 0, Channel::init_a,
                     Channel::init_center_shared);
  for (int c = 0; c < 2; ++c) {
    const double mean = e.x.col(c).mean();
    const double var =
        (e.x.col(c).array() - mean).square().sum() / (e.x.rows() - 1);
    CHECK(mean == doctest::Approx(1.5).epsilon(0.02));
    CHECK(var == doctest::Approx(0.25).epsilon(0.05));
  }
}

TEST_CASE("explicit optional fields survive a json round trip") {
  ExperimentConfig cfg;
  cfg.name = "round_trip";
  cfg.dim = 1;
  cfg.sigma = 0.3;
  cfg.sigma0 = 0.7;
  cfg.particles = 24;
  cfg.ensembles = 2;
  cfg.dt = 1e-3;
  cfg.t_final = 0.1;
  cfg.observe_every = 10;
  cfg.realizations = 2;
  cfg.coupling = "reflection_1d";
  cfg.coupling_delta = 0.025;
  cfg.metric_sigma0 = 2.0;
  cfg.metric_diff = 9.0;
  cfg.snapshot_times = {0.05, 0.1};
  cfg.emit_barycenters = true;
  const ExperimentConfig back = parse_config(config_to_json(cfg));
  REQUIRE(back.coupling_delta.has_value());
  CHECK(*back.coupling_delta == doctest::Approx(0.025));
  REQUIRE(back.metric_sigma0.has_value());
  CHECK(*back.metric_sigma0 == doctest::Approx(2.0));
  REQUIRE(back.metric_diff.has_value());
  CHECK(*back.metric_diff == doctest::Approx(9.0));
  CHECK(back.emit_barycenters);
  CHECK(back.snapshot_times == cfg.snapshot_times);
}

namespace {

ExperimentConfig tiny_coupled_config() {
  ExperimentConfig cfg;
  cfg.name = "tiny_coupled";
  cfg.dim = 1;
  cfg.potential.kind = "quadratic";
  cfg.potential.curvature = 1.0;
  cfg.sigma = 0.2;
  cfg.sigma0 = 0.4;
  cfg.particles = 32;
  cfg.ensembles = 2;
  cfg.dt = 1e-2;
  cfg.t_final = 0.2;
  cfg.observe_every = 5;
  cfg.realizations = 4;
  cfg.seed = 777;
  cfg.coupling = "synchronous";
  cfg.initial_a.kind = "gaussian";
  cfg.initial_a.mean = Eigen::VectorXd::Constant(1, -1.0);
  cfg.initial_a.cov = Eigen::MatrixXd::Constant(1, 1, 0.1);
  cfg.initial_b.kind = "gaussian";
  cfg.initial_b.mean = Eigen::VectorXd::Constant(1, 1.0);
  cfg.initial_b.cov = Eigen::MatrixXd::Constant(1, 1, 0.1);
  cfg.fit_column = "w2";
  cfg.workers = 2;
  cfg.snapshot_times = {0.1, 0.2};
  return cfg;
}

}  // namespace

TEST_CASE("small coupled experiment end to end with file outputs") {
  const fs::path out = fresh_dir("run");
  ExperimentConfig cfg = tiny_coupled_config();
  cfg.output_dir = out.string();

  const ExperimentResult res = run_experiment(cfg);

  REQUIRE(res.times.size() == 5);
  CHECK(res.times[0] == doctest::Approx(0.0));
  CHECK(res.times[4] == doctest::Approx(0.2));
  REQUIRE(res.records.size() == 4);
  CHECK(res.mean.rows() == 5);
  CHECK(res.mean.cols() == Eigen::Index(res.observers.size()));
  CHECK(res.se.rows() == 5);
  CHECK(res.se.minCoeff() >= 0.0);

  for (const char* name : {"spread_a", "spread_b", "paired_rms", "df_paired",
                           "f_mean_dist", "w1", "w2"}) {
    CAPTURE(name);
    CHECK(std::find(res.observers.begin(), res.observers.end(),
                    std::string(name)) != res.observers.end());
  }
  const Eigen::VectorXd w2 = result_mean(res, "w2");
  CHECK(w2[0] == doctest::Approx(2.0).epsilon(0.15));  // initial separation
  CHECK(w2[4] < w2[0]);                                // contraction en route
  CHECK_THROWS_AS(result_mean(res, "no_such_column"), std::invalid_argument);

  REQUIRE(res.metric.has_value());
  CHECK(res.rate_c_value ==
        doctest::Approx(rate_c(*res.metric, make_no_interaction())));
  CHECK(res.rate_c_value > 0.0);

  REQUIRE(res.snapshots.times.size() == 2);
  REQUIRE(res.snapshots.a.size() == 4);
  REQUIRE(res.snapshots.a[0].size() == 2);
  CHECK(res.snapshots.a[0][1].rows() == 32);
  CHECK(res.snapshots.b[0][0].rows() == 32);

  for (const char* f : {"manifest.json", "series.csv", "rate_fit.json",
                        "plots.gp"}) {
    CAPTURE(f);
    CHECK(fs::exists(out / f));
  }
  std::ifstream series(out / "series.csv");
  std::string header;
  REQUIRE(std::getline(series, header));
  CHECK(header.rfind("t,", 0) == 0);
  CHECK(header.find("w2_mean") != std::string::npos);
  CHECK(header.find("w2_se") != std::string::npos);
  int rows = 0;
  for (std::string line; std::getline(series, line);)
    if (!line.empty()) ++rows;
  CHECK(rows == 5);

  std::ifstream man(out / "manifest.json");
  std::stringstream buf;
  buf << man.rdbuf();
  const std::string manifest = buf.str();
  CHECK(manifest.find("\"tiny_coupled\"") != std::string::npos);
  CHECK(manifest.find("\"derived\"") != std::string::npos);
  CHECK(manifest.find("\"ell\"") != std::string::npos);
}

TEST_CASE("automatic reflection scale matches the per-step noise displacement") {
  ExperimentConfig cfg = tiny_coupled_config();
  cfg.coupling = "reflection_1d";
  cfg.realizations = 2;
  const ExperimentResult res = run_experiment(cfg);
  // Half the blend zone covers one reflected kick: delta = 4 sigma0 sqrt(dt).
  CHECK(res.delta_used ==
        doctest::Approx(4.0 * cfg.sigma0 * std::sqrt(cfg.dt)).epsilon(1e-12));

  cfg.coupling_delta = 0.125;
  const ExperimentResult fixed = run_experiment(cfg);
  CHECK(fixed.delta_used == doctest::Approx(0.125));
}

TEST_CASE("experiment reduction is independent of the worker count") {
  ExperimentConfig cfg = tiny_coupled_config();
  cfg.workers = 1;
  const ExperimentResult one = run_experiment(cfg);
  cfg.workers = 4;
  const ExperimentResult four = run_experiment(cfg);
  REQUIRE(one.mean.rows() == four.mean.rows());
  CHECK((one.mean.array() == four.mean.array()).all());
  CHECK((one.se.array() == four.se.array()).all());
  CHECK(one.delta_used == four.delta_used);
}

TEST_CASE("particle scaling sweep produces a finite log-log fit") {
  ExperimentConfig base;
  base.name = "tiny_chaos";
  base.dim = 1;
  base.potential.curvature = 1.0;
  base.interaction.kind = "quadratic";
  base.interaction.alpha = 0.5;
  base.sigma = 0.5;
  base.sigma0 = 0.5;
  base.particles = 16;
  base.aux_particles = 16;
  base.ensembles = 2;
  base.dt = 5e-3;
  base.t_final = 0.5;
  base.observe_every = 10;
  base.realizations = 3;
  base.seed = 4242;
  base.coupling = "synchronous";
  base.initial_a.kind = "gaussian";
  base.initial_b.kind = "gaussian";
  base.fit_column = "w2";

  const ChaosScaling sweep = chaos_scaling(base, {8, 16, 32});
  REQUIRE(sweep.points.size() == 3);
  CHECK(sweep.points[0].particles == 8);
  CHECK(sweep.points[2].particles == 32);
  for (const ChaosPoint& p : sweep.points) {
    CHECK(p.plateau > 0.0);
    CHECK(std::isfinite(p.tail_se));
  }
  CHECK(std::isfinite(sweep.fit.slope));
  CHECK(sweep.fit.n == 3);

  CHECK_THROWS_AS(chaos_scaling(base, {8, 16}), std::invalid_argument);
}

TEST_CASE("config files load from disk") {
  const fs::path dir = fresh_dir("cfgload");
  const fs::path file = dir / "exp.json";
  std::ofstream(file) << R"({
    // comments are allowed in config files
    "name": "from_disk", "dim": 1, "ensembles": 1, "sigma0": 1.0,
    "dt": 0.001, "t_final": 0.01, "observe_every": 10
  })";
  const ExperimentConfig cfg = load_config(file.string());
  CHECK(cfg.name == "from_disk");
  CHECK(cfg.t_final == doctest::Approx(0.01));
  CHECK_THROWS_AS(load_config((dir / "missing.json").string()), ConfigError);
}
