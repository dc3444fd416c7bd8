#include "mkvcn/harness.hpp"

#include "mkvcn/errors.hpp"
#include "mkvcn/ot.hpp"
#include "mkvcn/stationary.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mkvcn {

using json = nlohmann::json;

// ---------------------------------------------------------------- rate fits

namespace {

double tail_median(const Eigen::VectorXd& values) {
  const Eigen::Index n = values.size();
  const Eigen::Index tail = std::max<Eigen::Index>(3, n / 5);
  std::vector<double> tv(values.data() + (n - tail), values.data() + n);
  return median(std::move(tv));
}

}  // namespace

RateFit fit_rate(const Eigen::VectorXd& times, const Eigen::VectorXd& values,
                 std::optional<double> plateau_override) {
  const Eigen::Index n = times.size();
  if (values.size() != n)
    throw std::invalid_argument("fit_rate: times/values length mismatch");
  if (n < 10) throw FitImpossibleError("fit_rate: need at least 10 points");

  const double plateau =
      std::max(0.0, plateau_override ? *plateau_override : tail_median(values));

  // Leading run of points clearly above the floor.
  Eigen::Index k = 0;
  while (k < n && values[k] > 3.0 * plateau && values[k] > 0.0) ++k;
  if (k < 10)
    throw FitImpossibleError("fit_rate: admissible window has " +
                             std::to_string(k) + " points, need 10");

  Eigen::VectorXd ly(k);
  for (Eigen::Index i = 0; i < k; ++i) ly[i] = std::log(values[i] - plateau);
  const LineFit lf = ols_line(times.head(k), ly);

  RateFit out;
  out.rate = -lf.slope;
  out.plateau = plateau;
  out.intercept = lf.intercept;
  out.r2 = lf.r2;
  out.rate_se = lf.slope_se;
  out.points_used = int(k);
  out.window_lo = times[0];
  out.window_hi = times[k - 1];
  return out;
}

LineFit regress_loglog(const std::vector<double>& ns,
                       const std::vector<double>& plateaus) {
  if (ns.size() != plateaus.size())
    throw std::invalid_argument("regress_loglog: length mismatch");
  if (ns.size() < 3)
    throw std::invalid_argument("regress_loglog: need at least 3 sizes");
  if (std::set<double>(ns.begin(), ns.end()).size() != ns.size())
    throw std::invalid_argument("regress_loglog: sizes must be distinct");
  Eigen::VectorXd x(Eigen::Index(ns.size())), y(Eigen::Index(ns.size()));
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!(ns[i] > 0) || !(plateaus[i] > 0))
      throw std::invalid_argument("regress_loglog: sizes and plateaus must be positive");
    x[Eigen::Index(i)] = std::log(ns[i]);
    y[Eigen::Index(i)] = std::log(plateaus[i]);
  }
  return ols_line(x, y);
}

// ------------------------------------------------------------- json helpers

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw ConfigError("field '" + field + "': " + why);
}

template <class T>
T field_as(const json& j, const std::string& field) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    bad_field(field, e.what());
  }
}

template <class T>
T take(json& j, const std::string& field, T fallback) {
  if (!j.contains(field)) return fallback;
  T out = field_as<T>(j.at(field), field);
  j.erase(field);
  return out;
}

Eigen::VectorXd take_vector(json& j, const std::string& field) {
  if (!j.contains(field)) return {};
  const json v = j.at(field);
  j.erase(field);
  if (v.is_number()) {
    Eigen::VectorXd out(1);
    out[0] = v.get<double>();
    return out;
  }
  if (!v.is_array()) bad_field(field, "expected a number or an array");
  Eigen::VectorXd out(Eigen::Index(v.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = field_as<double>(v[std::size_t(i)], field);
  return out;
}

// number -> 1x1; flat array -> diagonal; array of arrays -> full matrix
Eigen::MatrixXd take_matrix(json& j, const std::string& field) {
  if (!j.contains(field)) return {};
  const json v = j.at(field);
  j.erase(field);
  if (v.is_number()) {
    Eigen::MatrixXd out(1, 1);
    out(0, 0) = v.get<double>();
    return out;
  }
  if (!v.is_array() || v.empty()) bad_field(field, "expected number or array");
  if (v[0].is_number()) {
    Eigen::VectorXd diag(Eigen::Index(v.size()));
    for (Eigen::Index i = 0; i < diag.size(); ++i)
      diag[i] = field_as<double>(v[std::size_t(i)], field);
    return diag.asDiagonal();
  }
  const auto rows = Eigen::Index(v.size());
  const auto cols = Eigen::Index(v[0].size());
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (Eigen::Index(v[std::size_t(r)].size()) != cols)
      bad_field(field, "ragged matrix rows");
    for (Eigen::Index c = 0; c < cols; ++c)
      out(r, c) = field_as<double>(v[std::size_t(r)][std::size_t(c)], field);
  }
  return out;
}

void reject_unknown(const json& j, const std::string& where) {
  if (!j.is_object()) bad_field(where, "expected an object");
  if (!j.empty()) {
    std::string keys;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!keys.empty()) keys += ", ";
      keys += it.key();
    }
    bad_field(where, "unknown keys: " + keys);
  }
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  if (m.rows() == 1 && m.cols() == 1) return m(0, 0);
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

InitialConfig parse_initial(json j, const std::string& where) {
  InitialConfig ic;
  ic.kind = take<std::string>(j, "kind", ic.kind);
  ic.mean = take_vector(j, "mean");
  ic.cov = take_matrix(j, "cov");
  ic.center_cov = take_matrix(j, "center_cov");
  ic.point_a = take_vector(j, "point_a");
  ic.point_b = take_vector(j, "point_b");
  ic.weight_a = take<double>(j, "weight_a", ic.weight_a);
  ic.share_center = take<bool>(j, "share_center", ic.share_center);
  reject_unknown(j, where);
  return ic;
}

json initial_to_json(const InitialConfig& ic) {
  json j{{"kind", ic.kind}, {"share_center", ic.share_center}};
  if (ic.mean.size()) j["mean"] = vector_to_json(ic.mean);
  if (ic.cov.size()) j["cov"] = matrix_to_json(ic.cov);
  if (ic.center_cov.size()) j["center_cov"] = matrix_to_json(ic.center_cov);
  if (ic.point_a.size()) j["point_a"] = vector_to_json(ic.point_a);
  if (ic.point_b.size()) j["point_b"] = vector_to_json(ic.point_b);
  if (ic.kind == "two_point_mixture") j["weight_a"] = ic.weight_a;
  return j;
}

std::string default_fit_column(const ExperimentConfig& cfg) {
  if (!cfg.fit_column.empty()) return cfg.fit_column;
  if (cfg.ensembles == 2) return cfg.dim == 1 ? "w2" : "paired_rms";
  return "spread_a";
}

void validate_config(const ExperimentConfig& c) {
  std::vector<std::string> errs;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };

  need(c.dim >= 1 && c.dim <= 16, "dim: must be in [1, 16]");
  const bool pot_known = c.potential.kind == "quadratic" ||
                         c.potential.kind == "double_well_1d" ||
                         c.potential.kind == "radial_double_well" ||
                         c.potential.kind == "custom_polynomial";
  need(pot_known, "potential.kind: unknown '" + c.potential.kind + "'");
  if (c.potential.kind == "quadratic")
    need(c.potential.curvature > 0, "potential.curvature: must be > 0");
  if (c.potential.kind == "double_well_1d")
    need(c.dim == 1, "potential.kind: double_well_1d needs dim = 1");
  if (c.potential.kind == "radial_double_well")
    need(c.dim >= 2, "potential.kind: radial_double_well needs dim >= 2");
  if (c.potential.kind == "custom_polynomial")
    need(!c.potential.coeffs.empty(), "potential.coeffs: required");
  need(c.potential.box > 0, "potential.box: must be > 0");
  need(c.potential.center.size() == 0 || c.potential.center.size() == c.dim,
       "potential.center: dimension mismatch");

  need(c.interaction.kind == "none" || c.interaction.kind == "quadratic",
       "interaction.kind: unknown '" + c.interaction.kind + "'");
  need(c.interaction.alpha >= 0, "interaction.alpha: must be >= 0");

  need(c.sigma >= 0, "sigma: must be >= 0");
  need(c.sigma0 >= 0, "sigma0: must be >= 0");
  need(c.particles >= 1, "particles: must be >= 1");
  need(c.aux_particles >= 0, "aux_particles: must be >= 0");
  need(c.ensembles == 1 || c.ensembles == 2, "ensembles: must be 1 or 2");
  need(c.dt > 0, "dt: must be > 0");
  need(c.t_final > 0, "t_final: must be > 0");
  need(c.observe_every >= 1, "observe_every: must be >= 1");
  need(c.realizations >= 1, "realizations: must be >= 1");
  need(c.workers >= 1 && c.workers <= 128, "workers: must be in [1, 128]");

  const double steps = c.t_final / c.dt;
  const double rsteps = std::round(steps);
  if (std::abs(steps - rsteps) > 1e-9 * std::max(1.0, steps))
    errs.push_back("t_final: must be a multiple of dt");
  else if (std::fmod(rsteps, double(c.observe_every)) != 0.0)
    errs.push_back("observe_every: must divide the step count");

  const bool coup_known =
      c.coupling == "independent" || c.coupling == "synchronous" ||
      c.coupling == "reflection_1d" || c.coupling == "mean_reflection";
  need(coup_known, "coupling.mode: unknown '" + c.coupling + "'");
  const bool reflective =
      c.coupling == "reflection_1d" || c.coupling == "mean_reflection";
  if (c.coupling == "reflection_1d")
    need(c.dim == 1, "coupling.mode: reflection_1d needs dim = 1");
  if (reflective)
    need(c.ensembles == 2, "coupling.mode: reflection modes need 2 ensembles");
  if (c.coupling_delta) need(*c.coupling_delta > 0, "coupling.delta: must be > 0");

  const bool fn_known = c.functional == "none" || c.functional == "x" ||
                        c.functional == "x2" || c.functional == "variance";
  need(fn_known, "functional: unknown '" + c.functional + "'");

  const double msig = c.metric_sigma0.value_or(c.sigma0);
  if (c.ensembles == 2)
    need(msig > 0, "sigma0: coupled-distance observers need a positive "
                   "metric sigma0 (set metric.sigma0 to override)");
  if (c.metric_diff) need(*c.metric_diff > 0, "metric.diff: must be > 0");

  const double grid = c.dt * double(c.observe_every);
  double prev = -1;
  for (double t : c.snapshot_times) {
    if (!(t >= 0 && t <= c.t_final)) {
      errs.push_back("snapshot_times: must lie in [0, t_final]");
      break;
    }
    if (std::abs(t / grid - std::round(t / grid)) > 1e-9) {
      errs.push_back("snapshot_times: must lie on the observation grid");
      break;
    }
    if (t <= prev) {
      errs.push_back("snapshot_times: must be strictly increasing");
      break;
    }
    prev = t;
  }

  auto check_initial = [&](const InitialConfig& ic, const std::string& who) {
    const bool known = ic.kind == "gaussian" || ic.kind == "two_point_mixture" ||
                       ic.kind == "dirac" || ic.kind == "gaussian_random_center";
    need(known, who + ".kind: unknown '" + ic.kind + "'");
    if (ic.kind == "two_point_mixture") {
      need(ic.point_a.size() == c.dim && ic.point_b.size() == c.dim,
           who + ".point_a/point_b: dimension mismatch");
      need(ic.weight_a >= 0 && ic.weight_a <= 1,
           who + ".weight_a: must be in [0, 1]");
    }
  };
  check_initial(c.initial_a, "initial_a");
  if (c.ensembles == 2) check_initial(c.initial_b, "initial_b");

  if (!errs.empty()) {
    std::string msg = "invalid config";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  ExperimentConfig c;
  c.name = take<std::string>(j, "name", c.name);
  c.dim = take<int>(j, "dim", c.dim);

  if (j.contains("potential")) {
    json p = j.at("potential");
    j.erase("potential");
    c.potential.kind = take<std::string>(p, "kind", c.potential.kind);
    c.potential.curvature = take<double>(p, "curvature", c.potential.curvature);
    c.potential.center = take_vector(p, "center");
    c.potential.box = take<double>(p, "box", c.potential.box);
    if (p.contains("coeffs")) {
      json cc = p.at("coeffs");
      p.erase("coeffs");
      if (!cc.is_array()) bad_field("potential.coeffs", "expected array of arrays");
      for (auto& row : cc) {
        Eigen::VectorXd v(Eigen::Index(row.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i)
          v[i] = field_as<double>(row[std::size_t(i)], "potential.coeffs");
        c.potential.coeffs.push_back(std::move(v));
      }
    }
    reject_unknown(p, "potential");
  }

  if (j.contains("interaction")) {
    json w = j.at("interaction");
    j.erase("interaction");
    c.interaction.kind = take<std::string>(w, "kind", c.interaction.kind);
    c.interaction.alpha = take<double>(w, "alpha", c.interaction.alpha);
    reject_unknown(w, "interaction");
  }

  c.sigma = take<double>(j, "sigma", c.sigma);
  c.sigma0 = take<double>(j, "sigma0", c.sigma0);
  c.particles = take<int>(j, "particles", c.particles);
  c.aux_particles = take<int>(j, "aux_particles", c.aux_particles);
  c.ensembles = take<int>(j, "ensembles", c.ensembles);
  c.dt = take<double>(j, "dt", c.dt);
  c.t_final = take<double>(j, "t_final", c.t_final);
  c.observe_every = take<long>(j, "observe_every", c.observe_every);
  c.realizations = take<int>(j, "realizations", c.realizations);
  c.seed = take<std::uint64_t>(j, "seed", c.seed);

  if (j.contains("coupling")) {
    json k = j.at("coupling");
    j.erase("coupling");
    c.coupling = take<std::string>(k, "mode", c.coupling);
    if (k.contains("delta")) {
      const json d = k.at("delta");
      k.erase("delta");
      if (d.is_string()) {
        if (d.get<std::string>() != "auto")
          bad_field("coupling.delta", "expected a number or \"auto\"");
      } else {
        c.coupling_delta = field_as<double>(d, "coupling.delta");
      }
    }
    reject_unknown(k, "coupling");
  }

  if (j.contains("initial_a")) {
    c.initial_a = parse_initial(j.at("initial_a"), "initial_a");
    j.erase("initial_a");
  }
  if (j.contains("initial_b")) {
    c.initial_b = parse_initial(j.at("initial_b"), "initial_b");
    j.erase("initial_b");
  }
  c.pair_initials = take<bool>(j, "pair_initials", c.pair_initials);
  c.functional = take<std::string>(j, "functional", c.functional);

  if (j.contains("metric")) {
    json m = j.at("metric");
    j.erase("metric");
    if (m.contains("sigma0") && !m.at("sigma0").is_null())
      c.metric_sigma0 = field_as<double>(m.at("sigma0"), "metric.sigma0");
    m.erase("sigma0");
    if (m.contains("diff") && !m.at("diff").is_null())
      c.metric_diff = field_as<double>(m.at("diff"), "metric.diff");
    m.erase("diff");
    reject_unknown(m, "metric");
  }

  c.fit_column = take<std::string>(j, "fit_column", c.fit_column);
  c.workers = take<int>(j, "workers", c.workers);
  c.output_dir = take<std::string>(j, "output_dir", c.output_dir);
  c.emit_barycenters = take<bool>(j, "emit_barycenters", c.emit_barycenters);
  c.snapshot_times = take<std::vector<double>>(j, "snapshot_times", {});

  reject_unknown(j, "config");
  validate_config(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["dim"] = c.dim;
  json p{{"kind", c.potential.kind}, {"box", c.potential.box}};
  if (c.potential.kind == "quadratic") p["curvature"] = c.potential.curvature;
  if (c.potential.center.size()) p["center"] = vector_to_json(c.potential.center);
  if (!c.potential.coeffs.empty()) {
    json cc = json::array();
    for (const auto& row : c.potential.coeffs) cc.push_back(vector_to_json(row));
    p["coeffs"] = cc;
  }
  j["potential"] = p;
  json w{{"kind", c.interaction.kind}};
  if (c.interaction.kind == "quadratic") w["alpha"] = c.interaction.alpha;
  j["interaction"] = w;
  j["sigma"] = c.sigma;
  j["sigma0"] = c.sigma0;
  j["particles"] = c.particles;
  j["aux_particles"] = c.aux_particles;
  j["ensembles"] = c.ensembles;
  j["dt"] = c.dt;
  j["t_final"] = c.t_final;
  j["observe_every"] = c.observe_every;
  j["realizations"] = c.realizations;
  j["seed"] = c.seed;
  json k{{"mode", c.coupling}};
  k["delta"] = c.coupling_delta ? json(*c.coupling_delta) : json("auto");
  j["coupling"] = k;
  j["initial_a"] = initial_to_json(c.initial_a);
  if (c.ensembles == 2) j["initial_b"] = initial_to_json(c.initial_b);
  j["pair_initials"] = c.pair_initials;
  j["functional"] = c.functional;
  json m;
  m["sigma0"] = c.metric_sigma0 ? json(*c.metric_sigma0) : json();
  m["diff"] = c.metric_diff ? json(*c.metric_diff) : json();
  j["metric"] = m;
  j["fit_column"] = c.fit_column;
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir;
  j["emit_barycenters"] = c.emit_barycenters;
  j["snapshot_times"] = c.snapshot_times;
  return j.dump(2);
}

// ------------------------------------------------------------ model binding

PotentialSpec build_potential(const PotentialConfig& pc, int dim) {
  if (pc.kind == "quadratic")
    return make_quadratic(dim, pc.curvature, pc.center, pc.box);
  if (pc.kind == "double_well_1d") return builtin_double_well_1d(pc.box);
  if (pc.kind == "radial_double_well")
    return make_radial_double_well(dim, pc.box);
  if (pc.kind == "custom_polynomial")
    return make_custom_polynomial(pc.coeffs, pc.box);
  throw ConfigError("potential.kind: unknown '" + pc.kind + "'");
}

InteractionSpec build_interaction(const InteractionConfig& ic) {
  if (ic.kind == "none") return make_no_interaction();
  if (ic.kind == "quadratic") return make_quadratic_interaction(ic.alpha);
  throw ConfigError("interaction.kind: unknown '" + ic.kind + "'");
}

InitialLaw build_initial(const InitialConfig& ic, int dim) {
  InitialLaw law;
  auto widen = [dim](const Eigen::VectorXd& v) {
    if (v.size() == 1 && dim > 1)
      return Eigen::VectorXd(Eigen::VectorXd::Constant(dim, v[0]));
    return v;
  };
  law.mean = widen(ic.mean);
  law.cov = ic.cov;
  law.center_cov = ic.center_cov;
  law.point_a = widen(ic.point_a);
  law.point_b = widen(ic.point_b);
  law.weight_a = ic.weight_a;
  law.share_center = ic.share_center;
  if (ic.kind == "gaussian") law.kind = InitialLaw::Kind::gaussian;
  else if (ic.kind == "two_point_mixture") law.kind = InitialLaw::Kind::two_point_mixture;
  else if (ic.kind == "dirac") law.kind = InitialLaw::Kind::dirac;
  else if (ic.kind == "gaussian_random_center")
    law.kind = InitialLaw::Kind::gaussian_random_center;
  else throw ConfigError("initial.kind: unknown '" + ic.kind + "'");
  return law;
}

// ------------------------------------------------------------ run machinery

namespace {

struct RunContext {
  const ExperimentConfig* cfg = nullptr;
  PotentialSpec v;
  InteractionSpec w;
  NoisePlan plan;
  std::optional<DistortedMetric> metric;
  CouplingMode mode;
  std::vector<Observer> observers;
  std::vector<double> bounds;  // segment boundaries: 0, snapshots..., t_final
  GeneratorFunctional functional;
  bool use_functional = false;
};

struct Outcome {
  TrajectoryRecord rec;
  std::vector<Eigen::MatrixXd> snap_a, snap_b;
};

GeneratorFunctional make_functional(const std::string& name, int dim) {
  if (name == "x")
    return linear_functional(
        [](const Eigen::VectorXd& x) { return x[0]; },
        [dim](const Eigen::VectorXd&) {
          Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
          g[0] = 1;
          return g;
        },
        [](const Eigen::VectorXd&) { return 0.0; });
  if (name == "x2")
    return linear_functional(
        [](const Eigen::VectorXd& x) { return x.squaredNorm(); },
        [](const Eigen::VectorXd& x) { return Eigen::VectorXd(2.0 * x); },
        [dim](const Eigen::VectorXd&) { return 2.0 * dim; });
  if (name == "variance") return variance_functional();
  throw ConfigError("functional: unknown '" + name + "'");
}

double spread_of(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd bar = x.colwise().mean();
  return (x.rowwise() - bar).rowwise().squaredNorm().mean();
}

void build_observers(RunContext& ctx) {
  const ExperimentConfig& c = *ctx.cfg;
  auto& obs = ctx.observers;
  obs.push_back({"spread_a", [](const CoupledEnsembles& ce, double) {
                   return spread_of(ce.a.x);
                 }});
  obs.push_back({"m2_a", [](const CoupledEnsembles& ce, double) {
                   return ce.a.x.rowwise().squaredNorm().mean();
                 }});
  for (int k = 0; k < c.dim; ++k)
    obs.push_back({"bary_a_" + std::to_string(k),
                   [k](const CoupledEnsembles& ce, double) {
                     return ce.a.x.col(k).mean();
                   }});
  if (c.ensembles == 2) {
    obs.push_back({"spread_b", [](const CoupledEnsembles& ce, double) {
                     return spread_of(ce.b->x);
                   }});
    obs.push_back({"m2_b", [](const CoupledEnsembles& ce, double) {
                     return ce.b->x.rowwise().squaredNorm().mean();
                   }});
    for (int k = 0; k < c.dim; ++k)
      obs.push_back({"bary_b_" + std::to_string(k),
                     [k](const CoupledEnsembles& ce, double) {
                       return ce.b->x.col(k).mean();
                     }});
    obs.push_back({"paired_rms", [](const CoupledEnsembles& ce, double) {
                     return std::sqrt(
                         (ce.a.x - ce.b->x).rowwise().squaredNorm().mean());
                   }});
    const DistortedMetric* m = &*ctx.metric;
    obs.push_back({"df_paired", [m](const CoupledEnsembles& ce, double) {
                     return df_paired(*m, ce.a.x, ce.b->x);
                   }});
    obs.push_back({"f_mean_dist", [m](const CoupledEnsembles& ce, double) {
                     const double r = (ce.a.x.colwise().mean() -
                                       ce.b->x.colwise().mean())
                                          .norm();
                     return eval_f(*m, r);
                   }});
    if (c.dim == 1) {
      obs.push_back({"w1", [](const CoupledEnsembles& ce, double) {
                       return w_p_1d(ce.a.x.col(0), ce.b->x.col(0), 1.0);
                     }});
      obs.push_back({"w2", [](const CoupledEnsembles& ce, double) {
                       return w_p_1d(ce.a.x.col(0), ce.b->x.col(0), 2.0);
                     }});
    }
  }
  if (ctx.use_functional) {
    const RunContext* p = &ctx;
    obs.push_back({"F", [p](const CoupledEnsembles& ce, double) {
                     return functional_value(p->functional, ce.a.x);
                   }});
    obs.push_back({"MF", [p](const CoupledEnsembles& ce, double) {
                     return generator_apply(p->functional, ce.a.x, p->v, p->w,
                                            p->plan.sigma, p->plan.sigma0);
                   }});
  }
}

CoupledEnsembles make_initial_state(const RunContext& ctx, int realization) {
  const ExperimentConfig& c = *ctx.cfg;
  CoupledEnsembles ce;
  ce.realization = std::uint32_t(realization);
  ce.mode = ctx.mode;
  const InitialLaw la = build_initial(c.initial_a, c.dim);
  const Channel center_a = la.share_center ? Channel::init_center_shared
                                           : Channel::init_center_a;
  ce.a = sample_initial(la, c.particles, c.dim, ctx.plan,
                        std::uint32_t(realization), Channel::init_a, center_a);
  if (c.ensembles == 2) {
    const InitialLaw lb = build_initial(c.initial_b, c.dim);
    const Channel center_b = lb.share_center ? Channel::init_center_shared
                                             : Channel::init_center_b;
    ce.b = sample_initial(lb, c.particles, c.dim, ctx.plan,
                          std::uint32_t(realization), Channel::init_b, center_b);
    if (c.pair_initials) optimal_initial_pairing(ce.a, *ce.b);
  }
  if (c.aux_particles > 0) {
    // The mean-field proxy follows ensemble a's law (including its center
    // channel) with its own conditionally independent draws.
    ce.aux = sample_initial(la, c.aux_particles, c.dim, ctx.plan,
                            std::uint32_t(realization), Channel::init_aux,
                            center_a);
  }
  return ce;
}

Outcome run_one(const RunContext& ctx, int realization) {
  const ExperimentConfig& c = *ctx.cfg;
  CoupledEnsembles ce = make_initial_state(ctx, realization);

  Outcome out;
  auto snapshot = [&] {
    out.snap_a.push_back(ce.a.x);
    if (ce.b) out.snap_b.push_back(ce.b->x);
  };

  const long total_steps = std::lround(c.t_final / c.dt);
  const long rows = total_steps / c.observe_every + 1;
  TrajectoryRecord& rec = out.rec;
  rec.times.resize(rows);
  for (const auto& o : ctx.observers) rec.names.push_back(o.name);
  rec.columns.resize(rows, Eigen::Index(ctx.observers.size()));

  long off = 0;
  auto absorb = [&](const TrajectoryRecord& seg, bool first) {
    const long skip = first ? 0 : 1;
    for (long i = skip; i < seg.observed; ++i) {
      rec.times[off] = seg.times[i];
      rec.columns.row(off) = seg.columns.row(i);
      ++off;
    }
    rec.observed = int(off);
    for (const auto& warn : seg.warnings)
      if (std::find(rec.warnings.begin(), rec.warnings.end(), warn) ==
          rec.warnings.end())
        rec.warnings.push_back(warn);
    rec.box_excursions = seg.box_excursions;
    rec.max_abs_coord = seg.max_abs_coord;
  };

  if (!ctx.bounds.empty() && ctx.bounds.front() == 0.0 &&
      !c.snapshot_times.empty() && c.snapshot_times.front() == 0.0)
    snapshot();

  bool first = true;
  double prev = 0.0;
  for (double t : ctx.bounds) {
    if (t <= 0.0) continue;
    try {
      const TrajectoryRecord seg = run(ce, ctx.v, ctx.w, ctx.plan, t - prev,
                                       c.observe_every, ctx.observers);
      absorb(seg, first);
    } catch (BlowUpError& e) {
      absorb(e.partial, first);
      rec.blew_up = true;
      rec.blow_particle = e.particle;
      rec.blow_time = e.time;
      BlowUpError out_err(e.what(), e.particle, e.time);
      out_err.partial = rec;
      throw out_err;
    }
    first = false;
    prev = t;
    if (std::binary_search(c.snapshot_times.begin(), c.snapshot_times.end(), t))
      snapshot();
  }
  return out;
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_partial_record(const std::filesystem::path& path,
                          const TrajectoryRecord& rec) {
  std::ofstream out(path);
  out << "t";
  for (const auto& n : rec.names) out << ',' << n;
  out << '\n';
  for (int i = 0; i < rec.observed; ++i) {
    out << g17(rec.times[i]);
    for (Eigen::Index j = 0; j < rec.columns.cols(); ++j)
      out << ',' << g17(rec.columns(i, j));
    out << '\n';
  }
}

json derived_block(const ExperimentResult& res) {
  json d;
  if (res.metric) {
    d["R0"] = res.metric->R0;
    d["R1"] = res.metric->R1;
    d["ell"] = res.metric->ell;
    d["phi_R0"] = res.metric->phi_R0;
    d["diff"] = res.metric->diff;
    d["c"] = res.rate_c_value;
  }
  const PotentialSpec v = build_potential(res.config.potential, res.config.dim);
  const InteractionSpec w = build_interaction(res.config.interaction);
  d["beta"] = v.convexity_modulus ? json(*v.convexity_modulus) : json();
  d["L_V"] = v.lipschitz;
  d["L_W"] = w.lipschitz;
  d["delta"] = res.delta_used;
  return d;
}

void write_failure_outputs(const ExperimentConfig& cfg, double delta_used,
                           const std::exception_ptr& err) {
  if (cfg.output_dir.empty()) return;
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  json man;
  man["name"] = cfg.name;
  man["config"] = json::parse(config_to_json(cfg));
  man["derived"] = json{{"delta", delta_used}};
  man["blew_up"] = true;
  try {
    std::rethrow_exception(err);
  } catch (const BlowUpError& b) {
    man["error"] = b.what();
    man["blow_particle"] = b.particle;
    man["blow_time"] = b.time;
    write_partial_record(fs::path(cfg.output_dir) / "series_partial.csv",
                         b.partial);
  } catch (const std::exception& e) {
    man["error"] = e.what();
  }
  std::ofstream(fs::path(cfg.output_dir) / "manifest.json") << man.dump(2) << '\n';
}

}  // namespace

Eigen::VectorXd result_mean(const ExperimentResult& res, const std::string& name) {
  for (std::size_t j = 0; j < res.observers.size(); ++j)
    if (res.observers[j] == name) return res.mean.col(Eigen::Index(j));
  throw std::invalid_argument("result has no observer '" + name + "'");
}

Eigen::VectorXd result_se(const ExperimentResult& res, const std::string& name) {
  for (std::size_t j = 0; j < res.observers.size(); ++j)
    if (res.observers[j] == name) return res.se.col(Eigen::Index(j));
  throw std::invalid_argument("result has no observer '" + name + "'");
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);

  RunContext ctx;
  ctx.cfg = &cfg;
  ctx.v = build_potential(cfg.potential, cfg.dim);
  ctx.w = build_interaction(cfg.interaction);
  ctx.plan = NoisePlan{cfg.seed, cfg.dt, cfg.sigma, cfg.sigma0};

  const double msig = cfg.metric_sigma0.value_or(cfg.sigma0);
  if (msig > 0) ctx.metric = build_metric(ctx.v, msig, 1e-3, cfg.metric_diff);

  ctx.mode.kind = cfg.coupling == "independent"
                      ? CouplingMode::Kind::independent
                  : cfg.coupling == "synchronous"
                      ? CouplingMode::Kind::synchronous
                  : cfg.coupling == "reflection_1d"
                      ? CouplingMode::Kind::reflection_1d
                      : CouplingMode::Kind::mean_reflection;

  ExperimentResult res;
  res.config = cfg;
  res.metric = ctx.metric;
  res.rate_c_value = ctx.metric ? rate_c(*ctx.metric, ctx.w) : 0.0;

  // Reflection scale: the blend-to-synchronous half-zone (delta / 2) must
  // cover the per-step displacement of the reflected difference process,
  // 2 sigma0 sqrt(dt); otherwise discrete paths step across the capture zone
  // without coalescing and the crossings pump the coupled distance back up.
  const bool reflective = ctx.mode.kind == CouplingMode::Kind::reflection_1d ||
                          ctx.mode.kind == CouplingMode::Kind::mean_reflection;
  if (reflective) {
    if (cfg.coupling_delta) {
      ctx.mode.delta = *cfg.coupling_delta;
    } else {
      const double kick = 4.0 * cfg.sigma0 * std::sqrt(cfg.dt);
      ctx.mode.delta = kick > 0 ? kick : 1e-3;
    }
    res.delta_used = ctx.mode.delta;
  }

  if (cfg.functional != "none") {
    ctx.functional = make_functional(cfg.functional, cfg.dim);
    ctx.use_functional = true;
  }
  build_observers(ctx);

  ctx.bounds = cfg.snapshot_times;
  if (ctx.bounds.empty() || ctx.bounds.back() < cfg.t_final)
    ctx.bounds.push_back(cfg.t_final);

  const int R = cfg.realizations;
  std::vector<Outcome> outcomes{std::size_t(R)};
  std::vector<std::exception_ptr> errors{std::size_t(R)};
  std::atomic<int> next{0};
  auto work = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= R) return;
      try {
        outcomes[std::size_t(r)] = run_one(ctx, r);
      } catch (...) {
        errors[std::size_t(r)] = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(cfg.workers, 1, R);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  for (int r = 0; r < R; ++r)
    if (errors[std::size_t(r)]) {
      write_failure_outputs(cfg, res.delta_used, errors[std::size_t(r)]);
      std::rethrow_exception(errors[std::size_t(r)]);
    }

  // Deterministic reduction in realization order.
  res.times = outcomes[0].rec.times;
  res.observers = outcomes[0].rec.names;
  const Eigen::Index T = res.times.size();
  const Eigen::Index C = Eigen::Index(res.observers.size());
  res.mean.resize(T, C);
  res.se.resize(T, C);
  for (Eigen::Index i = 0; i < T; ++i)
    for (Eigen::Index j = 0; j < C; ++j) {
      double acc = 0;
      for (int r = 0; r < R; ++r) acc += outcomes[std::size_t(r)].rec.columns(i, j);
      const double mean = acc / R;
      double ss = 0;
      for (int r = 0; r < R; ++r) {
        const double d = outcomes[std::size_t(r)].rec.columns(i, j) - mean;
        ss += d * d;
      }
      res.mean(i, j) = mean;
      res.se(i, j) = R > 1 ? std::sqrt(ss / (R - 1) / R) : 0.0;
    }

  res.snapshots.times.resize(Eigen::Index(cfg.snapshot_times.size()));
  for (Eigen::Index i = 0; i < res.snapshots.times.size(); ++i)
    res.snapshots.times[i] = cfg.snapshot_times[std::size_t(i)];
  res.records.reserve(std::size_t(R));
  for (auto& o : outcomes) {
    res.total_box_excursions += o.rec.box_excursions;
    for (const auto& warn : o.rec.warnings)
      if (std::find(res.warnings.begin(), res.warnings.end(), warn) ==
          res.warnings.end())
        res.warnings.push_back(warn);
    res.records.push_back(std::move(o.rec));
    res.snapshots.a.push_back(std::move(o.snap_a));
    res.snapshots.b.push_back(std::move(o.snap_b));
  }

  if (!cfg.output_dir.empty()) write_outputs(res);
  return res;
}

void write_outputs(const ExperimentResult& res) {
  const ExperimentConfig& cfg = res.config;
  if (cfg.output_dir.empty())
    throw std::invalid_argument("write_outputs: config has no output_dir");
  namespace fs = std::filesystem;
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  json man;
  man["name"] = cfg.name;
  man["version"] = "mkvcn 1.0.0";
  man["config"] = json::parse(config_to_json(cfg));
  man["derived"] = derived_block(res);
  man["warnings"] = res.warnings;
  man["box_excursions"] = res.total_box_excursions;
  man["blew_up"] = false;
  std::ofstream(dir / "manifest.json") << man.dump(2) << '\n';

  std::ofstream csv(dir / "series.csv");
  csv << "t";
  for (const auto& n : res.observers) csv << ',' << n << "_mean," << n << "_se";
  csv << '\n';
  for (Eigen::Index i = 0; i < res.times.size(); ++i) {
    csv << g17(res.times[i]);
    for (Eigen::Index j = 0; j < Eigen::Index(res.observers.size()); ++j)
      csv << ',' << g17(res.mean(i, j)) << ',' << g17(res.se(i, j));
    csv << '\n';
  }
  csv.close();

  json fit;
  const std::string col = default_fit_column(cfg);
  fit["column"] = col;
  if (col == "none") {
    fit["skipped"] = true;
  } else {
    try {
      const RateFit rf = fit_rate(res.times, result_mean(res, col));
      fit["rate"] = rf.rate;
      fit["plateau"] = rf.plateau;
      fit["intercept"] = rf.intercept;
      fit["r2"] = rf.r2;
      fit["rate_se"] = rf.rate_se;
      fit["points"] = rf.points_used;
      fit["window"] = json::array({rf.window_lo, rf.window_hi});
    } catch (const std::exception& e) {
      fit["error"] = e.what();
    }
  }
  std::ofstream(dir / "rate_fit.json") << fit.dump(2) << '\n';

  std::ofstream gp(dir / "plots.gp");
  gp << "set datafile separator ','\n"
     << "set xlabel 't'\n"
     << "set logscale y\n"
     << "set key outside\n"
     << "plot \\\n";
  for (std::size_t j = 0; j < res.observers.size(); ++j) {
    gp << "  'series.csv' using 1:" << 2 * j + 2 << ':' << 2 * j + 3
       << " with yerrorlines title '" << res.observers[j] << "'";
    gp << (j + 1 < res.observers.size() ? ", \\\n" : "\n");
  }
  gp.close();

  if (cfg.emit_barycenters) {
    std::ofstream bc(dir / "barycenters.csv");
    bc << "t";
    for (int r = 0; r < cfg.realizations; ++r)
      for (int k = 0; k < cfg.dim; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "r%03d_c%d", r, k);
        bc << ',' << name;
      }
    bc << '\n';
    std::vector<Eigen::VectorXd> cols;
    for (int r = 0; r < cfg.realizations; ++r)
      for (int k = 0; k < cfg.dim; ++k)
        cols.push_back(res.records[std::size_t(r)].column(
            "bary_a_" + std::to_string(k)));
    for (Eigen::Index i = 0; i < res.times.size(); ++i) {
      bc << g17(res.times[i]);
      for (const auto& c : cols) bc << ',' << g17(c[i]);
      bc << '\n';
    }
  }
}

ChaosScaling chaos_scaling(const ExperimentConfig& base,
                           const std::vector<int>& particle_counts) {
  if (particle_counts.size() < 3)
    throw std::invalid_argument("chaos_scaling: need at least 3 particle counts");
  ChaosScaling out;
  std::vector<double> ns, plateaus;
  for (int n : particle_counts) {
    ExperimentConfig cfg = base;
    cfg.particles = n;
    if (base.aux_particles > 0) cfg.aux_particles = n;
    cfg.name = base.name + "_n" + std::to_string(n);
    if (!base.output_dir.empty())
      cfg.output_dir =
          (std::filesystem::path(base.output_dir) / ("n" + std::to_string(n)))
              .string();
    const ExperimentResult res = run_experiment(cfg);
    const Eigen::VectorXd series = result_mean(res, default_fit_column(cfg));
    ChaosPoint pt;
    pt.particles = n;
    pt.plateau = tail_median(series);
    pt.tail_se = result_se(res, default_fit_column(cfg))[res.times.size() - 1];
    out.points.push_back(pt);
    ns.push_back(double(n));
    plateaus.push_back(pt.plateau);
  }
  out.fit = regress_loglog(ns, plateaus);
  return out;
}

// ---------------------------------------------------------------- presets

namespace {

InitialConfig gaussian_initial(double mean, double var) {
  InitialConfig ic;
  ic.kind = "gaussian";
  ic.mean = Eigen::VectorXd::Constant(1, mean);
  ic.cov = Eigen::MatrixXd::Constant(1, 1, var);
  return ic;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"t2_convex",     "chaos_scaling", "p4_ou",
          "t3_double_well", "sg0_collapse",  "sg0_collapse_radial",
          "sg0_mean_reflection", "p6_threshold", "p9_gibbs"};
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "t2_convex" || name == "chaos_scaling") {
    // Uniformly convex confinement, synchronous coupling: ensemble a tracks
    // the mean-field proxy (aux), ensemble b is the self-interacting system,
    // so the paired distance keeps the 1/sqrt(N) finite-size floor.
    c.dim = 1;
    c.potential.kind = "quadratic";
    c.potential.curvature = 1.0;
    c.interaction.kind = "quadratic";
    c.interaction.alpha = 0.5;
    c.sigma = 0.5;
    c.sigma0 = 0.5;
    c.particles = 1000;
    c.aux_particles = 1000;
    c.ensembles = 2;
    c.dt = 1e-3;
    c.t_final = name == "t2_convex" ? 6.0 : 5.0;
    c.observe_every = 50;
    c.realizations = name == "t2_convex" ? 100 : 48;
    c.seed = name == "t2_convex" ? 20201 : 20401;
    c.coupling = "synchronous";
    if (name == "chaos_scaling") {
      // Same initial law for both ensembles (independent samples): the
      // coupled distance starts at sampling scale, so the finite-size floor
      // is visible without waiting out a deterministic transient.
      c.initial_a = gaussian_initial(0.0, 1.0);
      c.initial_b = gaussian_initial(0.0, 1.0);
    } else {
      c.initial_a = gaussian_initial(-0.5, 1.0);
      c.initial_b = gaussian_initial(0.5, 1.0);
    }
    c.fit_column = "w2";
    c.workers = 4;
    return c;
  }
  if (name == "p4_ou") {
    // Stationary start: conditionally gaussian around a gaussian center.
    c.dim = 1;
    c.potential.kind = "quadratic";
    c.potential.curvature = 0.5;
    c.interaction.kind = "none";
    c.sigma = 0.5;
    c.sigma0 = 0.5;
    c.particles = 2000;
    c.ensembles = 2;
    c.dt = 2e-3;
    c.t_final = 10.0;
    c.observe_every = 25;
    c.realizations = 200;
    c.seed = 20501;
    c.coupling = "independent";
    InitialConfig ic;
    ic.kind = "gaussian_random_center";
    ic.cov = Eigen::MatrixXd::Constant(1, 1, 0.25);
    ic.center_cov = Eigen::MatrixXd::Constant(1, 1, 0.25);
    ic.share_center = false;
    c.initial_a = ic;
    c.initial_b = ic;
    c.functional = "x2";
    for (int t = 1; t <= 10; ++t) c.snapshot_times.push_back(double(t));
    c.fit_column = "none";
    c.workers = 4;
    return c;
  }
  if (name == "t3_double_well") {
    c.dim = 1;
    c.potential.kind = "double_well_1d";
    c.interaction.kind = "quadratic";
    c.interaction.alpha = 0.05;
    c.sigma = 0.5;
    c.sigma0 = 3.0;
    c.particles = 1000;
    c.ensembles = 2;
    c.dt = 1e-3;
    c.t_final = 6.0;
    c.observe_every = 10;
    c.realizations = 100;
    c.seed = 20601;
    c.coupling = "reflection_1d";
    c.initial_a = gaussian_initial(-1.0, 0.04);
    c.initial_b = gaussian_initial(1.0, 0.04);
    c.pair_initials = true;
    c.fit_column = "df_paired";
    c.workers = 4;
    return c;
  }
  if (name == "sg0_collapse" || name == "sg0_collapse_radial") {
    // sigma = 0: spread collapse of a single strongly interacting ensemble.
    c.dim = 2;
    if (name == "sg0_collapse") {
      c.potential.kind = "quadratic";
      c.potential.curvature = 1.0;
      c.initial_a.kind = "gaussian";
      c.initial_a.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
    } else {
      c.potential.kind = "radial_double_well";
      c.initial_a.kind = "gaussian";
      c.initial_a.mean = Eigen::VectorXd::Zero(2);
      c.initial_a.mean[0] = 1.0;
      c.initial_a.cov = Eigen::MatrixXd::Constant(1, 1, 0.25);
    }
    c.interaction.kind = "quadratic";
    c.interaction.alpha = 5.0;
    c.sigma = 0.0;
    c.sigma0 = 1.0;
    c.particles = 256;
    c.ensembles = 1;
    c.dt = 5e-4;
    c.t_final = 2.5;
    c.observe_every = 10;
    c.realizations = 8;
    c.seed = name == "sg0_collapse" ? 20701 : 20702;
    c.coupling = "synchronous";
    c.fit_column = "spread_a";
    c.workers = 2;
    return c;
  }
  if (name == "sg0_mean_reflection") {
    // Collapsed ensembles whose barycenters are reflection-coupled.
    c.dim = 2;
    c.potential.kind = "quadratic";
    c.potential.curvature = 1.0;
    c.interaction.kind = "quadratic";
    c.interaction.alpha = 5.0;
    c.sigma = 0.0;
    c.sigma0 = 1.0;
    c.particles = 128;
    c.ensembles = 2;
    c.dt = 1e-3;
    c.t_final = 12.0;
    c.observe_every = 20;
    c.realizations = 64;
    c.seed = 20703;
    c.coupling = "mean_reflection";
    InitialConfig a, b;
    a.kind = b.kind = "gaussian";
    a.mean = Eigen::VectorXd::Zero(2);
    a.mean[0] = -1.0;
    b.mean = Eigen::VectorXd::Zero(2);
    b.mean[0] = 1.0;
    a.cov = b.cov = Eigen::MatrixXd::Constant(1, 1, 0.01);
    c.initial_a = a;
    c.initial_b = b;
    c.pair_initials = true;
    c.fit_column = "f_mean_dist";
    c.workers = 2;
    return c;
  }
  if (name == "p6_threshold") {
    // Parameter holder for the sigma0 root find (interval [0.5, 8]); the
    // simulation fields are placeholders sized for a smoke run.
    c.dim = 1;
    c.potential.kind = "double_well_1d";
    c.interaction.kind = "quadratic";
    c.interaction.alpha = 0.05;
    c.sigma = 0.5;
    c.sigma0 = 3.0;
    c.particles = 64;
    c.ensembles = 1;
    c.dt = 1e-3;
    c.t_final = 1.0;
    c.observe_every = 10;
    c.realizations = 4;
    c.seed = 20801;
    c.fit_column = "none";
    return c;
  }
  if (name == "p9_gibbs") {
    // sigma = 0 long run: Dirac-collapsed ensemble whose barycenter samples
    // the exp(-2V/sigma0^2) law.
    c.dim = 1;
    c.potential.kind = "double_well_1d";
    c.interaction.kind = "quadratic";
    c.interaction.alpha = 5.0;
    c.sigma = 0.0;
    c.sigma0 = 1.5;
    c.particles = 64;
    c.ensembles = 1;
    c.dt = 1e-3;
    c.t_final = 1500.0;
    c.observe_every = 20;
    c.realizations = 24;
    c.seed = 20901;
    c.coupling = "synchronous";
    c.initial_a = gaussian_initial(0.0, 1.0);
    c.fit_column = "none";
    c.workers = 4;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace mkvcn
