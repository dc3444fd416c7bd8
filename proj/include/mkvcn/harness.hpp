#pragma once
// Named, reproducible experiments: JSON configuration, realization fan-out
// over a worker pool, mean/standard-error reduction, exponential rate fits,
// and file emission (run manifest, per-time CSV, rate-fit summary, gnuplot
// script). Determinism contract: outputs depend only on the config, never on
// the worker count.

#include "mkvcn/metric.hpp"
#include "mkvcn/model.hpp"
#include "mkvcn/numerics.hpp"
#include "mkvcn/sde.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mkvcn {

struct RateFit {
  double rate = 0;      // fitted exponential decay rate
  double plateau = 0;   // floor level subtracted before the log fit
  double intercept = 0; // log-amplitude at t = 0
  double r2 = 0;
  double rate_se = 0;
  int points_used = 0;
  double window_lo = 0, window_hi = 0;  // time window actually fitted
};

// Fit value(t) ~ plateau + A exp(-rate t). The plateau is the median of the
// final fifth of the series unless overridden; the fit window is the leading
// run of points with value > 3 * plateau (strictly above it), and at least
// 10 such points are required.
RateFit fit_rate(const Eigen::VectorXd& times, const Eigen::VectorXd& values,
                 std::optional<double> plateau_override = {});

struct PotentialConfig {
  std::string kind = "quadratic";  // quadratic | double_well_1d |
                                   // radial_double_well | custom_polynomial
  double curvature = 1.0;
  Eigen::VectorXd center;                  // quadratic; empty = origin
  std::vector<Eigen::VectorXd> coeffs;     // custom_polynomial
  double box = 6.0;
};

struct InteractionConfig {
  std::string kind = "none";  // none | quadratic
  double alpha = 0.0;
};

struct InitialConfig {
  std::string kind = "gaussian";  // gaussian | two_point_mixture | dirac |
                                  // gaussian_random_center
  Eigen::VectorXd mean;           // empty = origin
  Eigen::MatrixXd cov;            // empty = identity; 1x1 = isotropic
  Eigen::MatrixXd center_cov;
  Eigen::VectorXd point_a, point_b;
  double weight_a = 0.5;
  bool share_center = true;
};

struct ExperimentConfig {
  std::string name = "experiment";
  int dim = 1;
  PotentialConfig potential;
  InteractionConfig interaction;
  double sigma = 0.0, sigma0 = 1.0;
  int particles = 100;
  int aux_particles = 0;  // size of a's mean-field proxy; 0 = none
  int ensembles = 2;      // 1 or 2
  double dt = 1e-3;
  double t_final = 1.0;
  long observe_every = 10;  // steps between observations
  int realizations = 8;
  std::uint64_t seed = 1;
  std::string coupling = "synchronous";  // independent | synchronous |
                                         // reflection_1d | mean_reflection
  std::optional<double> coupling_delta;  // reflection scale; empty = auto
  InitialConfig initial_a, initial_b;
  bool pair_initials = false;  // reorder b's initial rows optimally
  std::string functional = "none";  // none | x | x2 | variance
  std::optional<double> metric_sigma0, metric_diff;  // metric overrides
  std::string fit_column;  // empty = w2 (coupled) / spread_a (single)
  int workers = 1;
  std::string output_dir;  // empty = in-memory only
  bool emit_barycenters = false;
  std::vector<double> snapshot_times;  // must lie on the observation grid
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);  // manifest echo

PotentialSpec build_potential(const PotentialConfig& pc, int dim);
InteractionSpec build_interaction(const InteractionConfig& ic);
InitialLaw build_initial(const InitialConfig& ic, int dim);

struct SnapshotSet {
  Eigen::VectorXd times;
  // [realization][time index], ensemble states at the requested times
  std::vector<std::vector<Eigen::MatrixXd>> a, b;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::optional<DistortedMetric> metric;  // built when sigma0 (or override) > 0
  double rate_c_value = 0;                // 0 when no metric
  double delta_used = 0;                  // resolved reflection scale
  Eigen::VectorXd times;
  std::vector<std::string> observers;
  Eigen::MatrixXd mean, se;  // times x observers; se = sd / sqrt(R)
  std::vector<TrajectoryRecord> records;  // per realization, in order
  SnapshotSet snapshots;
  std::vector<std::string> warnings;
  long total_box_excursions = 0;
};

// Runs all realizations (worker pool, deterministic reduction order) and, if
// config.output_dir is set, writes manifest.json, series.csv, rate_fit.json,
// plots.gp and optionally barycenters.csv. Blow-ups propagate after the
// manifest records the failure.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// File emission alone (same files as above); requires output_dir.
void write_outputs(const ExperimentResult& res);

// Column of per-time means / standard errors by observer name.
Eigen::VectorXd result_mean(const ExperimentResult& res, const std::string& name);
Eigen::VectorXd result_se(const ExperimentResult& res, const std::string& name);

struct ChaosPoint {
  int particles = 0;
  double plateau = 0;     // median of the final fifth of the mean series
  double tail_se = 0;     // standard error of the mean at the last time
};

struct ChaosScaling {
  std::vector<ChaosPoint> points;
  LineFit fit;  // log plateau vs log N; slope expected -1/2
};

// Reruns `base` at each particle count (auxiliary ensemble rescaled along),
// extracts the plateau of the fitted column, and regresses log-log.
ChaosScaling chaos_scaling(const ExperimentConfig& base,
                           const std::vector<int>& particle_counts);

// Log-log regression helper; needs >= 3 distinct sizes.
LineFit regress_loglog(const std::vector<double>& ns,
                       const std::vector<double>& plateaus);

// Built-in experiment definitions; throws ConfigError for unknown names.
ExperimentConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace mkvcn
