#pragma once
// The generator acting on functionals of the conditional law, evaluated on
// empirical measures, plus the stationary-regime diagnostics built on it:
//
//   (M F)(m) = int [ D_m F . b(x, m) + ((sigma^2 + sigma0^2)/2) div_x D_m F ] dm
//              + (sigma0^2/2) int int Tr D^2_mm F dm dm
//
// with b(x, m) = -grad V(x) - grad W * m(x). Linear functionals <m, phi>
// have D_m F = grad phi and no second-order term; the variance functional
// int |x - mean(m)|^2 dm has D_m F = 2(x - mean), div_x D_m F = 2d and
// Tr D^2_mm F = -2d, so its two second-order contributions cancel at
// sigma = 0.

#include "mkvcn/metric.hpp"
#include "mkvcn/model.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <vector>

namespace mkvcn {

struct GeneratorFunctional {
  enum class Kind { linear, variance, custom };
  Kind kind = Kind::linear;
  // linear: F(m) = <m, phi>
  std::function<double(const Eigen::VectorXd&)> phi;
  GradFn phi_grad;
  std::function<double(const Eigen::VectorXd&)> phi_lap;
  // custom: user oracles for the Lions derivatives
  std::function<double(const Eigen::MatrixXd&)> value_fn;
  std::function<Eigen::VectorXd(const Eigen::MatrixXd&, const Eigen::VectorXd&)>
      dm;  // D_m F(m, x)
  std::function<double(const Eigen::MatrixXd&, const Eigen::VectorXd&)>
      div_dm;  // div_x D_m F(m, x)
  std::function<double(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                       const Eigen::VectorXd&)>
      tr_dmm;  // Tr D^2_mm F(m, x, y)
};

GeneratorFunctional linear_functional(
    std::function<double(const Eigen::VectorXd&)> phi, GradFn grad,
    std::function<double(const Eigen::VectorXd&)> lap);
GeneratorFunctional variance_functional();

double functional_value(const GeneratorFunctional& f, const Eigen::MatrixXd& m);
double generator_apply(const GeneratorFunctional& f, const Eigen::MatrixXd& m,
                       const PotentialSpec& v, const InteractionSpec& w,
                       double sigma, double sigma0);

struct ResidualReport {
  double transient_z = 0;   // paired z of F(t_end) - F(0) against int M F ds
  double tail_mean = 0, tail_se = 0, tail_z = 0;
  double t_stationary = 0;  // detected entry into the stationary window
  bool stationary_found = false;
  bool pass = false;        // both z-scores within 3
};

// Monte-Carlo check of the evolution identity and of stationarity: series
// are per-realization records of F(m_t) and (M F)(m_t) on a shared time
// grid. rate_hint sizes the stationarity-detection window (length 5 / rate).
ResidualReport stationarity_residual(const std::vector<Eigen::VectorXd>& F_series,
                                     const std::vector<Eigen::VectorXd>& MF_series,
                                     const Eigen::VectorXd& times,
                                     double rate_hint);

struct OuInvariantReport {
  double within = 0, within_rel_err = 0;      // vs target_within
  double mean_var = 0, mean_var_rel_err = 0;  // vs target_mean_var
  double ks_centers = 0;  // pooled ensemble means vs N(0, target_mean_var); reported
  int snapshots = 0;
  bool pass = false;
};

// Gaussian-around-a-Gaussian-center invariant check from late-time ensemble
// snapshots (pooled across realizations and well-separated times). `within`
// is the bias-corrected per-coordinate variance around the ensemble mean;
// `mean_var` is the variance of ensemble means with the within/N finite-size
// contribution removed.
OuInvariantReport ou_invariant_check(const std::vector<Eigen::MatrixXd>& snapshots,
                                     double target_within, double target_mean_var,
                                     double rel_tol = 0.10);

struct GibbsReport {
  double ks = 0;
  int samples = 0;
  double tau_lags = 0;       // autocorrelation time of the barycenter, in lags
  double thin_stride = 0;    // samples kept every ceil(tau) observations
  double max_tail_spread = 0;
  bool collapse_ok = false;  // spread stayed collapsed over the tail
  bool pass = false;         // ks < tol
};

// Compares thinned late-time barycenters against the normalized density
// proportional to exp(-2 V / sigma0^2) (d = 1). Requires an integrable
// density; the confinement check guards that.
GibbsReport gibbs_dirac_check(const std::vector<Eigen::VectorXd>& barycenters,
                              const std::vector<Eigen::VectorXd>& spreads,
                              const Eigen::VectorXd& times,
                              const PotentialSpec& v, double sigma0,
                              double burn_in, double ks_tol = 0.05);

// CDF of the normalized density exp(-2 V / sigma0^2) on a quadrature grid.
// Exposed for oracle tests.
std::function<double(double)> gibbs_cdf_1d(const PotentialSpec& v, double sigma0);

struct RateFit;  // harness.hpp

// Log-linear fit of a collapsing spread series; positions below 1e-13 are
// treated as numerically collapsed and excluded.
RateFit variance_collapse_rate(const Eigen::VectorXd& times,
                               const Eigen::VectorXd& mean_spread);

}  // namespace mkvcn
