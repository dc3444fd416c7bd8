#pragma once
// Distorted concave metric built from a monotonicity profile kappa and a
// common-noise intensity sigma0:
//
//   R0  = inf{ s >= 0 : kappa(r) >= 0 for all r >= s }
//   R1  = inf{ s >= R0 : s (s - R0) kappa(r) >= 4 diff for all r >= s }
//   phi(r) = exp( -(1/(2 diff)) int_0^r s kappa_-(s) ds ),  kappa_- = max(0, -kappa)
//   Phi(r) = int_0^r phi
//   ell = ( int_0^{R1} Phi/phi )^{-1}
//   g(r) = 1 - (ell/2) int_0^{min(r, R1)} Phi/phi
//   f(r) = int_0^r phi g        (concave, increasing, f' = phi g)
//
// diff defaults to sigma0^2; the additive-noise variant sigma^2 + sigma0^2 is
// reachable through the override. All integrals are composite trapezoid on a
// uniform grid halved until ell, phi(R0) and f(r_max) settle, with R1 snapped
// to a grid node and r_max = 4 R1 (affine continuation beyond).

#include "mkvcn/model.hpp"

#include <Eigen/Dense>

#include <optional>

namespace mkvcn {

struct DistortedMetric {
  double sigma0 = 1.0;
  double diff = 1.0;
  double R0 = 0.0, R1 = 0.0;
  double ell = 0.0;
  double phi_R0 = 1.0;
  double grid_step = 0.0;  // final tabulation step
  double r_max = 0.0;      // grid end; f continues affinely with slope fp(r_max)
  Eigen::VectorXd r, f, fp, phi, g;
};

DistortedMetric build_metric(const PotentialSpec& v, double sigma0,
                             double quad_step = 1e-3,
                             std::optional<double> diff_override = {});

// f at arbitrary radius: linear interpolation on the table, affine beyond
// r_max. Negative radii are rejected.
double eval_f(const DistortedMetric& m, double r);
double eval_fp(const DistortedMetric& m, double r);

struct ContractionReport {
  bool pass = false;
  double worst_margin = 0;  // max over grid of f'' - (r kappa /(2 diff)) f' + (ell/2) f
  double worst_r = 0;
  double tol = 0;           // 1e-6 * max |f''| over the grid
  double max_abs_fpp = 0;
};

// Verifies f'' - (1/(2 diff)) r kappa(r) f'(r) <= -(ell/2) f(r) on the given
// radii. f'' comes from central differences on a tabulation refined to a
// quarter of the metric's grid step; each requested radius is evaluated at
// the nearest refined node.
ContractionReport check_contraction_inequality(const DistortedMetric& m,
                                               const PotentialSpec& v,
                                               const Eigen::VectorXd& r_grid);

// Default verification radii: off-node points covering (0, 3 R1].
Eigen::VectorXd default_check_grid(const DistortedMetric& m, int points = 1500);

// Contraction rate c = ell sigma0^2 - 4 L_W / phi(R0).
double rate_c(const DistortedMetric& m, const InteractionSpec& w);

struct ThresholdReport {
  std::optional<double> threshold;  // sigma0 where c crosses zero
  bool boundary_positive = false;   // c > 0 already at the interval's left end
  Eigen::MatrixXd grid;             // rows of (sigma0, c), log-spaced
};

// Smallest sigma0 in [lo, hi] with c(V, W, sigma0) > 0, by bisection on the
// first sign change, to absolute tolerance tol. c positive at lo yields a
// boundary report; c nonpositive across the whole interval is an error.
ThresholdReport sigma0_threshold(const PotentialSpec& v,
                                 const InteractionSpec& w, double lo,
                                 double hi, double tol = 1e-4,
                                 int grid_points = 25);

}  // namespace mkvcn
