#pragma once
// Confining potentials and pair interactions together with the quantitative
// data the metric and the contraction estimates consume: the monotonicity
// profile kappa with
//     (grad V(x) - grad V(y)) . (x - y) >= kappa(|x-y|) |x-y|^2,
// its liminf at infinity, and a gradient Lipschitz bound on a working box
// [-B, B]^d. kappa is direction-uniform: one profile for all of R^d.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace mkvcn {

using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using ValueFn = std::function<double(const Eigen::VectorXd&)>;
using ProfileFn = std::function<double(double)>;

enum class PotentialKind {
  quadratic,           // V(x) = (curvature/2) |x - center|^2
  double_well_1d,      // V(x) = x^4/4 - x^2/2
  radial_double_well,  // V(x) = |x|^4/4 - |x|^2/2, d >= 2
  custom_polynomial,   // separable V(x) = sum_k p_k(x_k)
};

struct PotentialSpec {
  PotentialKind kind = PotentialKind::quadratic;
  int dim = 1;
  double box_halfwidth = 6.0;  // working box for Lipschitz bounds and sampling

  double curvature = 1.0;      // quadratic only
  Eigen::VectorXd center;      // quadratic only; empty = origin
  std::vector<Eigen::VectorXd> poly;  // custom_polynomial: poly[k][j] * x_k^j

  ValueFn value;
  GradFn grad;
  ProfileFn kappa;
  double kappa_liminf = 0.0;   // gamma; must be > 0 for the metric
  double lipschitz = 0.0;      // L_V: gradient Lipschitz constant on the box
  std::optional<double> convexity_modulus;  // beta when uniformly convex
};

PotentialSpec make_quadratic(int dim, double curvature,
                             Eigen::VectorXd center = Eigen::VectorXd(),
                             double box_halfwidth = 6.0);
// V' = x^3 - x; kappa(r) = r^2/4 - 1, attained at x = -y = r/2.
PotentialSpec builtin_double_well_1d(double box_halfwidth = 6.0);
// grad V = (|x|^2 - 1) x; same kappa profile as the 1-d well.
PotentialSpec make_radial_double_well(int dim, double box_halfwidth = 6.0);
// Separable polynomial; confinement (even positive leading terms) is checked,
// kappa is tabulated numerically from the gradient.
PotentialSpec make_custom_polynomial(std::vector<Eigen::VectorXd> coeffs,
                                     double box_halfwidth = 6.0);

enum class InteractionKind { none, quadratic, custom_even };

struct InteractionSpec {
  InteractionKind kind = InteractionKind::none;
  double alpha = 0.0;   // quadratic: W(x) = (alpha/2) |x|^2
  GradFn grad;          // odd gradient; identically zero for `none`
  double lipschitz = 0.0;  // L_W
  bool convex = false;
};

InteractionSpec make_no_interaction();
InteractionSpec make_quadratic_interaction(double alpha);
InteractionSpec make_custom_even_interaction(GradFn grad, double lipschitz,
                                             bool convex);

// grad V for every particle row of x, written into out (same shape).
// Built-in kinds run vectorized; custom kinds fall back to the oracle.
void grad_rows(const PotentialSpec& v, const Eigen::MatrixXd& x,
               Eigen::MatrixXd& out);

// Interaction force rows: out_i = (1/M) sum_j grad W(x_i - source_j).
// Quadratic interactions reduce to alpha (x_i - mean(source)) and run in
// O(N); custom_even is the literal O(N M) sum.
void interaction_rows(const InteractionSpec& w, const Eigen::MatrixXd& x,
                      const Eigen::MatrixXd& source, Eigen::MatrixXd& out);

// Numeric monotonicity profile: for each r in r_grid (strictly increasing,
// positive), the minimum of the monotonicity quotient over a deterministic
// design of midpoints and directions inside the box. The design always
// contains the symmetric pair x = -y = (r/2) u, which realizes the minimum
// for the built-in wells, so the sampled value never exceeds the analytic
// profile there. A sampled minimum is an upper bound on the true infimum:
// treat the output as the profile only when the design resolves it.
Eigen::VectorXd kappa_from_grad(const PotentialSpec& v,
                                const Eigen::VectorXd& r_grid,
                                int midpoints = 128, int directions = 8,
                                std::uint64_t design_seed = 0x6b6170);

}  // namespace mkvcn
