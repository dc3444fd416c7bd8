#include "mkvcn/model.hpp"

#include "mkvcn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace mkvcn {
namespace {

Eigen::VectorXd center_or_zero(const Eigen::VectorXd& center, int dim) {
  if (center.size() == 0) return Eigen::VectorXd::Zero(dim);
  if (center.size() != dim)
    throw std::invalid_argument("potential center dimension mismatch");
  return center;
}

// p(x) and derivatives for one coordinate polynomial.
double poly_eval(const Eigen::VectorXd& c, double x) {
  double acc = 0;
  for (Eigen::Index j = c.size() - 1; j >= 0; --j) acc = acc * x + c[j];
  return acc;
}

Eigen::VectorXd poly_derive(const Eigen::VectorXd& c) {
  if (c.size() <= 1) return Eigen::VectorXd::Zero(1);
  Eigen::VectorXd d(c.size() - 1);
  for (Eigen::Index j = 1; j < c.size(); ++j) d[j - 1] = double(j) * c[j];
  return d;
}

}  // namespace

PotentialSpec make_quadratic(int dim, double curvature, Eigen::VectorXd center,
                             double box_halfwidth) {
  if (dim < 1) throw std::invalid_argument("quadratic potential: dim >= 1");
  if (curvature <= 0)
    throw NotConfiningError("quadratic potential needs curvature > 0");
  PotentialSpec v;
  v.kind = PotentialKind::quadratic;
  v.dim = dim;
  v.box_halfwidth = box_halfwidth;
  v.curvature = curvature;
  v.center = center_or_zero(center, dim);
  const Eigen::VectorXd c = v.center;
  const double k = curvature;
  v.value = [c, k](const Eigen::VectorXd& x) {
    return 0.5 * k * (x - c).squaredNorm();
  };
  v.grad = [c, k](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return k * (x - c);
  };
  v.kappa = [k](double) { return k; };
  v.kappa_liminf = k;
  v.lipschitz = k;
  v.convexity_modulus = k;
  return v;
}

PotentialSpec builtin_double_well_1d(double box_halfwidth) {
  PotentialSpec v;
  v.kind = PotentialKind::double_well_1d;
  v.dim = 1;
  v.box_halfwidth = box_halfwidth;
  v.value = [](const Eigen::VectorXd& x) {
    const double t = x[0] * x[0];
    return 0.25 * t * t - 0.5 * t;
  };
  v.grad = [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    Eigen::VectorXd g(1);
    g[0] = x[0] * x[0] * x[0] - x[0];
    return g;
  };
  // (V'(x) - V'(y))(x - y) = (x^2 + xy + y^2 - 1)(x - y)^2, minimized over
  // fixed x - y = r at x + y = 0: kappa(r) = r^2/4 - 1.
  v.kappa = [](double r) { return 0.25 * r * r - 1.0; };
  v.kappa_liminf = std::numeric_limits<double>::infinity();
  v.lipschitz = 3.0 * box_halfwidth * box_halfwidth - 1.0;
  return v;
}

PotentialSpec make_radial_double_well(int dim, double box_halfwidth) {
  if (dim < 2)
    throw std::invalid_argument("radial double well: dim >= 2 (use the 1-d well)");
  PotentialSpec v;
  v.kind = PotentialKind::radial_double_well;
  v.dim = dim;
  v.box_halfwidth = box_halfwidth;
  v.value = [](const Eigen::VectorXd& x) {
    const double t = x.squaredNorm();
    return 0.25 * t * t - 0.5 * t;
  };
  v.grad = [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return (x.squaredNorm() - 1.0) * x;
  };
  v.kappa = [](double r) { return 0.25 * r * r - 1.0; };
  v.kappa_liminf = std::numeric_limits<double>::infinity();
  // Hessian (|x|^2 - 1) I + 2 x x^T has top eigenvalue 3|x|^2 - 1 and the box
  // [-B, B]^d allows |x|^2 up to d B^2.
  v.lipschitz = 3.0 * dim * box_halfwidth * box_halfwidth - 1.0;
  return v;
}

PotentialSpec make_custom_polynomial(std::vector<Eigen::VectorXd> coeffs,
                                     double box_halfwidth) {
  if (coeffs.empty())
    throw std::invalid_argument("custom polynomial: no coordinate polynomials");
  const int dim = int(coeffs.size());
  for (const auto& c : coeffs) {
    if (c.size() < 3)
      throw NotConfiningError("custom polynomial: coordinate degree < 2");
    const Eigen::Index deg = c.size() - 1;
    if (deg % 2 != 0 || c[deg] <= 0)
      throw NotConfiningError(
          "custom polynomial: leading term must be even with positive "
          "coefficient");
  }
  PotentialSpec v;
  v.kind = PotentialKind::custom_polynomial;
  v.dim = dim;
  v.box_halfwidth = box_halfwidth;
  v.poly = coeffs;
  std::vector<Eigen::VectorXd> dp, ddp;
  for (const auto& c : coeffs) {
    dp.push_back(poly_derive(c));
    ddp.push_back(poly_derive(dp.back()));
  }
  v.value = [coeffs](const Eigen::VectorXd& x) {
    double s = 0;
    for (Eigen::Index k = 0; k < x.size(); ++k) s += poly_eval(coeffs[k], x[k]);
    return s;
  };
  v.grad = [dp](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) g[k] = poly_eval(dp[k], x[k]);
    return g;
  };
  // Lipschitz bound: max |p_k''| scanned on the box.
  double lip = 0;
  const int scan = 4001;
  for (int k = 0; k < dim; ++k)
    for (int i = 0; i < scan; ++i) {
      const double x = box_halfwidth * (2.0 * i / (scan - 1) - 1.0);
      lip = std::max(lip, std::abs(poly_eval(ddp[k], x)));
    }
  v.lipschitz = lip;
  // kappa: tabulated from the gradient once, linear interpolation after.
  PotentialSpec probe = v;  // grad is set; kappa_from_grad needs nothing else
  const int n = 512;
  // Keep the last node strictly inside the box diameter: the curvature
  // estimator needs both probe endpoints inside the box.
  const double r_hi = 2.0 * box_halfwidth * (1.0 - 1e-9);
  Eigen::VectorXd grid(n);
  for (int i = 0; i < n; ++i) grid[i] = r_hi * double(i + 1) / double(n);
  const Eigen::VectorXd kap = kappa_from_grad(probe, grid);
  v.kappa = [grid, kap](double r) {
    if (r <= grid[0]) return kap[0];
    if (r >= grid[grid.size() - 1]) return kap[kap.size() - 1];
    const auto it =
        std::upper_bound(grid.data(), grid.data() + grid.size(), r);
    const Eigen::Index i = it - grid.data();
    const double t = (r - grid[i - 1]) / (grid[i] - grid[i - 1]);
    return (1 - t) * kap[i - 1] + t * kap[i];
  };
  v.kappa_liminf = kap[kap.size() - 1];
  if (v.kappa_liminf <= 0)
    throw NotConfiningError(
        "custom polynomial: sampled kappa not positive at the box horizon");
  const double kap_min = kap.minCoeff();
  if (kap_min > 0) v.convexity_modulus = kap_min;
  return v;
}

InteractionSpec make_no_interaction() {
  InteractionSpec w;
  w.kind = InteractionKind::none;
  w.grad = [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return Eigen::VectorXd::Zero(x.size());
  };
  w.convex = true;
  return w;
}

InteractionSpec make_quadratic_interaction(double alpha) {
  if (alpha < 0)
    throw std::invalid_argument("quadratic interaction: alpha >= 0");
  InteractionSpec w;
  w.kind = InteractionKind::quadratic;
  w.alpha = alpha;
  w.grad = [alpha](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return alpha * x;
  };
  w.lipschitz = alpha;
  w.convex = true;
  return w;
}

InteractionSpec make_custom_even_interaction(GradFn grad, double lipschitz,
                                             bool convex) {
  if (!grad) throw std::invalid_argument("custom interaction: missing gradient");
  if (lipschitz < 0)
    throw std::invalid_argument("custom interaction: Lipschitz bound >= 0");
  InteractionSpec w;
  w.kind = InteractionKind::custom_even;
  w.grad = std::move(grad);
  w.lipschitz = lipschitz;
  w.convex = convex;
  return w;
}

void grad_rows(const PotentialSpec& v, const Eigen::MatrixXd& x,
               Eigen::MatrixXd& out) {
  out.resize(x.rows(), x.cols());
  switch (v.kind) {
    case PotentialKind::quadratic: {
      if (v.center.size() == x.cols() && !v.center.isZero(0.0))
        out = v.curvature * (x.rowwise() - v.center.transpose());
      else
        out = v.curvature * x;
      return;
    }
    case PotentialKind::double_well_1d: {
      out.array() = x.array().cube() - x.array();
      return;
    }
    case PotentialKind::radial_double_well: {
      const Eigen::ArrayXd s = x.rowwise().squaredNorm().array() - 1.0;
      out = x.array().colwise() * s;
      return;
    }
    case PotentialKind::custom_polynomial: {
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        out.row(i) = v.grad(x.row(i).transpose()).transpose();
      return;
    }
  }
}

void interaction_rows(const InteractionSpec& w, const Eigen::MatrixXd& x,
                      const Eigen::MatrixXd& source, Eigen::MatrixXd& out) {
  out.resize(x.rows(), x.cols());
  switch (w.kind) {
    case InteractionKind::none:
      out.setZero();
      return;
    case InteractionKind::quadratic: {
      const Eigen::RowVectorXd mean = source.colwise().mean();
      out = w.alpha * (x.rowwise() - mean);
      return;
    }
    case InteractionKind::custom_even: {
      Eigen::VectorXd acc(x.cols());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        acc.setZero();
        for (Eigen::Index j = 0; j < source.rows(); ++j)
          acc += w.grad((x.row(i) - source.row(j)).transpose());
        out.row(i) = acc.transpose() / double(source.rows());
      }
      return;
    }
  }
}

Eigen::VectorXd kappa_from_grad(const PotentialSpec& v,
                                const Eigen::VectorXd& r_grid, int midpoints,
                                int directions, std::uint64_t design_seed) {
  if (r_grid.size() == 0) throw std::invalid_argument("kappa_from_grad: empty grid");
  for (Eigen::Index i = 0; i < r_grid.size(); ++i) {
    if (r_grid[i] <= 0)
      throw std::invalid_argument("kappa_from_grad: radii must be positive");
    if (i > 0 && r_grid[i] <= r_grid[i - 1])
      throw std::invalid_argument("kappa_from_grad: grid must increase");
  }
  if (!v.grad) throw std::invalid_argument("kappa_from_grad: missing gradient");
  const int d = v.dim;
  const double box = v.box_halfwidth;
  if (r_grid[r_grid.size() - 1] >= 2 * box)
    throw std::invalid_argument("kappa_from_grad: radius exceeds box diameter");

  std::mt19937_64 eng(design_seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> gauss;

  // Direction design: coordinate axes plus random unit vectors.
  std::vector<Eigen::VectorXd> dirs;
  for (int k = 0; k < d; ++k) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
    u[k] = 1;
    dirs.push_back(u);
  }
  for (int k = 0; d > 1 && k < directions; ++k) {
    Eigen::VectorXd u(d);
    do {
      for (int j = 0; j < d; ++j) u[j] = gauss(eng);
    } while (u.norm() < 1e-12);
    dirs.push_back(u.normalized());
  }

  // Midpoint design: the origin, then a fixed batch of box points shrunk so
  // that both endpoints of every probe pair stay inside the box.
  std::vector<Eigen::VectorXd> mids;
  mids.push_back(Eigen::VectorXd::Zero(d));
  if (d == 1) {
    for (int k = 0; k < midpoints; ++k) {
      Eigen::VectorXd c(1);
      c[0] = box * (2.0 * k / std::max(1, midpoints - 1) - 1.0);
      mids.push_back(c);
    }
  } else {
    for (int k = 0; k < midpoints; ++k) {
      Eigen::VectorXd c(d);
      for (int j = 0; j < d; ++j) c[j] = box * unif(eng);
      mids.push_back(c);
    }
  }

  Eigen::VectorXd out(r_grid.size());
  for (Eigen::Index ir = 0; ir < r_grid.size(); ++ir) {
    const double r = r_grid[ir];
    const double shrink = 1.0 - r / (2.0 * box);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& u : dirs) {
      const Eigen::VectorXd half = (0.5 * r) * u;
      for (const auto& c : mids) {
        const Eigen::VectorXd m = shrink * c;
        const Eigen::VectorXd x = m + half, y = m - half;
        const double q = (v.grad(x) - v.grad(y)).dot(x - y) / (r * r);
        best = std::min(best, q);
      }
    }
    out[ir] = best;
  }
  return out;
}

}  // namespace mkvcn
