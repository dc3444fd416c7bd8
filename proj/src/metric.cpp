#include "mkvcn/metric.hpp"

#include "mkvcn/errors.hpp"
#include "mkvcn/numerics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace mkvcn {
namespace {

constexpr double kRefineTol = 2.5e-10;  // relative settling of ell, phi(R0), f
constexpr int kMaxRefine = 22;

// Smallest radius beyond which kappa stays nonnegative, by coarse scan with
// doubling horizon and bisection on the last sign change.
double find_R0(const ProfileFn& kappa, double gamma) {
  if (gamma <= 0)
    throw NotConfiningError("metric: kappa liminf must be positive");
  double hi = 1.0;
  const double cap = 1e9;
  // Expand until the upper half of the horizon shows no negative kappa.
  for (;;) {
    bool neg = false;
    for (int i = 0; i <= 2000; ++i) {
      const double r = hi * (0.5 + 0.5 * i / 2000.0);
      if (kappa(r) < 0) {
        neg = true;
        break;
      }
    }
    if (!neg) break;
    hi *= 2;
    if (hi > cap)
      throw NotConfiningError("metric: kappa stays negative past the scan cap");
  }
  const int n = 200000;
  double last_neg = -1;
  for (int i = 0; i <= n; ++i) {
    const double r = hi * double(i) / n;
    if (kappa(r) < 0) last_neg = r;
  }
  if (last_neg < 0) return 0.0;
  double lo = last_neg, up = std::min(hi, last_neg + hi / n);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + up);
    if (kappa(mid) < 0)
      lo = mid;
    else
      up = mid;
  }
  return 0.5 * (lo + up);
}

// s (s - R0) inf_{r >= s} kappa(r), with the infimum taken over a fine scan
// grid; tail beyond the horizon is covered by min(last scanned value, gamma).
struct SuffixMin {
  double lo, hi;
  std::vector<double> suffix;  // suffix[i] = inf over grid points >= i
  double at(double s) const {
    const int n = int(suffix.size()) - 1;
    const double t = (s - lo) / (hi - lo) * n;
    int i = std::max(0, std::min(n, int(std::floor(t))));
    return suffix[i];
  }
};

SuffixMin scan_suffix(const ProfileFn& kappa, double lo, double hi,
                      double gamma, int n = 400000) {
  SuffixMin sm;
  sm.lo = lo;
  sm.hi = hi;
  sm.suffix.resize(n + 1);
  double running = std::min(kappa(hi), gamma);
  for (int i = n; i >= 0; --i) {
    const double r = lo + (hi - lo) * double(i) / n;
    running = std::min(running, kappa(r));
    sm.suffix[i] = running;
  }
  return sm;
}

double find_R1(const ProfileFn& kappa, double R0, double gamma, double diff) {
  const double cap = 1e6;
  double span = std::max(4.0, 4.0 * R0);
  for (;;) {
    const double hi = R0 + span;
    const SuffixMin sm = scan_suffix(kappa, R0, hi, gamma);
    const int n = int(sm.suffix.size()) - 1;
    const double h = span / n;
    // inf_{r >= s} kappa: suffix over grid nodes above s plus a direct local
    // sweep of the partial cell [s, next node].
    auto kappa_inf = [&](double s) {
      const int above = std::min(n, int(std::ceil((s - R0) / h)));
      double m = sm.suffix[above];
      const double nxt = R0 + h * double(above);
      for (int j = 0; j <= 256; ++j)
        m = std::min(m, kappa(s + (nxt - s) * double(j) / 256.0));
      return m;
    };
    auto pred = [&](double s) {
      return s * (s - R0) * kappa_inf(s) >= 4.0 * diff;
    };
    // The predicate is monotone in s; bracket on the grid first.
    int first = -1;
    for (int i = 0; i <= n; ++i) {
      const double s = R0 + h * double(i);
      if (s * (s - R0) * sm.suffix[i] >= 4.0 * diff) {
        first = i;
        break;
      }
    }
    if (first < 0) {
      span *= 2;
      if (R0 + span > cap)
        throw IncreaseRMaxError("metric: R1 predicate unmet below scan cap");
      continue;
    }
    double lo = first == 0 ? R0 : R0 + h * double(first - 1);
    double up = R0 + h * double(first);
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + up);
      if (pred(mid))
        up = mid;
      else
        lo = mid;
    }
    return up;
  }
}

struct Tables {
  double h;
  Eigen::VectorXd r, phi, Phi, g, fp, f;
  double ell, phi_R0;
  Eigen::Index n1;  // index of the node at R1
};

Tables tabulate(const ProfileFn& kappa, double R0, double R1, double diff,
                double h_request) {
  Tables t;
  const auto n1 = Eigen::Index(std::ceil(R1 / h_request));
  t.n1 = n1;
  t.h = R1 / double(n1);
  const Eigen::Index n = 4 * n1;  // r_max = 4 R1
  t.r.resize(n + 1);
  Eigen::VectorXd integrand(n + 1);
  for (Eigen::Index i = 0; i <= n; ++i) {
    t.r[i] = t.h * double(i);
    const double k = kappa(t.r[i]);
    integrand[i] = t.r[i] * std::max(0.0, -k);
  }
  const Eigen::VectorXd I = cumtrapz_uniform(t.h, integrand);
  t.phi = (-I.array() / (2.0 * diff)).exp();
  t.Phi = cumtrapz_uniform(t.h, t.phi);
  Eigen::VectorXd q = t.Phi.array() / t.phi.array();
  const Eigen::VectorXd Q = cumtrapz_uniform(t.h, q);
  t.ell = 1.0 / Q[n1];
  t.g.resize(n + 1);
  for (Eigen::Index i = 0; i <= n; ++i)
    t.g[i] = 1.0 - 0.5 * t.ell * Q[std::min(i, n1)];
  t.fp = t.phi.array() * t.g.array();
  t.f = cumtrapz_uniform(t.h, t.fp);
  // phi at R0 (not a node in general): trapezoid up to the straddling node
  // plus a linear partial panel.
  const auto i0 = Eigen::Index(std::floor(R0 / t.h));
  double IR0;
  if (i0 >= n) {
    IR0 = I[n];
  } else {
    const double frac = R0 - t.r[i0];
    const double k_at = kappa(R0);
    const double integ_at = R0 * std::max(0.0, -k_at);
    IR0 = I[i0] + 0.5 * frac * (integrand[i0] + integ_at);
  }
  t.phi_R0 = std::exp(-IR0 / (2.0 * diff));
  return t;
}

}  // namespace

DistortedMetric build_metric(const PotentialSpec& v, double sigma0,
                             double quad_step,
                             std::optional<double> diff_override) {
  if (!v.kappa) throw std::invalid_argument("build_metric: potential has no kappa");
  if (sigma0 <= 0) throw std::invalid_argument("build_metric: sigma0 must be > 0");
  if (quad_step <= 0) throw std::invalid_argument("build_metric: quad_step must be > 0");
  const double diff = diff_override.value_or(sigma0 * sigma0);
  if (diff <= 0) throw std::invalid_argument("build_metric: diff must be > 0");

  const double R0 = find_R0(v.kappa, v.kappa_liminf);
  const double R1 = find_R1(v.kappa, R0, v.kappa_liminf, diff);

  Tables cur = tabulate(v.kappa, R0, R1, diff, quad_step);
  for (int level = 0;; ++level) {
    if (level >= kMaxRefine || 8.0 * R1 / cur.h > 3e7)
      throw std::runtime_error("build_metric: quadrature failed to settle");
    Tables next = tabulate(v.kappa, R0, R1, diff, cur.h / 2);
    const double d_ell = std::abs(next.ell - cur.ell) / std::abs(next.ell);
    const double d_phi =
        std::abs(next.phi_R0 - cur.phi_R0) / std::abs(next.phi_R0);
    const double d_f = std::abs(next.f[next.f.size() - 1] - cur.f[cur.f.size() - 1]) /
                       std::abs(next.f[next.f.size() - 1]);
    cur = std::move(next);
    if (std::max({d_ell, d_phi, d_f}) < kRefineTol) break;
  }

  DistortedMetric m;
  m.sigma0 = sigma0;
  m.diff = diff;
  m.R0 = R0;
  m.R1 = R1;
  m.ell = cur.ell;
  m.phi_R0 = cur.phi_R0;
  m.grid_step = cur.h;
  m.r = std::move(cur.r);
  m.r_max = m.r[m.r.size() - 1];
  m.f = std::move(cur.f);
  m.fp = std::move(cur.fp);
  m.phi = std::move(cur.phi);
  m.g = std::move(cur.g);
  return m;
}

double eval_f(const DistortedMetric& m, double r) {
  if (r < 0) throw std::invalid_argument("eval_f: negative radius");
  if (r >= m.r_max)
    return m.f[m.f.size() - 1] + m.fp[m.fp.size() - 1] * (r - m.r_max);
  const double t = r / m.grid_step;
  const auto i = Eigen::Index(std::floor(t));
  const double frac = t - double(i);
  return (1.0 - frac) * m.f[i] + frac * m.f[i + 1];
}

double eval_fp(const DistortedMetric& m, double r) {
  if (r < 0) throw std::invalid_argument("eval_fp: negative radius");
  if (r >= m.r_max) return m.fp[m.fp.size() - 1];
  const double t = r / m.grid_step;
  const auto i = Eigen::Index(std::floor(t));
  const double frac = t - double(i);
  return (1.0 - frac) * m.fp[i] + frac * m.fp[i + 1];
}

Eigen::VectorXd default_check_grid(const DistortedMetric& m, int points) {
  // Off-node coverage of (0, 3 R1]: interior points shifted half a coarse
  // cell so the central-difference stencils sit away from R0 and R1.
  Eigen::VectorXd grid(points);
  const double top = 3.0 * m.R1;
  for (int i = 0; i < points; ++i)
    grid[i] = top * (double(i) + 0.5) / double(points);
  return grid;
}

ContractionReport check_contraction_inequality(const DistortedMetric& m,
                                               const PotentialSpec& v,
                                               const Eigen::VectorXd& r_grid) {
  if (r_grid.size() == 0)
    throw std::invalid_argument("contraction check: empty grid");
  for (Eigen::Index i = 0; i < r_grid.size(); ++i)
    if (r_grid[i] <= 0 || r_grid[i] > m.r_max)
      throw std::invalid_argument("contraction check: radius outside (0, r_max]");
  // Fresh tabulation at a quarter of the converged step; f'' by central
  // differences of the cumulative table equals the centered derivative of
  // the tabulated f' and carries O(h^2) error.
  const Tables t = tabulate(v.kappa, m.R0, m.R1, m.diff, m.grid_step / 4);
  const Eigen::Index n = t.f.size() - 1;
  ContractionReport rep;
  rep.worst_margin = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < r_grid.size(); ++k) {
    Eigen::Index i = Eigen::Index(std::llround(r_grid[k] / t.h));
    i = std::max<Eigen::Index>(1, std::min(n - 1, i));
    const double fpp = (t.f[i + 1] - 2.0 * t.f[i] + t.f[i - 1]) / (t.h * t.h);
    const double r = t.r[i];
    const double lhs = fpp - r * v.kappa(r) / (2.0 * m.diff) * t.fp[i];
    const double margin = lhs + 0.5 * t.ell * t.f[i];
    rep.max_abs_fpp = std::max(rep.max_abs_fpp, std::abs(fpp));
    if (margin > rep.worst_margin) {
      rep.worst_margin = margin;
      rep.worst_r = r;
    }
  }
  rep.tol = 1e-6 * rep.max_abs_fpp;
  rep.pass = rep.worst_margin <= rep.tol;
  return rep;
}

double rate_c(const DistortedMetric& m, const InteractionSpec& w) {
  return m.ell * m.sigma0 * m.sigma0 - 4.0 * w.lipschitz / m.phi_R0;
}

ThresholdReport sigma0_threshold(const PotentialSpec& v,
                                 const InteractionSpec& w, double lo,
                                 double hi, double tol, int grid_points) {
  if (!(lo > 0) || !(hi > lo))
    throw std::invalid_argument("sigma0_threshold: need 0 < lo < hi");
  if (grid_points < 2)
    throw std::invalid_argument("sigma0_threshold: need >= 2 grid points");
  auto c_at = [&](double s0) {
    return rate_c(build_metric(v, s0), w);
  };
  ThresholdReport rep;
  rep.grid.resize(grid_points, 2);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < grid_points; ++i) {
    const double s0 =
        std::exp(llo + (lhi - llo) * double(i) / double(grid_points - 1));
    rep.grid(i, 0) = s0;
    rep.grid(i, 1) = c_at(s0);
  }
  if (rep.grid(0, 1) > 0) {
    rep.boundary_positive = true;  // positive from the left end onward
    return rep;
  }
  int first_pos = -1;
  for (int i = 1; i < grid_points; ++i)
    if (rep.grid(i, 1) > 0) {
      first_pos = i;
      break;
    }
  if (first_pos < 0)
    throw NoThresholdError("sigma0_threshold: c <= 0 across the interval");
  double a = rep.grid(first_pos - 1, 0), b = rep.grid(first_pos, 0);
  while (b - a > tol) {
    const double mid = 0.5 * (a + b);
    if (c_at(mid) > 0)
      b = mid;
    else
      a = mid;
  }
  rep.threshold = 0.5 * (a + b);
  return rep;
}

}  // namespace mkvcn
