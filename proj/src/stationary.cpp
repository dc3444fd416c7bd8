#include "mkvcn/stationary.hpp"

#include "mkvcn/errors.hpp"
#include "mkvcn/harness.hpp"
#include "mkvcn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace mkvcn {

namespace {

double safe_z(double mean, double se) {
  if (se > 0) return mean / se;
  return mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

struct MeanSe {
  double mean = 0, se = 0;
};

MeanSe mean_se(const Eigen::VectorXd& v) {
  const auto n = static_cast<double>(v.size());
  MeanSe out;
  out.mean = v.mean();
  if (v.size() < 2) return out;
  const double ss = (v.array() - out.mean).square().sum() / (n - 1.0);
  out.se = std::sqrt(ss / n);
  return out;
}

double normal_cdf(double x, double mu, double sd) {
  return 0.5 * std::erfc(-(x - mu) / (sd * std::sqrt(2.0)));
}

}  // namespace

GeneratorFunctional linear_functional(
    std::function<double(const Eigen::VectorXd&)> phi, GradFn grad,
    std::function<double(const Eigen::VectorXd&)> lap) {
  if (!phi || !grad || !lap)
    throw std::invalid_argument("linear functional needs phi, grad phi, lap phi");
  GeneratorFunctional f;
  f.kind = GeneratorFunctional::Kind::linear;
  f.phi = std::move(phi);
  f.phi_grad = std::move(grad);
  f.phi_lap = std::move(lap);
  return f;
}

GeneratorFunctional variance_functional() {
  GeneratorFunctional f;
  f.kind = GeneratorFunctional::Kind::variance;
  return f;
}

double functional_value(const GeneratorFunctional& f, const Eigen::MatrixXd& m) {
  if (m.rows() < 1) throw std::invalid_argument("empty empirical measure");
  switch (f.kind) {
    case GeneratorFunctional::Kind::linear: {
      double acc = 0;
      for (Eigen::Index i = 0; i < m.rows(); ++i) acc += f.phi(m.row(i));
      return acc / static_cast<double>(m.rows());
    }
    case GeneratorFunctional::Kind::variance: {
      const Eigen::RowVectorXd bar = m.colwise().mean();
      return (m.rowwise() - bar).rowwise().squaredNorm().mean();
    }
    case GeneratorFunctional::Kind::custom:
      if (!f.value_fn) throw std::invalid_argument("custom functional lacks value_fn");
      return f.value_fn(m);
  }
  throw std::logic_error("unreachable");
}

double generator_apply(const GeneratorFunctional& f, const Eigen::MatrixXd& m,
                       const PotentialSpec& v, const InteractionSpec& w,
                       double sigma, double sigma0) {
  const Eigen::Index n = m.rows(), d = m.cols();
  if (n < 1) throw std::invalid_argument("empty empirical measure");
  if (d != v.dim) throw std::invalid_argument("measure dimension != potential dimension");
  if (sigma < 0 || sigma0 < 0) throw std::invalid_argument("negative noise intensity");

  Eigen::MatrixXd b(n, d), tmp(n, d);
  grad_rows(v, m, b);
  interaction_rows(w, m, m, tmp);
  b = -(b + tmp);  // drift rows b(x_i, m)

  const double diff_half = 0.5 * (sigma * sigma + sigma0 * sigma0);
  switch (f.kind) {
    case GeneratorFunctional::Kind::linear: {
      // <m, grad phi . b + ((sigma^2+sigma0^2)/2) lap phi>; no mm-term.
      double acc = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd xi = m.row(i);
        acc += f.phi_grad(xi).dot(b.row(i)) + diff_half * f.phi_lap(xi);
      }
      return acc / static_cast<double>(n);
    }
    case GeneratorFunctional::Kind::variance: {
      // D_m F = 2(x - mean), div_x D_m F = 2d, Tr D^2_mm F = -2d: the
      // common-noise halves cancel and only sigma^2 d survives.
      const Eigen::RowVectorXd bar = m.colwise().mean();
      const double cross =
          ((m.rowwise() - bar).array() * b.array()).rowwise().sum().mean();
      return 2.0 * cross + sigma * sigma * static_cast<double>(d);
    }
    case GeneratorFunctional::Kind::custom: {
      if (!f.dm || !f.div_dm || !f.tr_dmm)
        throw std::invalid_argument("custom functional lacks derivative oracles");
      double first = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd xi = m.row(i);
        first += f.dm(m, xi).dot(b.row(i)) + diff_half * f.div_dm(m, xi);
      }
      first /= static_cast<double>(n);
      double second = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          second += f.tr_dmm(m, m.row(i), m.row(j));
      second *= 0.5 * sigma0 * sigma0 / static_cast<double>(n * n);
      return first + second;
    }
  }
  throw std::logic_error("unreachable");
}

ResidualReport stationarity_residual(const std::vector<Eigen::VectorXd>& F_series,
                                     const std::vector<Eigen::VectorXd>& MF_series,
                                     const Eigen::VectorXd& times,
                                     double rate_hint) {
  const auto R = static_cast<Eigen::Index>(F_series.size());
  const Eigen::Index T = times.size();
  if (R < 2) throw std::invalid_argument("need at least 2 realizations");
  if (MF_series.size() != F_series.size())
    throw std::invalid_argument("F and MF series count mismatch");
  if (T < 6) throw std::invalid_argument("series too short");
  if (!(rate_hint > 0)) throw std::invalid_argument("rate_hint must be positive");
  for (Eigen::Index r = 0; r < R; ++r)
    if (F_series[r].size() != T || MF_series[r].size() != T)
      throw std::invalid_argument("series length != time grid length");

  ResidualReport rep;

  // Evolution identity per realization: F(T) - F(0) = int_0^T (M F)(m_s) ds
  // in conditional expectation; the paired residuals should be mean zero.
  Eigen::VectorXd resid(R);
  for (Eigen::Index r = 0; r < R; ++r)
    resid[r] = (F_series[r][T - 1] - F_series[r][0]) - trapz(times, MF_series[r]);
  const MeanSe tr = mean_se(resid);
  rep.transient_z = safe_z(tr.mean, tr.se);

  // Stationary window: consecutive blocks of length ~5/rate whose means
  // agree within one standard error.
  const double dt = (times[T - 1] - times[0]) / static_cast<double>(T - 1);
  Eigen::Index n_win = static_cast<Eigen::Index>(std::lround(5.0 / rate_hint / dt));
  n_win = std::clamp<Eigen::Index>(n_win, 2, T / 3);

  auto window_stat = [&](Eigen::Index lo, Eigen::Index len) {
    Eigen::VectorXd w(R);
    for (Eigen::Index r = 0; r < R; ++r) w[r] = MF_series[r].segment(lo, len).mean();
    return mean_se(w);
  };

  Eigen::Index tail_lo = -1;
  for (Eigen::Index k = 0; (k + 2) * n_win <= T; ++k) {
    const MeanSe a = window_stat(k * n_win, n_win);
    const MeanSe b = window_stat((k + 1) * n_win, n_win);
    if (std::abs(a.mean - b.mean) < std::max(a.se, b.se)) {
      tail_lo = k * n_win;
      rep.stationary_found = true;
      rep.t_stationary = times[tail_lo];
      break;
    }
  }
  if (tail_lo < 0) tail_lo = (4 * T) / 5;  // reported, but pass stays false

  const MeanSe tail = window_stat(tail_lo, T - tail_lo);
  rep.tail_mean = tail.mean;
  rep.tail_se = tail.se;
  rep.tail_z = safe_z(tail.mean, tail.se);
  rep.pass = rep.stationary_found && std::abs(rep.transient_z) <= 3.0 &&
             std::abs(rep.tail_z) <= 3.0;
  return rep;
}

OuInvariantReport ou_invariant_check(const std::vector<Eigen::MatrixXd>& snapshots,
                                     double target_within, double target_mean_var,
                                     double rel_tol) {
  if (snapshots.empty()) throw std::invalid_argument("no snapshots");
  if (!(target_within > 0) || !(target_mean_var > 0))
    throw std::invalid_argument("targets must be positive");
  const Eigen::Index d = snapshots.front().cols();
  const Eigen::Index n = snapshots.front().rows();
  if (n < 2) throw std::invalid_argument("snapshots need at least 2 particles");
  for (const auto& s : snapshots)
    if (s.cols() != d || s.rows() != n)
      throw std::invalid_argument("snapshots must share a common shape");

  OuInvariantReport rep;
  rep.snapshots = static_cast<int>(snapshots.size());

  double within_acc = 0;
  std::vector<double> centers;
  centers.reserve(snapshots.size() * static_cast<std::size_t>(d));
  for (const auto& s : snapshots) {
    const Eigen::RowVectorXd bar = s.colwise().mean();
    within_acc += (s.rowwise() - bar).squaredNorm() /
                  static_cast<double>((n - 1) * d);
    for (Eigen::Index c = 0; c < d; ++c) centers.push_back(bar[c]);
  }
  rep.within = within_acc / static_cast<double>(snapshots.size());
  rep.within_rel_err = std::abs(rep.within / target_within - 1.0);

  // Ensemble means carry a within/N sampling contribution on top of the
  // common-noise variance; remove it before comparing.
  Eigen::Map<const Eigen::VectorXd> cvec(centers.data(),
                                         static_cast<Eigen::Index>(centers.size()));
  const double cmean = cvec.mean();
  double cvar = 0;
  if (cvec.size() > 1)
    cvar = (cvec.array() - cmean).square().sum() /
           static_cast<double>(cvec.size() - 1);
  rep.mean_var = cvar - rep.within / static_cast<double>(n);
  rep.mean_var_rel_err = std::abs(rep.mean_var / target_mean_var - 1.0);

  std::vector<double> sorted(centers);
  std::sort(sorted.begin(), sorted.end());
  const double sd0 = std::sqrt(target_mean_var);
  rep.ks_centers =
      ks_statistic(sorted, [&](double x) { return normal_cdf(x, 0.0, sd0); });

  rep.pass = rep.within_rel_err <= rel_tol && rep.mean_var_rel_err <= rel_tol;
  return rep;
}

std::function<double(double)> gibbs_cdf_1d(const PotentialSpec& v, double sigma0) {
  if (v.dim != 1) throw std::invalid_argument("density is one-dimensional");
  if (!(sigma0 > 0)) throw std::invalid_argument("sigma0 must be positive");
  if (!v.value) throw std::invalid_argument("potential lacks a value oracle");

  const double beta = 2.0 / (sigma0 * sigma0);
  auto dens = [&v, beta](double x) {
    Eigen::VectorXd p(1);
    p[0] = x;
    return std::exp(-beta * v.value(p));
  };

  // Expand the quadrature domain until the boundary density is negligible
  // relative to the interior peak; diverging tails mean the density is not
  // normalizable.
  double half = 2.0;
  double peak = 0;
  for (int i = 0; i <= 400; ++i) {
    peak = std::max(peak, dens(-half + 2.0 * half * i / 400.0));
  }
  if (!(peak > 0)) throw OracleUndefinedError("density vanishes on the core domain");
  while (std::max(dens(-half), dens(half)) > 1e-14 * peak) {
    half *= 1.5;
    if (half > 1e4)
      throw OracleUndefinedError("density tail does not decay: not integrable");
  }

  const int n = 20000;  // trapezoid panels over [-half, half]
  const double h = 2.0 * half / n;
  auto grid = std::make_shared<Eigen::VectorXd>(n + 1);
  auto cdf = std::make_shared<Eigen::VectorXd>(n + 1);
  Eigen::VectorXd y(n + 1);
  for (int i = 0; i <= n; ++i) {
    (*grid)[i] = -half + h * i;
    y[i] = dens((*grid)[i]);
  }
  *cdf = cumtrapz_uniform(h, y);
  const double total = (*cdf)[n];
  if (!(total > 0) || !std::isfinite(total))
    throw OracleUndefinedError("density failed to normalize");
  *cdf /= total;

  return [grid, cdf, half, h, n](double x) {
    if (x <= -half) return 0.0;
    if (x >= half) return 1.0;
    const double s = (x + half) / h;
    const auto i = std::min<Eigen::Index>(static_cast<Eigen::Index>(s), n - 1);
    const double w = s - static_cast<double>(i);
    return (1.0 - w) * (*cdf)[i] + w * (*cdf)[i + 1];
  };
}

GibbsReport gibbs_dirac_check(const std::vector<Eigen::VectorXd>& barycenters,
                              const std::vector<Eigen::VectorXd>& spreads,
                              const Eigen::VectorXd& times,
                              const PotentialSpec& v, double sigma0,
                              double burn_in, double ks_tol) {
  const auto R = barycenters.size();
  const Eigen::Index T = times.size();
  if (R == 0 || spreads.size() != R)
    throw std::invalid_argument("barycenter/spread series count mismatch");
  for (std::size_t r = 0; r < R; ++r)
    if (barycenters[r].size() != T || spreads[r].size() != T)
      throw std::invalid_argument("series length != time grid length");
  Eigen::Index lo = 0;
  while (lo < T && times[lo] < burn_in) ++lo;
  if (T - lo < 10) throw std::invalid_argument("burn-in leaves too few samples");

  const auto cdf = gibbs_cdf_1d(v, sigma0);

  GibbsReport rep;

  // Thin at the fitted autocorrelation time of the post-burn-in barycenter.
  std::vector<Eigen::VectorXd> tails(R);
  for (std::size_t r = 0; r < R; ++r) tails[r] = barycenters[r].segment(lo, T - lo);
  rep.tau_lags = autocorr_time_lags(tails);
  const auto stride = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::ceil(rep.tau_lags)));
  rep.thin_stride = static_cast<double>(stride);

  std::vector<double> samples;
  for (std::size_t r = 0; r < R; ++r)
    for (Eigen::Index i = 0; i < tails[r].size(); i += stride)
      samples.push_back(tails[r][i]);
  std::sort(samples.begin(), samples.end());
  rep.samples = static_cast<int>(samples.size());
  rep.ks = ks_statistic(samples, cdf);

  double worst = 0;
  for (std::size_t r = 0; r < R; ++r)
    worst = std::max(worst, spreads[r].segment(lo, T - lo).maxCoeff());
  rep.max_tail_spread = worst;
  rep.collapse_ok = worst < 1e-8;

  rep.pass = rep.ks < ks_tol && rep.collapse_ok;
  return rep;
}

RateFit variance_collapse_rate(const Eigen::VectorXd& times,
                               const Eigen::VectorXd& mean_spread) {
  if (times.size() != mean_spread.size())
    throw std::invalid_argument("times/series length mismatch");
  // Keep the numerically meaningful part of the decay; below ~1e-13 the
  // series is rounding noise around the collapsed state.
  Eigen::Index keep = 0;
  while (keep < mean_spread.size() && mean_spread[keep] > 1e-13) ++keep;
  if (keep < 10)
    throw FitImpossibleError("spread collapses numerically almost immediately");
  return fit_rate(times.head(keep), mean_spread.head(keep), 0.0);
}

}  // namespace mkvcn
