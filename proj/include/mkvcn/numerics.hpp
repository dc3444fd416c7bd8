#pragma once
// Small numeric helpers shared across modules: composite quadrature on
// uniform and non-uniform grids, least squares lines, order statistics,
// empirical-CDF distance, and an autocorrelation time estimate.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mkvcn {

// Trapezoid rule on a (possibly non-uniform) grid.
inline double trapz(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("trapz: need matching grids with >= 2 points");
  double s = 0;
  for (Eigen::Index i = 1; i < x.size(); ++i)
    s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return s;
}

// Cumulative trapezoid on a uniform grid with step h; out[0] = 0.
inline Eigen::VectorXd cumtrapz_uniform(double h, const Eigen::VectorXd& y) {
  Eigen::VectorXd out(y.size());
  out[0] = 0;
  for (Eigen::Index i = 1; i < y.size(); ++i)
    out[i] = out[i - 1] + 0.5 * h * (y[i] + y[i - 1]);
  return out;
}

struct LineFit {
  double slope = 0, intercept = 0, r2 = 0, slope_se = 0;
  int n = 0;
};

// Ordinary least squares y ~ slope x + intercept with residual-based slope SE.
inline LineFit ols_line(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("ols_line: need >= 2 matching points");
  const double n = double(x.size());
  const double mx = x.mean(), my = y.mean();
  const Eigen::VectorXd dx = x.array() - mx, dy = y.array() - my;
  const double sxx = dx.squaredNorm();
  if (sxx <= 0) throw std::invalid_argument("ols_line: degenerate abscissae");
  LineFit fit;
  fit.n = int(n);
  fit.slope = dx.dot(dy) / sxx;
  fit.intercept = my - fit.slope * mx;
  const double ss_tot = dy.squaredNorm();
  const double ss_res = (dy - fit.slope * dx).squaredNorm();
  fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  if (n > 2) fit.slope_se = std::sqrt(ss_res / (n - 2) / sxx);
  return fit;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  const std::size_t k = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + k, v.end());
  double hi = v[k];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + k - 1, v.end());
  return 0.5 * (hi + v[k - 1]);
}

// Sup distance between the empirical CDF of samples and a target CDF.
template <class Cdf>
double ks_statistic(std::vector<double> samples, Cdf&& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic: no samples");
  std::sort(samples.begin(), samples.end());
  const double n = double(samples.size());
  double worst = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    worst = std::max(worst, std::max(std::abs(f - double(i) / n),
                                     std::abs(double(i + 1) / n - f)));
  }
  return worst;
}

// Lag (in samples) at which the pooled autocorrelation first drops below 1/e.
// Series are demeaned individually; lags are pooled across series.
inline int autocorr_time_lags(const std::vector<Eigen::VectorXd>& series) {
  if (series.empty()) throw std::invalid_argument("autocorr: no series");
  const Eigen::Index len = series.front().size();
  if (len < 4) throw std::invalid_argument("autocorr: series too short");
  std::vector<Eigen::VectorXd> centered;
  centered.reserve(series.size());
  double var = 0;
  for (const auto& s : series) {
    if (s.size() != len) throw std::invalid_argument("autocorr: ragged series");
    centered.push_back(s.array() - s.mean());
    var += centered.back().squaredNorm() / double(len);
  }
  var /= double(series.size());
  if (var <= 0) return 1;
  const double target = var / std::exp(1.0);
  for (Eigen::Index lag = 1; lag < len; ++lag) {
    double acc = 0;
    for (const auto& s : centered)
      acc += s.head(len - lag).dot(s.tail(len - lag)) / double(len - lag);
    acc /= double(series.size());
    if (acc < target) return int(lag);
  }
  return int(len - 1);
}

}  // namespace mkvcn
