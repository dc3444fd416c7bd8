#include "doctest.h"

#include "mkvcn/errors.hpp"
#include "mkvcn/harness.hpp"
#include "mkvcn/model.hpp"
#include "mkvcn/stationary.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace mkvcn;

TEST_CASE("functional values") {
  Eigen::MatrixXd m(4, 1);
  m << 1.0, 2.0, 3.0, 6.0;  // mean 3
  const GeneratorFunctional fx = linear_functional(
      [](const Eigen::VectorXd& x) { return x[0]; },
      [](const Eigen::VectorXd&) { return Eigen::VectorXd::Ones(1); },
      [](const Eigen::VectorXd&) { return 0.0; });
  CHECK(functional_value(fx, m) == doctest::Approx(3.0));
  const GeneratorFunctional var = variance_functional();
  // spread = mean (x - 3)^2 = (4 + 1 + 0 + 9)/4 = 3.5
  CHECK(functional_value(var, m) == doctest::Approx(3.5));
}

TEST_CASE("generator on linear functionals matches hand computation") {
  const PotentialSpec v = make_quadratic(1, 1.0);
  const InteractionSpec w = make_no_interaction();
  std::mt19937 gen(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(200, 1);
  for (int i = 0; i < 200; ++i) m(i, 0) = gauss(gen) + 0.3;

  const double sigma = 0.4, sigma0 = 0.3;

  // phi(x) = x: M F = mean(-x)
  const GeneratorFunctional fx = linear_functional(
      [](const Eigen::VectorXd& x) { return x[0]; },
      [](const Eigen::VectorXd&) { return Eigen::VectorXd::Ones(1); },
      [](const Eigen::VectorXd&) { return 0.0; });
  CHECK(generator_apply(fx, m, v, w, sigma, sigma0) ==
        doctest::Approx(-m.col(0).mean()).epsilon(1e-12));

  // phi(x) = x^2: M F = -2 mean(x^2) + sigma^2 + sigma0^2
  const GeneratorFunctional fx2 = linear_functional(
      [](const Eigen::VectorXd& x) { return x.squaredNorm(); },
      [](const Eigen::VectorXd& x) { return Eigen::VectorXd(2.0 * x); },
      [](const Eigen::VectorXd&) { return 2.0; });
  const double expect =
      -2.0 * m.col(0).array().square().mean() + sigma * sigma + sigma0 * sigma0;
  CHECK(generator_apply(fx2, m, v, w, sigma, sigma0) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("generator on the variance functional") {
  const PotentialSpec v = make_quadratic(1, 2.0);
  const InteractionSpec w = make_quadratic_interaction(1.0);
  const GeneratorFunctional var = variance_functional();

  // Dirac ensemble, sigma = 0: every term vanishes (common noise cancels).
  Eigen::MatrixXd dirac = Eigen::MatrixXd::Constant(50, 1, 0.7);
  CHECK(generator_apply(var, dirac, v, w, 0.0, 0.8) ==
        doctest::Approx(0.0).scale(1.0));

  // Spread ensemble: 2 mean((x - xbar) . b) + sigma^2 d with
  // b = -(2 + 1)(x - xbar) - 2 xbar ... the mean part drops in the inner
  // product, leaving -2 (theta + alpha) spread + sigma^2.
  std::mt19937 gen(6);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(300, 1);
  for (int i = 0; i < 300; ++i) m(i, 0) = 2.0 * gauss(gen) - 1.0;
  const double bar = m.col(0).mean();
  const double spread = (m.col(0).array() - bar).square().mean();
  const double sigma = 0.5;
  const double expect = -2.0 * (2.0 + 1.0) * spread + sigma * sigma;
  CHECK(generator_apply(var, m, v, w, sigma, 0.9) ==
        doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("stationarity residual accepts balanced series and rejects drift") {
  // Deterministic construction: per-realization constants, symmetric around
  // zero, so every statistic is exact.
  const int R = 8, T = 61;
  Eigen::VectorXd times(T);
  for (int i = 0; i < T; ++i) times[i] = 0.1 * i;

  std::vector<Eigen::VectorXd> F_flat, MF, F_drift;
  for (int r = 0; r < R; ++r) {
    const double c = 1e-4 * (r - 3.5);  // sums to zero across realizations
    F_flat.push_back(Eigen::VectorXd::Constant(T, 1.0 + 0.01 * r));
    MF.push_back(Eigen::VectorXd::Constant(T, c));
    F_drift.push_back(times);  // F grows linearly but MF stays near zero
  }
  const ResidualReport ok = stationarity_residual(F_flat, MF, times, 1.0);
  CHECK(ok.stationary_found);
  CHECK(ok.t_stationary == doctest::Approx(0.0));
  CHECK(ok.transient_z == doctest::Approx(0.0).scale(1.0));
  CHECK(ok.tail_z == doctest::Approx(0.0).scale(1.0));
  CHECK(ok.pass);

  const ResidualReport bad = stationarity_residual(F_drift, MF, times, 1.0);
  CHECK(std::abs(bad.transient_z) > 3.0);
  CHECK_FALSE(bad.pass);
}

TEST_CASE("invariant structure estimator on synthetic snapshots") {
  std::mt19937 gen(12);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::MatrixXd> snaps;
  const int n = 400, S = 2000;
  for (int s = 0; s < S; ++s) {
    const double center = 0.5 * gauss(gen);  // variance 0.25
    Eigen::MatrixXd x(n, 1);
    for (int i = 0; i < n; ++i) x(i, 0) = center + 0.5 * gauss(gen);
    snaps.push_back(x);
  }
  const OuInvariantReport rep = ou_invariant_check(snaps, 0.25, 0.25, 0.10);
  CHECK(rep.pass);
  CHECK(rep.within == doctest::Approx(0.25).epsilon(0.05));
  CHECK(rep.mean_var == doctest::Approx(0.25).epsilon(0.10));
  CHECK(rep.snapshots == S);
}

TEST_CASE("gibbs cdf quadrature against the gaussian closed form") {
  // V quadratic curvature 1, sigma0 = 1: density ~ exp(-x^2), i.e. N(0, 1/2).
  const PotentialSpec v = make_quadratic(1, 1.0);
  const auto cdf = gibbs_cdf_1d(v, 1.0);
  CHECK(cdf(0.0) == doctest::Approx(0.5).epsilon(1e-6));
  auto normal_cdf = [](double x, double sd) {
    return 0.5 * std::erfc(-x / (sd * std::sqrt(2.0)));
  };
  for (double x : {-1.5, -0.5, 0.3, 1.0, 2.2})
    CHECK(cdf(x) == doctest::Approx(normal_cdf(x, std::sqrt(0.5))).epsilon(1e-5));
}

TEST_CASE("gibbs check accepts exact samples and flags lost collapse") {
  const PotentialSpec v = make_quadratic(1, 1.0);
  // Exact samples of N(0, 1/2) via a plain generator.
  std::mt19937 gen(77);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  const int R = 4, T = 4000;
  Eigen::VectorXd times(T);
  for (int i = 0; i < T; ++i) times[i] = 0.01 * i;
  std::vector<Eigen::VectorXd> barys, spreads, fat;
  for (int r = 0; r < R; ++r) {
    Eigen::VectorXd b(T);
    for (int i = 0; i < T; ++i) b[i] = gauss(gen);
    barys.push_back(b);
    spreads.push_back(Eigen::VectorXd::Zero(T));
    fat.push_back(Eigen::VectorXd::Constant(T, 1e-3));
  }
  const GibbsReport rep =
      gibbs_dirac_check(barys, spreads, times, v, 1.0, 1.0, 0.05);
  CHECK(rep.pass);
  CHECK(rep.collapse_ok);
  CHECK(rep.ks < 0.05);
  CHECK(rep.samples > 1000);

  const GibbsReport lost =
      gibbs_dirac_check(barys, fat, times, v, 1.0, 1.0, 0.05);
  CHECK_FALSE(lost.collapse_ok);
  CHECK_FALSE(lost.pass);
}

TEST_CASE("collapse rate fit on synthetic decay") {
  const int T = 300;
  Eigen::VectorXd times(T), spread(T);
  for (int i = 0; i < T; ++i) {
    times[i] = 0.005 * i;
    spread[i] = std::max(std::exp(-12.0 * times[i]), 1e-16);
  }
  const RateFit rf = variance_collapse_rate(times, spread);
  CHECK(rf.rate == doctest::Approx(12.0).epsilon(0.01));

  // Collapses immediately: nothing to fit.
  Eigen::VectorXd dead = Eigen::VectorXd::Constant(T, 1e-16);
  dead[0] = 1.0;
  CHECK_THROWS_AS(variance_collapse_rate(times, dead), FitImpossibleError);
}

TEST_CASE("non-integrable density is rejected") {
  PotentialSpec v;
  v.kind = PotentialKind::custom_polynomial;
  v.dim = 1;
  v.value = [](const Eigen::VectorXd& x) { return -x.squaredNorm(); };
  v.grad = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(-2.0 * x); };
  v.kappa = [](double) { return -2.0; };
  v.kappa_liminf = -2.0;
  CHECK_THROWS_AS(gibbs_cdf_1d(v, 1.0), OracleUndefinedError);
}
