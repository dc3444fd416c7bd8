#include "doctest.h"

#include "mkvcn/errors.hpp"
#include "mkvcn/metric.hpp"
#include "mkvcn/model.hpp"
#include "mkvcn/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

using namespace mkvcn;

TEST_CASE("assignment solver equals exhaustive search") {
  std::mt19937 gen(2024);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int inst = 0; inst < 60; ++inst) {
    const int n = 2 + inst % 7;
    Eigen::MatrixXd cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) cost(i, j) = uni(gen);
    double total = 0;
    const std::vector<int> perm = solve_assignment(cost, &total);
    // Valid permutation
    std::vector<int> seen(std::size_t(n), 0);
    for (int j : perm) seen[std::size_t(j)]++;
    for (int s : seen) CHECK(s == 1);
    // Matches the brute-force optimum
    std::vector<int> idx(std::size_t(n), 0);
    std::iota(idx.begin(), idx.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0;
      for (int i = 0; i < n; ++i) s += cost(i, idx[std::size_t(i)]);
      best = std::min(best, s);
    } while (std::next_permutation(idx.begin(), idx.end()));
    CHECK(total == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("assignment on a planted diagonal") {
  const int n = 6;
  Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(n, n, 5.0);
  for (int i = 0; i < n; ++i) cost(i, i) = 0.1;
  double total = 0;
  const std::vector<int> perm = solve_assignment(cost, &total);
  for (int i = 0; i < n; ++i) CHECK(perm[std::size_t(i)] == i);
  CHECK(total == doctest::Approx(0.6));
}

TEST_CASE("one-dimensional transport closed forms") {
  Eigen::VectorXd a(2), b(2);
  a << 0.0, 1.0;
  b << 2.0, 3.0;  // shift by 2
  CHECK(w_p_1d(a, b, 1.0) == doctest::Approx(2.0));
  CHECK(w_p_1d(a, b, 2.0) == doctest::Approx(2.0));
  // Unsorted input is sorted internally (monotone coupling).
  Eigen::VectorXd bs(2);
  bs << 3.0, 2.0;
  CHECK(w_p_1d(a, bs, 2.0) == doctest::Approx(2.0));
  // Crossing pairs: {0, 2} vs {1, 3}: W1 = 1
  Eigen::VectorXd c(2), d(2);
  c << 0.0, 2.0;
  d << 3.0, 1.0;
  CHECK(w_p_1d(c, d, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("exact W2: translation and 1-d agreement") {
  std::mt19937 gen(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a(40, 3);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = gauss(gen);
  Eigen::RowVectorXd t(3);
  t << 0.3, -0.7, 1.1;
  const Eigen::MatrixXd b = a.rowwise() + t;
  CHECK(w2_exact(a, b) == doctest::Approx(t.norm()).epsilon(1e-9));
  CHECK(w2_exact(a, a) == doctest::Approx(0.0).scale(1.0));

  Eigen::MatrixXd a1(30, 1), b1(30, 1);
  for (int i = 0; i < 30; ++i) {
    a1(i, 0) = gauss(gen);
    b1(i, 0) = 0.5 * gauss(gen) + 0.2;
  }
  CHECK(w2_exact(a1, b1) ==
        doctest::Approx(w_p_1d(a1.col(0), b1.col(0), 2.0)).epsilon(1e-9));
}

TEST_CASE("exact W2 size cap") {
  const Eigen::MatrixXd big = Eigen::MatrixXd::Zero(4097, 1);
  CHECK_THROWS_AS(w2_exact(big, big), SizeCapError);
}

TEST_CASE("distorted pairing distances") {
  const DistortedMetric m = build_metric(make_quadratic(1, 1.0), 1.0);
  Eigen::MatrixXd a(3, 1), b(3, 1);
  a << 0.0, 1.0, 2.0;
  b << 2.0, 1.0, 2.0;  // distances 2, 0, 0
  const double expect = eval_f(m, 2.0) / 3.0;
  CHECK(df_paired(m, a, b) == doctest::Approx(expect).epsilon(1e-12));

  // 1-d estimate: exact for small clouds; monotone pairing is optimal for a
  // concave increasing cost, so the sorted pairing value agrees.
  Eigen::VectorXd x(4), y(4);
  x << 0.0, 0.5, 2.0, -1.0;
  y << 1.0, 0.25, -0.5, 3.0;
  const DfEstimate est = df_1d_estimate(m, x, y);
  CHECK(est.exact);
  std::sort(x.data(), x.data() + 4);
  std::sort(y.data(), y.data() + 4);
  double manual = 0;
  for (int i = 0; i < 4; ++i) manual += eval_f(m, std::abs(x[i] - y[i]));
  manual /= 4;
  CHECK(est.value == doctest::Approx(manual).epsilon(1e-9));
  // Sandwich against W1.
  const double w1 = w_p_1d(x, y, 1.0);
  CHECK(est.value <= w1 + 1e-12);
  CHECK(est.value >= 0.5 * m.phi_R0 * w1 - 1e-12);
}

TEST_CASE("outer distance matches crossed realizations") {
  std::mt19937 gen(11);
  std::normal_distribution<double> gauss(0.0, 0.05);
  auto cloud = [&](double center) {
    Eigen::MatrixXd x(20, 1);
    for (int i = 0; i < 20; ++i) x(i, 0) = center + gauss(gen);
    return x;
  };
  // ps = {at 0, at 5}, qs = {at 5, at 0}: identity pairing is bad, the
  // assignment should cross and be near zero.
  const std::vector<Eigen::MatrixXd> ps = {cloud(0.0), cloud(5.0)};
  const std::vector<Eigen::MatrixXd> qs = {cloud(5.0), cloud(0.0)};
  const OuterDistanceResult r = outer_distance(ps, qs, InnerDistance::w2_1d);
  CHECK(r.assigned < 0.2);
  CHECK(r.paired > 4.0);
  CHECK(r.assigned <= r.paired + 1e-12);
}

TEST_CASE("outer distance size cap") {
  std::vector<Eigen::MatrixXd> ps(257, Eigen::MatrixXd::Zero(1, 1));
  CHECK_THROWS_AS(outer_distance(ps, ps, InnerDistance::w1_1d), SizeCapError);
}
