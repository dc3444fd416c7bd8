#include "mkvcn/ot.hpp"

#include "mkvcn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mkvcn {
namespace {

constexpr int kExactW2Cap = 4096;
constexpr int kExactDfCap = 512;
constexpr int kOuterCap = 256;

Eigen::VectorXd sorted(const Eigen::VectorXd& v) {
  Eigen::VectorXd s = v;
  std::sort(s.data(), s.data() + s.size());
  return s;
}

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() == 0)
    throw std::invalid_argument("point clouds must share a nonzero shape");
}

}  // namespace

std::vector<int> solve_assignment(int n,
                                  const std::function<double(int, int)>& cost,
                                  double* total) {
  if (n <= 0) throw std::invalid_argument("assignment: empty problem");
  const double inf = std::numeric_limits<double>::infinity();
  // Columns are 1..n with 0 as the virtual root; p[j] = row matched to j.
  std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
  std::vector<int> p(n + 1, -1), way(n + 1, 0);
  for (int i = 0; i < n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j - 1) - u[i0 + 1] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (j1 < 0 || !std::isfinite(delta))
        throw std::invalid_argument("assignment: non-finite costs");
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j] + 1] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != -1);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> perm(n, -1);
  for (int j = 1; j <= n; ++j) perm[p[j]] = j - 1;
  if (total) {
    double s = 0;
    for (int i = 0; i < n; ++i) s += cost(i, perm[i]);
    *total = s;
  }
  return perm;
}

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost, double* total) {
  if (cost.rows() != cost.cols())
    throw std::invalid_argument("assignment: cost matrix must be square");
  return solve_assignment(
      int(cost.rows()),
      [&cost](int i, int j) { return cost(i, j); }, total);
}

double w_p_1d(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double p) {
  if (a.size() != b.size() || a.size() == 0)
    throw std::invalid_argument("w_p_1d: need equal nonzero sizes");
  if (p < 1) throw std::invalid_argument("w_p_1d: p >= 1");
  const Eigen::VectorXd sa = sorted(a), sb = sorted(b);
  const Eigen::ArrayXd gap = (sa - sb).array().abs();
  if (p == 1) return gap.mean();
  if (p == 2) return std::sqrt(gap.square().mean());
  return std::pow(gap.pow(p).mean(), 1.0 / p);
}

double w2_exact(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require_same_shape(a, b);
  const int n = int(a.rows());
  if (n > kExactW2Cap)
    throw SizeCapError("w2_exact: above size cap, use a sliced estimate");
  if (a.cols() == 1)
    return w_p_1d(a.col(0), b.col(0), 2.0);  // monotone coupling is optimal
  double total = 0;
  if (n <= 2048) {
    Eigen::MatrixXd cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    solve_assignment(cost, &total);
  } else {
    solve_assignment(
        n,
        [&](int i, int j) { return (a.row(i) - b.row(j)).squaredNorm(); },
        &total);
  }
  return std::sqrt(total / double(n));
}

double df_paired(const DistortedMetric& m, const Eigen::MatrixXd& a,
                 const Eigen::MatrixXd& b) {
  require_same_shape(a, b);
  double s = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    s += eval_f(m, (a.row(i) - b.row(i)).norm());
  return s / double(a.rows());
}

DfEstimate df_1d_estimate(const DistortedMetric& m, const Eigen::VectorXd& a,
                          const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0)
    throw std::invalid_argument("df_1d_estimate: need equal nonzero sizes");
  const int n = int(a.size());
  const Eigen::VectorXd sa = sorted(a), sb = sorted(b);
  double monotone = 0;
  for (int i = 0; i < n; ++i) monotone += eval_f(m, std::abs(sa[i] - sb[i]));
  monotone /= double(n);
  DfEstimate est;
  if (n <= kExactDfCap) {
    double total = 0;
    solve_assignment(
        n, [&](int i, int j) { return eval_f(m, std::abs(a[i] - b[j])); },
        &total);
    est.value = std::min(total / double(n), monotone);
    est.exact = true;
  } else {
    est.value = monotone;
    est.exact = false;
  }
  return est;
}

OuterDistanceResult outer_distance(const std::vector<Eigen::MatrixXd>& ps,
                                   const std::vector<Eigen::MatrixXd>& qs,
                                   InnerDistance inner,
                                   const DistortedMetric* m) {
  if (ps.size() != qs.size() || ps.empty())
    throw std::invalid_argument("outer_distance: need equal nonzero families");
  const int M = int(ps.size());
  if (M > kOuterCap)
    throw SizeCapError("outer_distance: above realization cap");
  if ((inner == InnerDistance::df_1d) && m == nullptr)
    throw std::invalid_argument("outer_distance: df inner needs a metric");
  if (inner != InnerDistance::w2_exact)
    for (const auto& p : ps)
      if (p.cols() != 1)
        throw std::invalid_argument("outer_distance: 1-d inner on d > 1 clouds");
  auto inner_dist = [&](const Eigen::MatrixXd& p,
                        const Eigen::MatrixXd& q) -> double {
    switch (inner) {
      case InnerDistance::w1_1d:
        return w_p_1d(p.col(0), q.col(0), 1.0);
      case InnerDistance::w2_1d:
        return w_p_1d(p.col(0), q.col(0), 2.0);
      case InnerDistance::w2_exact:
        return w2_exact(p, q);
      case InnerDistance::df_1d:
        return df_1d_estimate(*m, p.col(0), q.col(0)).value;
    }
    return 0;
  };
  const bool quadratic =
      inner == InnerDistance::w2_1d || inner == InnerDistance::w2_exact;
  Eigen::MatrixXd cost(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j) {
      const double dij = inner_dist(ps[i], qs[j]);
      cost(i, j) = quadratic ? dij * dij : dij;
    }
  double total = 0;
  solve_assignment(cost, &total);
  OuterDistanceResult out;
  out.assigned = quadratic ? std::sqrt(total / M) : total / M;
  const double diag = cost.diagonal().mean();
  out.paired = quadratic ? std::sqrt(diag) : diag;
  return out;
}

}  // namespace mkvcn
