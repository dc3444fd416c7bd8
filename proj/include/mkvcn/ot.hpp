#pragma once
// Exact optimal-transport distances between equally weighted point clouds:
// quantile (sort) couplings in one dimension, an O(N^3) assignment solver
// for exact couplings in any dimension, paired and assignment-optimal
// concave-cost distances built from a distorted metric's f, and an outer
// distance between collections of empirical measures.

#include "mkvcn/metric.hpp"

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace mkvcn {

// Minimize sum_i cost(i, perm[i]) over permutations (square, finite costs).
// Shortest-augmenting-path with dual potentials, O(n^3).
std::vector<int> solve_assignment(
    int n, const std::function<double(int, int)>& cost, double* total = nullptr);
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost,
                                  double* total = nullptr);

// One-dimensional Wasserstein-p via the monotone (sorted) coupling, p >= 1.
double w_p_1d(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double p);

// Exact W2 between equal-size clouds (rows = points); capped at N <= 4096,
// larger inputs raise SizeCapError suggesting a sliced estimate.
double w2_exact(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Mean distorted distance of the index pairing: (1/N) sum f(|a_i - b_i|).
double df_paired(const DistortedMetric& m, const Eigen::MatrixXd& a,
                 const Eigen::MatrixXd& b);

struct DfEstimate {
  double value = 0;
  bool exact = false;  // assignment-optimal; otherwise a monotone upper bound
};

// Distorted transport distance between 1-d clouds: exact assignment under
// the concave cost for N <= 512, otherwise the monotone-coupling estimate
// (an upper bound; flagged non-exact). Always sandwiched between
// phi(R0)/2 * W1 and W1.
DfEstimate df_1d_estimate(const DistortedMetric& m, const Eigen::VectorXd& a,
                          const Eigen::VectorXd& b);

enum class InnerDistance { w1_1d, w2_1d, w2_exact, df_1d };

struct OuterDistanceResult {
  double assigned = 0;  // optimal matching of realizations
  double paired = 0;    // identity matching (upper bound)
};

// Distance between two families of empirical measures (one entry per
// realization), matching realizations by assignment; capped at 256 entries.
// For w2 inners the matching minimizes mean squared inner distance and the
// result is its square root; otherwise the mean inner distance.
OuterDistanceResult outer_distance(const std::vector<Eigen::MatrixXd>& ps,
                                   const std::vector<Eigen::MatrixXd>& qs,
                                   InnerDistance inner,
                                   const DistortedMetric* m = nullptr);

}  // namespace mkvcn
