#pragma once

#include "proxflow/divergence.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

// Closed forms and brute-force solvers that the estimators are checked against.
namespace proxflow::oracles {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using divergence::FKind;

/// W2^2 between diagonal Gaussians: |m1 - m2|^2 + sum_i (sqrt(c1_i) - sqrt(c2_i))^2.
double gaussian_w2_squared(const Vector& m1, const Vector& c1, const Vector& m2,
                           const Vector& c2);

/// KL(N(m1, diag c1) || N(m2, diag c2)).
double gaussian_kl(const Vector& m1, const Vector& c1, const Vector& m2, const Vector& c2);

/// Monte-Carlo counterparts: KL as the sample mean of the log-density ratio,
/// W2^2 as the sum of per-coordinate sorted-quantile couplings.
double monte_carlo_gaussian_kl(const Vector& m1, const Vector& c1, const Vector& m2,
                               const Vector& c2, int samples, std::uint64_t seed);
double monte_carlo_gaussian_w2_squared(const Vector& m1, const Vector& c1, const Vector& m2,
                                       const Vector& c2, int samples, std::uint64_t seed);

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method with
/// potentials, O(n^3)). Returns assignment[row] = column.
std::vector<int> min_cost_assignment(const Matrix& cost);

/// Sum of cost(i, assignment[i]) accumulated in row order.
double assignment_cost(const Matrix& cost, const std::vector<int>& assignment);

/// Pairwise Euclidean distances between rows of a and rows of b.
Matrix euclidean_cost(const Matrix& a, const Matrix& b);

/// Exact empirical W1 between equal-size point clouds (n <= 256).
double empirical_w1_exact(const Matrix& a, const Matrix& b);

/// inf_nu D_f(nu || delta_y) + L W1(delta_x, nu) for |x - y| = dist, by
/// golden-section search over the mass a in (0, 1] that nu keeps on y.
double fgamma_two_dirac(FKind f, double lipschitz, double dist);
double fgamma_two_dirac_closed_form(FKind f, double lipschitz, double dist);

/// Central differences, one coordinate at a time.
Vector finite_diff_grad(const std::function<double(const Vector&)>& fn, const Vector& x,
                        double eps = 1e-5);

struct ConjugateGrid {
  double lo = 1e-6;
  double hi = 1e6;
  int points = 100000;
};

/// max over a log-spaced grid of x*y - f(x). Returns +inf when the maximum sits
/// on the grid's upper edge, i.e. the supremum is not attained inside the grid.
double conjugate_check(FKind f, double y, const ConjugateGrid& grid = {});

}  // namespace proxflow::oracles
