#include "proxflow/oracles.hpp"

#include "proxflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace proxflow::oracles {

namespace {

void check_gaussian_args(const Vector& m1, const Vector& c1, const Vector& m2,
                         const Vector& c2) {
  if (m1.size() != c1.size() || m2.size() != c2.size() || m1.size() != m2.size()) {
    throw std::invalid_argument("gaussian oracle: dimension mismatch");
  }
  if ((c1.array() <= 0.0).any() || (c2.array() <= 0.0).any()) {
    throw std::invalid_argument("gaussian oracle: variances must be positive");
  }
}

Matrix gaussian_draws(const Vector& m, const Vector& c, int n, std::uint64_t seed) {
  Matrix z = standard_normal(n, m.size(), seed);
  return (z * c.cwiseSqrt().asDiagonal()).rowwise() + m.transpose();
}

}  // namespace

double gaussian_w2_squared(const Vector& m1, const Vector& c1, const Vector& m2,
                           const Vector& c2) {
  check_gaussian_args(m1, c1, m2, c2);
  return (m1 - m2).squaredNorm() + (c1.cwiseSqrt() - c2.cwiseSqrt()).squaredNorm();
}

double gaussian_kl(const Vector& m1, const Vector& c1, const Vector& m2, const Vector& c2) {
  check_gaussian_args(m1, c1, m2, c2);
  const auto ratio = c1.array() / c2.array();
  const auto shift = (m2 - m1).array().square() / c2.array();
  return 0.5 * (ratio + shift - 1.0 - ratio.log()).sum();
}

double monte_carlo_gaussian_kl(const Vector& m1, const Vector& c1, const Vector& m2,
                               const Vector& c2, int samples, std::uint64_t seed) {
  check_gaussian_args(m1, c1, m2, c2);
  const Matrix x = gaussian_draws(m1, c1, samples, seed);
  double total = 0.0;
  for (int i = 0; i < samples; ++i) {
    double log_ratio = 0.0;
    for (Eigen::Index j = 0; j < m1.size(); ++j) {
      const double a = x(i, j) - m1[j];
      const double b = x(i, j) - m2[j];
      log_ratio += -0.5 * a * a / c1[j] + 0.5 * b * b / c2[j] - 0.5 * std::log(c1[j] / c2[j]);
    }
    total += log_ratio;
  }
  return total / samples;
}

double monte_carlo_gaussian_w2_squared(const Vector& m1, const Vector& c1, const Vector& m2,
                                       const Vector& c2, int samples, std::uint64_t seed) {
  check_gaussian_args(m1, c1, m2, c2);
  const Matrix x = gaussian_draws(m1, c1, samples, derive_seed(seed, 1));
  const Matrix y = gaussian_draws(m2, c2, samples, derive_seed(seed, 2));
  // Product measures: the optimal coupling is the coordinatewise monotone one.
  double total = 0.0;
  std::vector<double> a(samples);
  std::vector<double> b(samples);
  for (Eigen::Index j = 0; j < m1.size(); ++j) {
    for (int i = 0; i < samples; ++i) {
      a[i] = x(i, j);
      b[i] = y(i, j);
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (int i = 0; i < samples; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    total += s / samples;
  }
  return total;
}

std::vector<int> min_cost_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) {
    throw std::invalid_argument("min_cost_assignment: cost matrix must be square");
  }
  const int n = static_cast<int>(cost.rows());
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials u (rows), v (columns); match[j] = row assigned to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j) assignment[match[j] - 1] = j - 1;
  return assignment;
}

double assignment_cost(const Matrix& cost, const std::vector<int>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    total += cost(static_cast<Eigen::Index>(i), assignment[i]);
  }
  return total;
}

Matrix euclidean_cost(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("euclidean_cost: dimension mismatch");
  Matrix c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).norm();
  }
  return c;
}

double empirical_w1_exact(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("empirical_w1_exact: point sets differ in size");
  }
  if (a.rows() > 256) throw std::invalid_argument("empirical_w1_exact: n must be <= 256");
  if (a.rows() == 0) return 0.0;
  const Matrix cost = euclidean_cost(a, b);
  return assignment_cost(cost, min_cost_assignment(cost)) / static_cast<double>(a.rows());
}

double fgamma_two_dirac_closed_form(FKind f, double lipschitz, double dist) {
  if (dist < 0.0) throw std::invalid_argument("fgamma_two_dirac: negative distance");
  const double ld = lipschitz * dist;
  if (f == FKind::Kl) return ld;
  return ld <= 1.0 ? ld : 1.0 + std::log(ld);
}

double fgamma_two_dirac(FKind f, double lipschitz, double dist) {
  if (dist < 0.0) throw std::invalid_argument("fgamma_two_dirac: negative distance");
  // nu = a delta_y + (1 - a) delta_x. For kl the singular part has infinite
  // cost, so nu = delta_y is forced.
  if (f == FKind::Kl) return lipschitz * dist;
  auto objective = [&](double a) { return -std::log(a) + lipschitz * a * dist; };
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 1e-12;
  double hi = 1.0;
  double x1 = hi - ratio * (hi - lo);
  double x2 = lo + ratio * (hi - lo);
  double f1 = objective(x1);
  double f2 = objective(x2);
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = objective(x2);
    }
  }
  return std::min({objective(0.5 * (lo + hi)), objective(1.0)});
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& fn, const Vector& x,
                        double eps) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = fn(probe);
    probe[i] = x[i] - eps;
    const double down = fn(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double conjugate_check(FKind f, double y, const ConjugateGrid& grid) {
  const double log_lo = std::log(grid.lo);
  const double step = (std::log(grid.hi) - log_lo) / (grid.points - 1);
  double best = -std::numeric_limits<double>::infinity();
  int best_index = 0;
  for (int i = 0; i < grid.points; ++i) {
    const double x = std::exp(log_lo + step * i);
    const double v = x * y - divergence::f_value(f, x);
    if (v > best) {
      best = v;
      best_index = i;
    }
  }
  if (best_index == grid.points - 1) return std::numeric_limits<double>::infinity();
  return best;
}

}  // namespace proxflow::oracles
