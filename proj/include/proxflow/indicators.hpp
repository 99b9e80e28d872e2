#pragma once

#include "proxflow/autodiff.hpp"
#include "proxflow/divergence.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace proxflow {

using ad::Matrix;

/// Batched potential on a tape: x is M x d, t is M x 1; the result is M x 1.
using PotentialFn = std::function<ad::Var(ad::Var x, ad::Var t)>;
/// Binds a potential onto a tape. Numeric routines create private tapes.
using PotentialFactory = std::function<PotentialFn(ad::Tape&)>;
using PhiFactory = std::function<divergence::PhiFn(ad::Tape&)>;

/// Positions and potential gradients along Euler trajectories.
/// points[k] is M x d (k = 0..K), grads[k] = grad_x U(points[k], k h) (k = 0..K-1).
struct TrajectoryBatch {
  std::vector<Matrix> points;
  std::vector<Matrix> grads;
  double h = 1.0;
  double T = 1.0;
  double lambda = 1.0;
  int K = 0;

  Eigen::Index batch() const { return points.empty() ? 0 : points.front().rows(); }
  Eigen::Index dim() const { return points.empty() ? 0 : points.front().cols(); }
  const Matrix& endpoints() const { return points.back(); }
};

}  // namespace proxflow

namespace proxflow::indicators {

struct PotentialDerivatives {
  Matrix grad_x;  // M x d
  Matrix dt;      // M x 1
};

/// grad_x U and dU/dt at (x, t) for every row of x.
PotentialDerivatives potential_derivatives(const PotentialFactory& U, const Matrix& x, double t);

/// (h/M) sum_m sum_{k<K} | -dU/dt + |grad U|^2 / (2 lambda) | along the stored points.
/// `literal_sign` flips the time-derivative sign to +dU/dt.
double hj_residual(const PotentialFactory& U, const TrajectoryBatch& traj, double lambda,
                   bool literal_sign = false);

/// (1/M) sum_m | grad U(Y_K, T) - grad phi(Y_K) |.
double terminal_error(const PotentialFactory& U, const PhiFactory& phi, const Matrix& endpoints,
                      double T);

struct MetricsRecord {
  long iter = 0;
  double dual_estimate = 0.0;
  double kinetic_energy = 0.0;
  double hj_residual = 0.0;
  double terminal_error = 0.0;
  double wallclock_s = 0.0;
};

/// One JSON object per line, fields in declaration order.
std::string to_json_line(const MetricsRecord& r);
MetricsRecord from_json_line(const std::string& line);
void write_metrics(std::ostream& out, const std::vector<MetricsRecord>& history);
std::vector<MetricsRecord> read_metrics(std::istream& in);

struct StopThresholds {
  double hj_residual = 1e-2;
  double terminal_error = 1e-2;
  int window = 50;
};

/// True when the last `window` records all have both indicators strictly below
/// their thresholds. Histories shorter than the window never stop.
bool should_stop(const std::vector<MetricsRecord>& history, const StopThresholds& thresholds);

}  // namespace proxflow::indicators
