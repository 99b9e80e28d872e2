#include "proxflow/indicators.hpp"

#include <json.hpp>

#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace proxflow::indicators {

PotentialDerivatives potential_derivatives(const PotentialFactory& U, const Matrix& x, double t) {
  ad::Tape tape;
  PotentialFn u = U(tape);
  ad::Var xv = tape.constant(x);
  ad::Var tv = tape.constant(Matrix::Constant(x.rows(), 1, t));
  const ad::Var wrt[] = {xv, tv};
  auto grads = tape.gradient(ad::sum(u(xv, tv)), wrt);
  return {grads[0].value(), grads[1].value()};
}

double hj_residual(const PotentialFactory& U, const TrajectoryBatch& traj, double lambda,
                   bool literal_sign) {
  if (!(lambda > 0.0)) throw std::invalid_argument("hj_residual: lambda must be positive");
  const Eigen::Index m = traj.batch();
  if (m == 0) return 0.0;
  const double sign = literal_sign ? 1.0 : -1.0;
  double total = 0.0;
  for (int k = 0; k < traj.K; ++k) {
    const PotentialDerivatives d = potential_derivatives(U, traj.points[k], k * traj.h);
    const Eigen::ArrayXd pointwise =
        sign * d.dt.col(0).array() + d.grad_x.rowwise().squaredNorm().array() / (2.0 * lambda);
    total += pointwise.abs().sum();
  }
  return traj.h * total / static_cast<double>(m);
}

double terminal_error(const PotentialFactory& U, const PhiFactory& phi, const Matrix& endpoints,
                      double T) {
  if (endpoints.rows() == 0) return 0.0;
  const Matrix gu = potential_derivatives(U, endpoints, T).grad_x;
  ad::Tape tape;
  divergence::PhiFn p = phi(tape);
  ad::Var x = tape.constant(endpoints);
  const Matrix gphi = tape.gradient(ad::sum(p(x)), x).value();
  return (gu - gphi).rowwise().norm().mean();
}

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["dual_estimate"] = r.dual_estimate;
  j["kinetic_energy"] = r.kinetic_energy;
  j["hj_residual"] = r.hj_residual;
  j["terminal_error"] = r.terminal_error;
  j["wallclock_s"] = r.wallclock_s;
  return j.dump();
}

MetricsRecord from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  auto number = [&](const char* key) {
    // Non-finite values are serialized as null.
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  MetricsRecord r;
  r.iter = j.at("iter").get<long>();
  r.dual_estimate = number("dual_estimate");
  r.kinetic_energy = number("kinetic_energy");
  r.hj_residual = number("hj_residual");
  r.terminal_error = number("terminal_error");
  r.wallclock_s = number("wallclock_s");
  return r;
}

void write_metrics(std::ostream& out, const std::vector<MetricsRecord>& history) {
  for (const auto& r : history) out << to_json_line(r) << '\n';
}

std::vector<MetricsRecord> read_metrics(std::istream& in) {
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(from_json_line(line));
  }
  return out;
}

bool should_stop(const std::vector<MetricsRecord>& history, const StopThresholds& thresholds) {
  if (thresholds.window < 1) throw std::invalid_argument("should_stop: window must be >= 1");
  const auto window = static_cast<std::size_t>(thresholds.window);
  if (history.size() < window) return false;
  for (std::size_t i = history.size() - window; i < history.size(); ++i) {
    const auto& r = history[i];
    if (!(r.hj_residual < thresholds.hj_residual) ||
        !(r.terminal_error < thresholds.terminal_error)) {
      return false;
    }
  }
  return true;
}

}  // namespace proxflow::indicators
