#include "proxflow/flow.hpp"
#include "proxflow/indicators.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace proxflow;
using ad::Var;

namespace {

Matrix points(std::initializer_list<double> xs) {
  Matrix m(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

// Exact Hamilton-Jacobi solution family U(x, t) = lambda |x|^2 / (2 (c - t)) with c > T.
PotentialFactory hj_family(double lambda, double c) {
  return [=](ad::Tape&) -> PotentialFn {
    return [=](Var x, Var t) {
      Var denom = ad::reciprocal((t - c) * -2.0);
      return ad::row_sq_norm(x) * (denom * lambda);
    };
  };
}

PotentialFactory time_linear(double slope) {
  return [=](ad::Tape&) -> PotentialFn {
    return [=](Var x, Var t) { return ad::slice_cols(x, 0, 1) * 0.0 + t * slope; };
  };
}

indicators::MetricsRecord rec(long iter, double hj, double te) {
  indicators::MetricsRecord r;
  r.iter = iter;
  r.hj_residual = hj;
  r.terminal_error = te;
  return r;
}

}  // namespace

TEST_CASE("potential derivatives of a known function") {
  auto U = hj_family(0.5, 10.0);
  const Matrix x = points({1.0, -2.0});
  auto d = indicators::potential_derivatives(U, x, 2.0);
  // U = 0.5 x^2 / (2 (10 - t)): dU/dx = 0.5 x / (10 - t), dU/dt = 0.5 x^2 / (2 (10 - t)^2).
  CHECK(d.grad_x(0, 0) == doctest::Approx(0.5 * 1.0 / 8.0));
  CHECK(d.dt(1, 0) == doctest::Approx(0.5 * 4.0 / (2 * 64.0)));
}

TEST_CASE("hj residual vanishes on an exact solution along its own flow") {
  const double lambda = 0.5, T = 1.0;
  auto U = hj_family(lambda, 3.0);
  auto traj = flow::simulate(U, points({0.3, -1.2, 2.0}), T, 8, lambda);
  CHECK(indicators::hj_residual(U, traj, lambda) < 1e-12);
  CHECK(indicators::hj_residual(U, traj, lambda, true) > 1e-3);
}

TEST_CASE("hj residual of simple potentials") {
  const double T = 2.0;
  auto zero = time_linear(0.0);
  auto traj = flow::simulate(zero, points({0.0, 1.0}), T, 4, 1.0);
  CHECK(indicators::hj_residual(zero, traj, 1.0) == 0.0);
  // U = c t has no spatial gradient, so the residual integrates |c| over [0, T).
  auto lin = time_linear(-0.7);
  auto traj2 = flow::simulate(lin, points({0.0, 1.0}), T, 4, 1.0);
  CHECK(indicators::hj_residual(lin, traj2, 1.0) == doctest::Approx(T * 0.7));
  CHECK(indicators::hj_residual(lin, traj2, 1.0, true) == doctest::Approx(T * 0.7));
}

TEST_CASE("terminal error of a matching head is zero") {
  const double T = 1.0;
  auto U = hj_family(1.0, 4.0);
  PhiFactory phi = [&](ad::Tape& t) -> divergence::PhiFn {
    auto u = U(t);
    return [u, &t, T](Var x) {
      return u(x, t.constant(Matrix::Constant(x.rows(), 1, T)));
    };
  };
  CHECK(indicators::terminal_error(U, phi, points({0.5, -3.0}), T) < 1e-14);
}

TEST_CASE("terminal error of a constant potential against a linear discriminator") {
  auto U = time_linear(0.0);
  PhiFactory phi = [](ad::Tape& t) -> divergence::PhiFn {
    return [&t](Var x) { return ad::matmul(x, t.constant(Matrix::Constant(1, 1, -1.5))); };
  };
  CHECK(indicators::terminal_error(U, phi, points({0.0, 1.0, 2.0}), 1.0) ==
        doctest::Approx(1.5));
}

TEST_CASE("metrics lines keep field order and round-trip") {
  indicators::MetricsRecord r{12, -0.25, 0.5, 1e-3, std::nan(""), 3.5};
  const std::string line = indicators::to_json_line(r);
  CHECK(line.find("\"iter\"") < line.find("\"dual_estimate\""));
  CHECK(line.find("\"dual_estimate\"") < line.find("\"kinetic_energy\""));
  CHECK(line.find("\"kinetic_energy\"") < line.find("\"hj_residual\""));
  CHECK(line.find("\"hj_residual\"") < line.find("\"terminal_error\""));
  CHECK(line.find("\"terminal_error\"") < line.find("\"wallclock_s\""));
  CHECK(line.find('\n') == std::string::npos);
  auto back = indicators::from_json_line(line);
  CHECK(back.iter == 12);
  CHECK(back.dual_estimate == -0.25);
  CHECK(std::isnan(back.terminal_error));

  std::stringstream ss;
  indicators::write_metrics(ss, {r, rec(13, 1, 2)});
  auto all = indicators::read_metrics(ss);
  REQUIRE(all.size() == 2);
  CHECK(all[1].iter == 13);
  CHECK(all[1].terminal_error == 2.0);
}

TEST_CASE("early stopping needs a full window strictly below both thresholds") {
  indicators::StopThresholds th;
  std::vector<indicators::MetricsRecord> h;
  for (long i = 0; i < 49; ++i) h.push_back(rec(i, 0, 0));
  CHECK_FALSE(indicators::should_stop(h, th));
  h.push_back(rec(49, 0, 0));
  CHECK(indicators::should_stop(h, th));

  std::vector<indicators::MetricsRecord> rising;
  for (long i = 0; i < 200; ++i) rising.push_back(rec(i, 1e-3 * i, 1e-3 * i));
  CHECK_FALSE(indicators::should_stop(rising, th));

  // Both indicators fall linearly and reach the threshold exactly at 120.
  std::vector<indicators::MetricsRecord> falling;
  long first = -1;
  for (long i = 0; i < 300 && first < 0; ++i) {
    const double v = 1e-2 * (1.0 + (120.0 - i) / 120.0);
    falling.push_back(rec(i, v, v));
    if (indicators::should_stop(falling, th)) first = i;
  }
  CHECK(first == 170);
}

TEST_CASE("hj residual vanishes for a linear exact solution") {
  // U = a.x + |a|^2 t / (2 lambda) + b solves -dU/dt + |grad U|^2 / (2 lambda) = 0.
  const double lambda = 0.3, b = 0.7;
  Matrix a(2, 1);
  a << 0.4, -1.1;
  const double rate = a.squaredNorm() / (2 * lambda);
  PotentialFactory U = [=](ad::Tape& tape) -> PotentialFn {
    Var av = tape.constant(a);
    return [=](Var x, Var t) { return ad::matmul(x, av) + t * rate + b; };
  };
  Matrix x0(3, 2);
  x0 << 0.0, 0.0, 1.0, -2.0, 3.0, 0.5;
  auto traj = flow::simulate(U, x0, 2.0, 4, lambda);
  CHECK(indicators::hj_residual(U, traj, lambda) < 1e-14);
}
