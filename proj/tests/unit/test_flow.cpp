#include "proxflow/datasets.hpp"
#include "proxflow/flow.hpp"
#include "proxflow/oracles.hpp"
#include "proxflow/random.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace proxflow;
using ad::Var;
using nn::Vector;

namespace {

PotentialFactory quadratic() {
  return [](ad::Tape&) -> PotentialFn {
    return [](Var x, Var t) { return ad::row_sq_norm(x) * 0.5 + t * 0.0; };
  };
}

PotentialFactory linear(const Matrix& a) {
  return [a](ad::Tape& tape) -> PotentialFn {
    Var av = tape.constant(a);
    return [av](Var x, Var t) { return ad::matmul(x, av) + t * 0.0; };
  };
}

PotentialFactory constant_potential(double c) {
  return [c](ad::Tape&) -> PotentialFn {
    return [c](Var x, Var t) { return ad::slice_cols(x, 0, 1) * 0.0 + t * 0.0 + c; };
  };
}

flow::FlowConfig small_config(flow::Mode mode) {
  flow::FlowConfig cfg;
  cfg.mode = mode;
  cfg.lambda = 0.5;
  cfg.T = 1.0;
  cfg.K = 3;
  cfg.M = 16;
  cfg.N = 16;
  cfg.outer_iters = 4;
  cfg.u_widths = {8, 8};
  cfg.phi_widths = {8};
  cfg.learning_rate = 1e-3;
  cfg.seed = 11;
  return cfg;
}

divergence::DivergenceConfig small_divergence() {
  divergence::DivergenceConfig d;
  d.inner_iters = 2;
  d.learning_rate = 1e-3;
  return d;
}

flow::TargetSampler gaussian_target(double shift) {
  return [shift](int n, std::uint64_t seed) {
    Matrix x = standard_normal(n, 2, seed);
    x.col(0).array() += shift;
    return x;
  };
}

}  // namespace

TEST_CASE("velocity is the negative scaled potential gradient") {
  Matrix x(2, 2);
  x << 1.0, -2.0, 0.5, 3.0;
  CHECK((flow::velocity(quadratic(), x, 0.0, 1.0) + x).norm() < 1e-14);
  CHECK(flow::velocity(constant_potential(2.0), x, 0.3, 1.0).norm() == 0.0);
  Matrix a(2, 1);
  a << 0.5, -1.0;
  const Matrix v = flow::velocity(linear(a), x, 0.0, 0.25);
  CHECK(v(1, 0) == doctest::Approx(-0.5 / 0.25));
  CHECK(v(0, 1) == doctest::Approx(1.0 / 0.25));
}

TEST_CASE("euler examples") {
  Matrix x(3, 2);
  x << 1.0, 2.0, -1.0, 0.5, 0.0, 0.0;
  // h / lambda = 1 on a quadratic lands on the origin in one step.
  auto one = flow::simulate(quadratic(), x, 1.0, 1, 1.0);
  CHECK(one.endpoints().norm() < 1e-14);
  CHECK(one.points.size() == 2);
  CHECK(one.grads.size() == 1);

  auto still = flow::simulate(constant_potential(-3.0), x, 5.0, 4, 0.1);
  for (const auto& p : still.points) CHECK(p == x);

  Matrix a(2, 1);
  a << 0.3, -0.2;
  const Matrix expect = x.rowwise() - (2.0 / 0.5) * a.transpose().row(0);
  for (int K : {1, 3, 10}) {
    auto lin = flow::simulate(linear(a), x, 2.0, K, 0.5);
    CHECK((lin.endpoints() - expect).norm() < 1e-12);
  }
}

TEST_CASE("kinetic energy of a constant velocity field") {
  Matrix a(2, 1);
  a << 0.3, 0.4;
  const double lambda = 0.2, T = 3.0;
  auto traj = flow::simulate(linear(a), standard_normal(7, 2, 1), T, 6, lambda);
  // |grad U| = 0.5, velocity c = grad U / lambda: lambda T |c|^2 / 2 = T |grad U|^2 / (2 lambda).
  CHECK(flow::kinetic_energy(traj, lambda) == doctest::Approx(T * 0.25 / (2 * lambda)));
  ad::Tape tape;
  auto tt = flow::simulate_on_tape(tape, linear(a)(tape), standard_normal(7, 2, 1), T, 6, lambda);
  CHECK(flow::kinetic_energy(tt).scalar() == doctest::Approx(flow::kinetic_energy(traj, lambda)));
  auto batch = flow::to_batch(tt, T);
  CHECK((batch.endpoints() - traj.endpoints()).norm() < 1e-14);
}

TEST_CASE("mode semantics of the generator objective") {
  const Matrix y0 = standard_normal(5, 2, 3);
  const Matrix target = standard_normal(6, 2, 4);
  Matrix a(2, 1);
  a << 0.2, 0.1;
  for (auto mode : {flow::Mode::W1Only, flow::Mode::Unregularized}) {
    ad::Tape tape;
    auto cfg = small_config(mode);
    divergence::PhiFn phi = [&](Var x) { return ad::slice_cols(x, 0, 1) * 0.1 - 1.0; };
    auto terms = flow::generator_objective(tape, linear(a)(tape), phi, y0, target, cfg,
                                           divergence::FKind::ReverseKl);
    CHECK(terms.objective.scalar() == terms.dual.scalar());
    CHECK(terms.kinetic.scalar() > 0.0);
  }
  {
    ad::Tape tape;
    auto cfg = small_config(flow::Mode::W1W2);
    divergence::PhiFn phi = [&](Var x) { return ad::slice_cols(x, 0, 1) * 0.0 - 1.0; };
    auto terms = flow::generator_objective(tape, constant_potential(1.0)(tape), phi, y0, target,
                                           cfg, divergence::FKind::ReverseKl);
    CHECK(terms.objective.scalar() == doctest::Approx(0.0));
  }
  CHECK(flow::uses_kinetic(flow::Mode::W2Only));
  CHECK_FALSE(flow::uses_kinetic(flow::Mode::W1Only));
  CHECK(flow::uses_lipschitz(flow::Mode::W1Only));
  CHECK_FALSE(flow::uses_lipschitz(flow::Mode::W2Only));
  CHECK_THROWS_AS(flow::parse_mode("w3"), std::invalid_argument);
  for (auto m : {flow::Mode::Unregularized, flow::Mode::W2Only, flow::Mode::W1Only,
                 flow::Mode::W1W2}) {
    CHECK(flow::parse_mode(flow::to_string(m)) == m);
  }
}

TEST_CASE("potential-parameter gradient through the trajectory matches finite differences") {
  auto cfg = small_config(flow::Mode::W1W2);
  cfg.K = 2;
  cfg.T = 1.0;
  cfg.lambda = 0.5;
  cfg.u_widths = {6};
  cfg.activation = nn::Activation::Tanh;
  auto params = nn::init(flow::potential_spec(1, cfg), 3);
  const Matrix y0 = standard_normal(4, 1, 5);
  const Matrix target = standard_normal(4, 1, 6).array() + 1.0;
  auto phi_of = [](ad::Tape& t) -> divergence::PhiFn {
    return [&t](Var x) {
      return -ad::softplus(ad::matmul(ad::tanh(x), t.constant(Matrix::Constant(1, 1, 0.7)))) -
             0.1;
    };
  };
  auto objective = [&](const Vector& flat) {
    nn::MlpParams p = params;
    p.flat = flat;
    ad::Tape tape;
    auto u = flow::neural_potential(p, cfg.T)(tape);
    return flow::generator_objective(tape, u, phi_of(tape), y0, target, cfg,
                                     divergence::FKind::ReverseKl)
        .objective.scalar();
  };
  ad::Tape tape;
  auto vars = nn::bind(tape, params, "U.");
  auto terms = flow::generator_objective(tape, flow::neural_potential(vars, cfg.T), phi_of(tape),
                                         y0, target, cfg, divergence::FKind::ReverseKl);
  const Vector g = nn::flatten(tape.gradient(terms.objective, vars.all()), params.flat.size());
  const Vector fd = oracles::finite_diff_grad(objective, params.flat, 1e-6);
  CHECK((g - fd).norm() / fd.norm() < 1e-4);
}

TEST_CASE("generate is simulate on fresh reference draws") {
  auto cfg = small_config(flow::Mode::W1W2);
  auto params = nn::init(flow::potential_spec(2, cfg), 8);
  auto U = flow::neural_potential(params, cfg.T);
  const Matrix g = flow::generate(U, 2, 9, 4, cfg.T, cfg.lambda, 21);
  const Matrix y0 = datasets::sample_reference(2, 9, 21);
  CHECK(g == flow::simulate(U, y0, cfg.T, 4, cfg.lambda).endpoints());
  CHECK(flow::generate(U, 2, 0, 4, cfg.T, cfg.lambda, 21).rows() == 0);
}

TEST_CASE("simulation reports the failing step") {
  PotentialFactory bad = [](ad::Tape&) -> PotentialFn {
    return [](Var x, Var t) { return ad::row_sq_norm(x) * ad::log(t - 0.5); };
  };
  try {
    flow::simulate(bad, Matrix::Ones(2, 1), 1.0, 4, 1.0);
    FAIL("expected SimulationError");
  } catch (const flow::SimulationError& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("trajectory geometry helpers") {
  TrajectoryBatch traj;
  Matrix p0(1, 2), p1(1, 2), p2(1, 2);
  p0 << 0, 0;
  p1 << 1, 1;
  p2 << 2, 0;
  traj.points = {p0, p1, p2};
  traj.K = 2;
  const auto r = flow::chord_deviation_ratios(traj);
  REQUIRE(r.size() == 1);
  CHECK(r[0] == doctest::Approx(0.5));
  CHECK(flow::mean_path_length(traj) == doctest::Approx(2 * std::sqrt(2.0)));
  CHECK(flow::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(flow::median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(flow::mean_displacement(p0, p2) == doctest::Approx(2.0));
  traj.points = {p0, p0, p0};
  CHECK(flow::chord_deviation_ratios(traj).empty());
}

TEST_CASE("training is deterministic and indicators do not perturb it") {
  auto cfg = small_config(flow::Mode::W1W2);
  auto a = flow::train(gaussian_target(1.0), 2, cfg, small_divergence());
  auto b = flow::train(gaussian_target(1.0), 2, cfg, small_divergence());
  cfg.compute_indicators = false;
  auto c = flow::train(gaussian_target(1.0), 2, cfg, small_divergence());
  CHECK(a.status == flow::RunStatus::Completed);
  CHECK(a.history.size() == 4);
  CHECK(a.potential.flat == b.potential.flat);
  CHECK(a.potential.flat == c.potential.flat);
  CHECK(a.discriminator.net.flat == c.discriminator.net.flat);
  CHECK(std::isnan(c.history.back().hj_residual));
  CHECK(std::isfinite(a.history.back().terminal_error));
}

TEST_CASE("one outer iteration moves each potential weight by at most the learning rate") {
  auto cfg = small_config(flow::Mode::W1Only);
  cfg.outer_iters = 1;
  auto run = flow::train(gaussian_target(1.0), 2, cfg, small_divergence());
  auto start = nn::init(flow::potential_spec(2, cfg), derive_seed(cfg.seed, 0, 4));
  CHECK(run.potential.flat != start.flat);
  const Vector moved = run.potential.flat - start.flat;
  CHECK(moved.cwiseAbs().maxCoeff() <= cfg.learning_rate * (1 + 1e-9));
}

TEST_CASE("blow-up is reported with the iteration") {
  auto cfg = small_config(flow::Mode::Unregularized);
  cfg.blowup_threshold = 1e-12;
  auto run = flow::train(gaussian_target(3.0), 2, cfg, small_divergence());
  CHECK(run.status == flow::RunStatus::BlowUp);
  CHECK(run.stop_iter == 0);
  CHECK(run.message.find("unregularized") != std::string::npos);
}

TEST_CASE("invalid configurations are rejected") {
  auto cfg = small_config(flow::Mode::W1W2);
  cfg.lambda = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config(flow::Mode::W1W2);
  cfg.K = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config(flow::Mode::W1W2);
  cfg.lr_final_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("flow checkpoints round-trip and name missing files") {
  flow::FlowCheckpoint ck;
  ck.lambda = 0.1;
  ck.T = 2.0;
  ck.K = 7;
  ck.mode = flow::Mode::W2Only;
  ck.f = divergence::FKind::Kl;
  ck.margin = 0.0;
  ck.potential = nn::init(nn::MlpSpec{3, {4}, nn::Activation::Softplus, 1}, 1);
  ck.discriminator = nn::init(nn::MlpSpec{2, {4}, nn::Activation::Softplus, 1}, 2);
  std::stringstream ss;
  flow::write_flow_checkpoint(ss, ck);
  auto back = flow::read_flow_checkpoint(ss);
  CHECK(back.lambda == 0.1);
  CHECK(back.K == 7);
  CHECK(back.mode == flow::Mode::W2Only);
  CHECK(back.f == divergence::FKind::Kl);
  CHECK(back.potential.flat == ck.potential.flat);
  CHECK(back.discriminator.flat == ck.discriminator.flat);
  CHECK_THROWS_WITH(flow::load_flow_checkpoint("/nonexistent/ck.bin"),
                    doctest::Contains("/nonexistent/ck.bin"));
}
