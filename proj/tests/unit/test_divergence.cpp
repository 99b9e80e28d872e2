#include "proxflow/divergence.hpp"
#include "proxflow/oracles.hpp"
#include "proxflow/random.hpp"

#include <doctest.h>

#include <cmath>

using namespace proxflow;
using divergence::FKind;
using ad::Matrix;
using nn::Vector;

TEST_CASE("f and its conjugate") {
  CHECK(divergence::f_value(FKind::ReverseKl, 1.0) == 0.0);
  CHECK(divergence::f_value(FKind::Kl, 1.0) == 0.0);
  CHECK(divergence::f_star(FKind::ReverseKl, -1.0) == doctest::Approx(-1.0));
  CHECK(divergence::f_star(FKind::Kl, 1.0) == doctest::Approx(1.0));
  CHECK(std::isinf(divergence::f_star(FKind::ReverseKl, 0.0)));
  CHECK(std::isinf(divergence::f_star(FKind::ReverseKl, 0.5)));
  CHECK(std::isinf(divergence::f_star(FKind::ReverseKl, -0.0005, 1e-3)));
  CHECK(std::isfinite(divergence::f_star(FKind::ReverseKl, -0.002, 1e-3)));
  CHECK(divergence::f_star_derivative(FKind::ReverseKl, -2.0) == doctest::Approx(0.5));
  CHECK(divergence::f_star_derivative(FKind::Kl, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("conjugate agrees with the grid oracle at a few points") {
  for (double y : {-3.0, -1.0, -0.2}) {
    CHECK(divergence::f_star(FKind::ReverseKl, y) ==
          doctest::Approx(oracles::conjugate_check(FKind::ReverseKl, y)).epsilon(1e-3));
  }
  for (double y : {-2.0, 0.0, 1.5}) {
    CHECK(divergence::f_star(FKind::Kl, y) ==
          doctest::Approx(oracles::conjugate_check(FKind::Kl, y)).epsilon(1e-3));
  }
  // Outside the domain the grid maximum runs into the edge.
  CHECK(std::isinf(oracles::conjugate_check(FKind::ReverseKl, 0.1)));
}

TEST_CASE("conjugate derivative matches finite differences") {
  for (auto f : {FKind::ReverseKl, FKind::Kl}) {
    for (double y : {-2.5, -0.7}) {
      const double h = 1e-6;
      const double fd = (divergence::f_star(f, y + h) - divergence::f_star(f, y - h)) / (2 * h);
      CHECK(divergence::f_star_derivative(f, y) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("parse and print divergence names") {
  CHECK(divergence::parse_fkind("reverse_kl") == FKind::ReverseKl);
  CHECK(divergence::parse_fkind("kl") == FKind::Kl);
  CHECK(divergence::to_string(FKind::Kl) == "kl");
  CHECK_THROWS_AS(divergence::parse_fkind("js"), std::invalid_argument);
}

TEST_CASE("config validation") {
  divergence::DivergenceConfig c;
  CHECK_NOTHROW(c.validate());
  c.lipschitz = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.inner_iters = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.penalty_weight = -1.0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("a fresh discriminator sits at the constant optimum for equal distributions") {
  nn::MlpSpec spec{2, {16, 16}, nn::Activation::Softplus, 1};
  for (auto f : {FKind::ReverseKl, FKind::Kl}) {
    divergence::DivergenceConfig cfg;
    cfg.f = f;
    auto d = divergence::Discriminator::create(spec, cfg, 3);
    const Matrix x = standard_normal(64, 2, 1);
    const Vector v = d.values(x);
    const double expect = f == FKind::ReverseKl ? -1.0 : 1.0;
    // Random hidden weights perturb the output a little around the neutral value.
    CHECK(std::abs(v.mean() - expect) < 0.5);
    if (f == FKind::ReverseKl) CHECK(v.maxCoeff() < 0.0);
  }
}

TEST_CASE("dual estimate of a constant discriminator vanishes at phi = -1") {
  Vector gen = Vector::Constant(5, -1.0);
  Vector tgt = Vector::Constant(7, -1.0);
  CHECK(divergence::dual_estimate(gen, tgt, FKind::ReverseKl) == doctest::Approx(0.0));
  CHECK(divergence::dual_estimate(Vector::Constant(3, 1.0), Vector::Constant(3, 1.0), FKind::Kl) ==
        doctest::Approx(0.0));
}

TEST_CASE("dual estimate names the offending target sample") {
  Vector tgt = Vector::Constant(4, -1.0);
  tgt[2] = 0.3;
  try {
    divergence::dual_estimate(Vector::Constant(4, -1.0), tgt, FKind::ReverseKl);
    FAIL("expected DomainError");
  } catch (const divergence::DomainError& e) {
    CHECK(e.sample() == 2);
    CHECK(std::string(e.what()).find("sample 2") != std::string::npos);
  }
  CHECK_THROWS_AS(divergence::dual_estimate(Vector(0), tgt, FKind::Kl), std::invalid_argument);
}

TEST_CASE("taped dual estimate agrees with the numeric one") {
  ad::Tape t;
  Matrix g(3, 1), x(2, 1);
  g << -0.5, -1.0, -2.0;
  x << -0.3, -4.0;
  const double expect = divergence::dual_estimate(g.col(0), x.col(0), FKind::ReverseKl);
  CHECK(divergence::dual_estimate(t.constant(g), t.constant(x), FKind::ReverseKl).scalar() ==
        doctest::Approx(expect));
}

TEST_CASE("interpolation weights are uniform draws in [0, 1] and seeded") {
  const Vector c = divergence::interpolation_weights(5000, 12);
  CHECK(c.minCoeff() >= 0.0);
  CHECK(c.maxCoeff() <= 1.0);
  CHECK(c.mean() == doctest::Approx(0.5).epsilon(0.03));
  CHECK(c == divergence::interpolation_weights(5000, 12));
}

TEST_CASE("gradient penalty is zero for slopes within L and counts the excess otherwise") {
  ad::Tape t;
  // phi(x) = a . x with |a| = 2: each interpolate contributes -(4 - L^2).
  Matrix a(2, 1);
  a << 2.0, 0.0;
  divergence::PhiFn phi = [&](ad::Var x) { return ad::matmul(x, t.constant(a)); };
  const Matrix gen = standard_normal(6, 2, 1);
  const Matrix tgt = standard_normal(4, 2, 2);
  CHECK(divergence::gradient_penalty(t, phi, gen, tgt, 1.0, 0).scalar() ==
        doctest::Approx(-4 * 3.0));
  CHECK(divergence::gradient_penalty(t, phi, gen, tgt, 2.5, 0).scalar() == 0.0);
}

TEST_CASE("discriminator training is deterministic and improves the estimate") {
  nn::MlpSpec spec{1, {16}, nn::Activation::Softplus, 1};
  divergence::DivergenceConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.inner_iters = 200;
  const Matrix gen = Matrix::Constant(32, 1, 0.5);
  const Matrix tgt = Matrix::Constant(32, 1, 0.0);
  auto d1 = divergence::Discriminator::create(spec, cfg, 4);
  auto d2 = d1;
  const double before = divergence::dual_estimate(d1, gen, tgt);
  auto s1 = divergence::train_discriminator(gen, tgt, cfg, d1, 99);
  divergence::train_discriminator(gen, tgt, cfg, d2, 99);
  CHECK(d1.net.flat == d2.net.flat);
  CHECK(s1.penalty <= 0.0);
  CHECK(divergence::dual_estimate(d1, gen, tgt) > before + 0.2);
  // The estimate never exceeds L * W1 by more than the training slack.
  CHECK(divergence::dual_estimate(d1, gen, tgt) <= 0.5 + 0.05);
}

TEST_CASE("likelihood-ratio normalization makes the mean ratio one") {
  nn::MlpSpec spec{2, {8}, nn::Activation::Tanh, 1};
  for (auto f : {FKind::ReverseKl, FKind::Kl}) {
    divergence::DivergenceConfig cfg;
    cfg.f = f;
    auto d = divergence::Discriminator::create(spec, cfg, 6);
    const Matrix xs = standard_normal(200, 2, 8);
    const double c = divergence::normalize_ratio_constant(d, xs);
    double mean = 0.0;
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      mean += divergence::sigma_likelihood_ratio(d, xs.row(i).transpose(), c);
    }
    CHECK(mean / xs.rows() == doctest::Approx(1.0).epsilon(1e-6));
  }
}
