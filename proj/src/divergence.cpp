#include "proxflow/divergence.hpp"

#include "proxflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace proxflow::divergence {

FKind parse_fkind(const std::string& name) {
  if (name == "reverse_kl") return FKind::ReverseKl;
  if (name == "kl") return FKind::Kl;
  throw std::invalid_argument("unknown f-divergence '" + name + "'");
}

std::string to_string(FKind f) { return f == FKind::ReverseKl ? "reverse_kl" : "kl"; }

void DivergenceConfig::validate() const {
  if (!(lipschitz > 0.0)) throw std::invalid_argument("Lipschitz bound L must be positive");
  if (!(domain_margin > 0.0)) throw std::invalid_argument("domain margin must be positive");
  if (penalty_weight < 0.0) throw std::invalid_argument("penalty weight must be nonnegative");
  if (inner_iters < 1) throw std::invalid_argument("inner iteration count must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

double f_value(FKind f, double x) {
  return f == FKind::ReverseKl ? -std::log(x) : x * std::log(x);
}

double f_star(FKind f, double y, double margin) {
  if (f == FKind::Kl) return std::exp(y - 1.0);
  if (y >= -margin || y >= 0.0) return kInfinity;
  return -1.0 - std::log(-y);
}

double f_star_derivative(FKind f, double y) {
  if (f == FKind::Kl) return std::exp(y - 1.0);
  if (y >= 0.0) return kInfinity;
  return -1.0 / y;
}

ad::Var f_star(FKind f, ad::Var y) {
  if (f == FKind::Kl) return ad::exp(y - 1.0);
  return -1.0 - ad::log(-y);
}

DomainError::DomainError(const std::string& what, Eigen::Index sample)
    : std::runtime_error(what), sample_(sample) {}

ad::Var discriminator_output(const nn::MlpVars& net, ad::Var x, FKind f, double margin) {
  ad::Var raw = nn::forward(net, x);
  if (f == FKind::Kl) return raw;
  return -ad::softplus(raw) - margin;
}

double neutral_final_bias(FKind f, double margin) {
  if (f == FKind::Kl) return 1.0;
  // softplus(b) = 1 - margin
  return std::log(std::expm1(1.0 - margin));
}

Discriminator Discriminator::create(const nn::MlpSpec& spec, const DivergenceConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  Discriminator d;
  d.net = nn::init(spec, seed, neutral_final_bias(cfg.f, cfg.domain_margin));
  d.optimizer = nn::OptimizerState::for_params(d.net, nn::AdamConfig{cfg.learning_rate});
  d.f = cfg.f;
  d.margin = cfg.domain_margin;
  return d;
}

PhiFn Discriminator::bind(ad::Tape& tape) const {
  nn::MlpVars vars = nn::bind_frozen(tape, net);
  return [vars = std::move(vars), f = f, margin = margin](ad::Var x) {
    return discriminator_output(vars, x, f, margin);
  };
}

Vector Discriminator::values(const Matrix& x) const {
  ad::Tape tape;
  PhiFn phi = bind(tape);
  return phi(tape.constant(x)).value().col(0);
}

Matrix Discriminator::input_gradient(const Matrix& x) const {
  ad::Tape tape;
  PhiFn phi = bind(tape);
  ad::Var in = tape.constant(x);
  return tape.gradient(ad::sum(phi(in)), in).value();
}

double dual_estimate(const Vector& phi_gen, const Vector& phi_target, FKind f) {
  if (phi_gen.size() == 0 || phi_target.size() == 0) {
    throw std::invalid_argument("dual_estimate: empty sample set");
  }
  double conj = 0.0;
  for (Eigen::Index n = 0; n < phi_target.size(); ++n) {
    const double v = f_star(f, phi_target[n]);
    if (!std::isfinite(v)) {
      throw DomainError("dual_estimate: discriminator value " + std::to_string(phi_target[n]) +
                            " outside the conjugate domain at target sample " +
                            std::to_string(n),
                        n);
    }
    conj += v;
  }
  return phi_gen.mean() - conj / static_cast<double>(phi_target.size());
}

double dual_estimate(const Discriminator& phi, const Matrix& gen, const Matrix& target) {
  return dual_estimate(phi.values(gen), phi.values(target), phi.f);
}

ad::Var dual_estimate(ad::Var phi_gen, ad::Var phi_target, FKind f) {
  return ad::mean(phi_gen) - ad::mean(f_star(f, phi_target));
}

Vector interpolation_weights(Eigen::Index count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector c(count);
  for (Eigen::Index i = 0; i < count; ++i) c[i] = unit(rng);
  return c;
}

namespace {

Matrix interpolates(const Matrix& gen, const Matrix& target, std::uint64_t seed) {
  if (gen.cols() != target.cols()) {
    throw std::invalid_argument("gradient_penalty: sample dimensions differ");
  }
  const Eigen::Index n = std::min(gen.rows(), target.rows());
  const Vector c = interpolation_weights(n, seed);
  return c.asDiagonal() * gen.topRows(n) +
         (Vector::Ones(n) - c).asDiagonal() * target.topRows(n);
}

}  // namespace

ad::Var gradient_penalty(ad::Tape& tape, const PhiFn& phi, const Matrix& gen,
                         const Matrix& target, double lipschitz, std::uint64_t seed) {
  ad::Var z = tape.constant(interpolates(gen, target, seed));
  ad::Var grad = tape.gradient(ad::sum(phi(z)), z);
  ad::Var excess = ad::row_sq_norm(grad) - lipschitz * lipschitz;
  return -ad::sum(ad::relu(excess));
}

Vector interpolate_gradient_norms(const Discriminator& phi, const Matrix& gen,
                                  const Matrix& target, std::uint64_t seed) {
  return phi.input_gradient(interpolates(gen, target, seed)).rowwise().norm();
}

TrainingError::TrainingError(const std::string& what, long iteration)
    : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
      iteration_(iteration) {}

DiscriminatorStep train_discriminator(const Matrix& gen, const Matrix& target,
                                      const DivergenceConfig& cfg, Discriminator& disc,
                                      std::uint64_t seed) {
  if (gen.rows() == 0 || target.rows() == 0) {
    throw std::invalid_argument("train_discriminator: empty sample set");
  }
  cfg.validate();
  disc.optimizer.config.learning_rate = cfg.learning_rate;
  DiscriminatorStep last;
  for (int it = 0; it < cfg.inner_iters; ++it) {
    try {
      ad::Tape tape;
      nn::MlpVars vars = nn::bind(tape, disc.net, "phi.");
      PhiFn phi = [&](ad::Var x) {
        return discriminator_output(vars, x, disc.f, disc.margin);
      };
      ad::Var dual = dual_estimate(phi(tape.constant(gen)), phi(tape.constant(target)), disc.f);
      ad::Var objective = dual;
      last.penalty = 0.0;
      if (cfg.penalty_weight > 0.0) {
        ad::Var pen = gradient_penalty(tape, phi, gen, target, cfg.lipschitz,
                                       derive_seed(seed, static_cast<std::uint64_t>(it)));
        objective = dual + cfg.penalty_weight * pen;
        last.penalty = pen.scalar();
      }
      last.dual = dual.scalar();
      last.objective = objective.scalar();
      const auto params = vars.all();
      Vector grad = nn::flatten(tape.gradient(objective, params), disc.net.flat.size());
      nn::adam_step(disc.net, -grad, disc.optimizer);
    } catch (const ad::NonFiniteError& e) {
      throw TrainingError(std::string("discriminator objective: ") + e.what(), it);
    } catch (const nn::NonFiniteGradientError& e) {
      throw TrainingError(std::string("discriminator: ") + e.what(), it);
    }
  }
  return last;
}

double sigma_likelihood_ratio(const Discriminator& phi, const Vector& x, double c) {
  const Vector v = phi.values(x.transpose());
  const double shifted = v[0] - c;
  if (phi.f == FKind::ReverseKl && shifted >= 0.0) {
    throw DomainError("likelihood ratio: phi(x) - c = " + std::to_string(shifted) +
                          " is outside the domain of (f*)'",
                      0);
  }
  return f_star_derivative(phi.f, shifted);
}

double normalize_ratio_constant(const Discriminator& phi, const Matrix& samples) {
  const Vector v = phi.values(samples);
  auto mean_ratio = [&](double c) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += f_star_derivative(phi.f, v[i] - c);
    return s / static_cast<double>(v.size());
  };
  // The mean ratio is decreasing in c; bracket the root, then bisect.
  double lo = phi.f == FKind::ReverseKl ? v.maxCoeff() + 1e-12 : v.minCoeff() - 50.0;
  double hi = v.maxCoeff() + 1.0;
  while (mean_ratio(hi) > 1.0) hi += 2.0 * (hi - lo);
  if (phi.f == FKind::Kl) {
    while (mean_ratio(lo) < 1.0) lo -= 2.0 * (hi - lo);
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mean_ratio(mid) > 1.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace proxflow::divergence
