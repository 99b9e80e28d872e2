#pragma once

#include "proxflow/autodiff.hpp"
#include "proxflow/nn.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

namespace proxflow::divergence {

using ad::Matrix;
using nn::Vector;

/// reverse_kl: f(x) = -log x.  kl: f(x) = x log x.
enum class FKind { ReverseKl, Kl };

FKind parse_fkind(const std::string& name);
std::string to_string(FKind f);

struct DivergenceConfig {
  FKind f = FKind::ReverseKl;
  double lipschitz = 1.0;
  double penalty_weight = 10.0;
  int inner_iters = 5;
  double domain_margin = 1e-3;
  double learning_rate = 1e-4;

  void validate() const;
};

constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// The generator function f itself.
double f_value(FKind f, double x);

/// Convex conjugate. reverse_kl: -1 - log(-y) for y < -margin, +inf otherwise.
/// kl: exp(y - 1).
double f_star(FKind f, double y, double margin = 0.0);

/// Derivative of the conjugate; reverse_kl requires y < 0.
double f_star_derivative(FKind f, double y);

ad::Var f_star(FKind f, ad::Var y);

/// Raised when a discriminator value leaves the domain of the conjugate.
class DomainError : public std::runtime_error {
 public:
  DomainError(const std::string& what, Eigen::Index sample);
  Eigen::Index sample() const { return sample_; }

 private:
  Eigen::Index sample_;
};

/// Batch -> batch x 1 map from samples to discriminator values.
using PhiFn = std::function<ad::Var(ad::Var)>;

/// Composed discriminator on a raw network: identity for kl, and
/// -softplus(net(x)) - margin for reverse_kl so phi stays inside the conjugate's domain.
ad::Var discriminator_output(const nn::MlpVars& net, ad::Var x, FKind f, double margin);

/// Raw-network final bias that makes the composed discriminator start at the
/// constant optimum for identical distributions (phi = -1 or phi = 1).
double neutral_final_bias(FKind f, double margin);

/// A discriminator network together with its optimizer state, so training can warm-start.
struct Discriminator {
  nn::MlpParams net;
  nn::OptimizerState optimizer;
  FKind f = FKind::ReverseKl;
  double margin = 1e-3;

  static Discriminator create(const nn::MlpSpec& spec, const DivergenceConfig& cfg,
                              std::uint64_t seed);

  PhiFn bind(ad::Tape& tape) const;  // frozen parameters
  Vector values(const Matrix& x) const;
  /// Rows are grad_x phi at each input row.
  Matrix input_gradient(const Matrix& x) const;
};

/// (1/M) sum phi(Y) - (1/N) sum f*(phi(X)).
double dual_estimate(const Vector& phi_gen, const Vector& phi_target, FKind f);
double dual_estimate(const Discriminator& phi, const Matrix& gen, const Matrix& target);
ad::Var dual_estimate(ad::Var phi_gen, ad::Var phi_target, FKind f);

/// Interpolation weights c_n ~ U[0,1], n < min(M, N), drawn from `seed`.
Vector interpolation_weights(Eigen::Index count, std::uint64_t seed);

/// -sum_n max(|grad phi(c_n Y_n + (1 - c_n) X_n)|^2 - L^2, 0) over the first
/// min(M, N) rows. Always <= 0.
ad::Var gradient_penalty(ad::Tape& tape, const PhiFn& phi, const Matrix& gen,
                         const Matrix& target, double lipschitz, std::uint64_t seed);

/// |grad phi| at the same interpolates the penalty uses.
Vector interpolate_gradient_norms(const Discriminator& phi, const Matrix& gen,
                                  const Matrix& target, std::uint64_t seed);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long iteration);
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

struct DiscriminatorStep {
  double objective = 0.0;
  double dual = 0.0;
  double penalty = 0.0;
};

/// Runs cfg.inner_iters ascent steps on dual_estimate + penalty_weight * penalty,
/// updating `disc` in place. Returns the terms of the last evaluated objective.
DiscriminatorStep train_discriminator(const Matrix& gen, const Matrix& target,
                                      const DivergenceConfig& cfg, Discriminator& disc,
                                      std::uint64_t seed);

/// (f*)'(phi(x) - c): the likelihood ratio of the intermediate W1-proximal
/// measure against the target.
double sigma_likelihood_ratio(const Discriminator& phi, const Vector& x, double c);

/// Finds c with mean over `samples` of the likelihood ratio equal to 1, by bisection.
double normalize_ratio_constant(const Discriminator& phi, const Matrix& samples);

}  // namespace proxflow::divergence
