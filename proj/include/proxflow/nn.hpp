#pragma once

#include "proxflow/autodiff.hpp"

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxflow::nn {

using ad::Matrix;
using Vector = Eigen::VectorXd;

enum class Activation { Softplus, Tanh, Relu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct MlpSpec {
  int in_dim = 1;
  std::vector<int> widths;
  Activation activation = Activation::Softplus;
  int out_dim = 1;

  /// Layer fan sizes: in_dim, widths..., out_dim.
  std::vector<int> layer_sizes() const;
  std::size_t param_count() const;
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

/// Weights and biases of every layer packed into one flat vector. Layer i
/// occupies a (fan_in x fan_out) column-major weight block followed by a
/// fan_out bias block.
struct MlpParams {
  MlpSpec spec;
  Vector flat;
  std::uint64_t seed = 0;

  struct Slice {
    Eigen::Index weight_offset;
    Eigen::Index bias_offset;
    int fan_in;
    int fan_out;
  };
  std::vector<Slice> layout() const;

  Eigen::Map<const Matrix> weight(std::size_t layer) const;
  Eigen::Map<const Vector> bias(std::size_t layer) const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except the
/// last, which is set to `final_bias`. Deterministic in `seed`.
MlpParams init(const MlpSpec& spec, std::uint64_t seed, double final_bias = 0.0);

/// Parameters recorded as labeled leaves (prefix + "W0", prefix + "b0", ...).
struct MlpVars {
  MlpSpec spec;
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;

  /// Interleaved W0, b0, W1, b1, ... in flat-vector order.
  std::vector<ad::Var> all() const;
};

MlpVars bind(ad::Tape& tape, const MlpParams& params, const std::string& prefix);

/// Same as bind, but recorded as constants: the network takes part in the
/// graph while its parameters are frozen.
MlpVars bind_frozen(ad::Tape& tape, const MlpParams& params);

/// Batched forward pass: rows of `input` are samples, result is rows x 1.
ad::Var forward(const MlpVars& net, ad::Var input);

/// Packs per-layer gradient nodes (ordered like MlpVars::all) into a flat vector.
Vector flatten(const std::vector<ad::Var>& grads, std::size_t expected_length);

/// Numeric evaluation on a private tape; one output per input row.
Vector evaluate(const MlpParams& params, const Matrix& input);

/// Product of layer spectral norms; a Lipschitz bound when the activation is 1-Lipschitz.
double lipschitz_upper_bound(const MlpParams& params);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  Vector first_moment;
  Vector second_moment;
  long step = 0;

  static OptimizerState for_params(const MlpParams& params, AdamConfig config);
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  explicit NonFiniteGradientError(long step);
  long step() const { return step_; }

 private:
  long step_;
};

/// Bias-corrected adaptive-moment descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
/// Callers ascending an objective pass the negated gradient.
void adam_step(MlpParams& params, const Vector& grad, OptimizerState& state);

/// Checkpoint block: "PFMLP001", spec fields, seed, flat length, then the
/// flat vector as little-endian float64.
void write_checkpoint(std::ostream& out, const MlpParams& params);
MlpParams read_checkpoint(std::istream& in);

}  // namespace proxflow::nn
