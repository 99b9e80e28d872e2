#include "proxflow/nn.hpp"

#include "proxflow/binary_io.hpp"

#include <cmath>
#include <cstring>
#include <random>

namespace proxflow::nn {

namespace {

constexpr char kMlpMagic[8] = {'P', 'F', 'M', 'L', 'P', '0', '0', '1'};

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "softplus") return Activation::Softplus;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Softplus: return "softplus";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "unknown";
}

std::vector<int> MlpSpec::layer_sizes() const {
  std::vector<int> sizes;
  sizes.reserve(widths.size() + 2);
  sizes.push_back(in_dim);
  sizes.insert(sizes.end(), widths.begin(), widths.end());
  sizes.push_back(out_dim);
  return sizes;
}

std::size_t MlpSpec::param_count() const {
  const auto sizes = layer_sizes();
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    n += static_cast<std::size_t>(sizes[i]) * sizes[i + 1] + sizes[i + 1];
  }
  return n;
}

void MlpSpec::validate() const {
  if (in_dim <= 0) throw std::invalid_argument("MlpSpec: in_dim must be positive");
  if (out_dim != 1) throw std::invalid_argument("MlpSpec: out_dim must be 1");
  if (widths.empty()) throw std::invalid_argument("MlpSpec: widths must be nonempty");
  for (int w : widths) {
    if (w <= 0) throw std::invalid_argument("MlpSpec: zero-width layer");
  }
}

std::vector<MlpParams::Slice> MlpParams::layout() const {
  const auto sizes = spec.layer_sizes();
  std::vector<Slice> slices;
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    Slice s{offset, offset + Eigen::Index{sizes[i]} * sizes[i + 1], sizes[i], sizes[i + 1]};
    offset = s.bias_offset + sizes[i + 1];
    slices.push_back(s);
  }
  return slices;
}

Eigen::Map<const Matrix> MlpParams::weight(std::size_t layer) const {
  const Slice s = layout().at(layer);
  return Eigen::Map<const Matrix>(flat.data() + s.weight_offset, s.fan_in, s.fan_out);
}

Eigen::Map<const Vector> MlpParams::bias(std::size_t layer) const {
  const Slice s = layout().at(layer);
  return Eigen::Map<const Vector>(flat.data() + s.bias_offset, s.fan_out);
}

MlpParams init(const MlpSpec& spec, std::uint64_t seed, double final_bias) {
  spec.validate();
  MlpParams p;
  p.spec = spec;
  p.seed = seed;
  p.flat = Vector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  std::mt19937_64 rng(seed);
  const auto slices = p.layout();
  for (const auto& s : slices) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < Eigen::Index{s.fan_in} * s.fan_out; ++i) {
      p.flat[s.weight_offset + i] = dist(rng);
    }
  }
  p.flat[slices.back().bias_offset] = final_bias;
  return p;
}

std::vector<ad::Var> MlpVars::all() const {
  std::vector<ad::Var> out;
  out.reserve(weights.size() * 2);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

MlpVars bind(ad::Tape& tape, const MlpParams& params, const std::string& prefix) {
  MlpVars vars;
  vars.spec = params.spec;
  const auto slices = params.layout();
  for (std::size_t i = 0; i < slices.size(); ++i) {
    vars.weights.push_back(tape.leaf(prefix + "W" + std::to_string(i), params.weight(i)));
    vars.biases.push_back(
        tape.leaf(prefix + "b" + std::to_string(i), params.bias(i).transpose()));
  }
  return vars;
}

MlpVars bind_frozen(ad::Tape& tape, const MlpParams& params) {
  MlpVars vars;
  vars.spec = params.spec;
  const auto slices = params.layout();
  for (std::size_t i = 0; i < slices.size(); ++i) {
    vars.weights.push_back(tape.constant(params.weight(i)));
    vars.biases.push_back(tape.constant(params.bias(i).transpose()));
  }
  return vars;
}

ad::Var forward(const MlpVars& net, ad::Var input) {
  if (input.cols() != net.spec.in_dim) {
    throw std::invalid_argument("forward: input has " + std::to_string(input.cols()) +
                                " columns, network expects " +
                                std::to_string(net.spec.in_dim));
  }
  ad::Var h = input;
  const std::size_t layers = net.weights.size();
  for (std::size_t i = 0; i < layers; ++i) {
    h = ad::add_row(ad::matmul(h, net.weights[i]), net.biases[i]);
    if (i + 1 == layers) break;
    switch (net.spec.activation) {
      case Activation::Softplus: h = ad::softplus(h); break;
      case Activation::Tanh: h = ad::tanh(h); break;
      case Activation::Relu: h = ad::relu(h); break;
    }
  }
  return h;
}

Vector flatten(const std::vector<ad::Var>& grads, std::size_t expected_length) {
  Vector out(static_cast<Eigen::Index>(expected_length));
  Eigen::Index offset = 0;
  for (const ad::Var& g : grads) {
    const Matrix& v = g.value();
    if (offset + v.size() > out.size()) {
      throw std::invalid_argument("flatten: gradients exceed parameter length");
    }
    // Weight blocks are column-major like the flat layout; bias rows are 1 x n.
    std::memcpy(out.data() + offset, v.data(), sizeof(double) * v.size());
    offset += v.size();
  }
  if (offset != out.size()) {
    throw std::invalid_argument("flatten: gradients shorter than parameter length");
  }
  return out;
}

Vector evaluate(const MlpParams& params, const Matrix& input) {
  ad::Tape tape;
  MlpVars net = bind_frozen(tape, params);
  ad::Var out = forward(net, tape.constant(input));
  return out.value().col(0);
}

double lipschitz_upper_bound(const MlpParams& params) {
  double bound = 1.0;
  for (std::size_t i = 0; i < params.layout().size(); ++i) {
    Eigen::JacobiSVD<Matrix> svd(Matrix(params.weight(i)));
    bound *= svd.singularValues()(0);
  }
  return bound;
}

OptimizerState OptimizerState::for_params(const MlpParams& params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  s.first_moment = Vector::Zero(params.flat.size());
  s.second_moment = Vector::Zero(params.flat.size());
  return s;
}

NonFiniteGradientError::NonFiniteGradientError(long step)
    : std::runtime_error("non-finite gradient at optimizer step " + std::to_string(step)),
      step_(step) {}

void adam_step(MlpParams& params, const Vector& grad, OptimizerState& state) {
  if (grad.size() != params.flat.size() || state.first_moment.size() != params.flat.size() ||
      state.second_moment.size() != params.flat.size()) {
    throw std::invalid_argument("adam_step: length mismatch");
  }
  if (!grad.allFinite()) {
    throw NonFiniteGradientError(state.step + 1);
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grad;
  state.second_moment =
      c.beta2 * state.second_moment + (1.0 - c.beta2) * grad.cwiseProduct(grad);
  const double correct1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correct2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  params.flat.array() -= c.learning_rate * (state.first_moment.array() / correct1) /
                         ((state.second_moment.array() / correct2).sqrt() + c.epsilon);
}

void write_checkpoint(std::ostream& out, const MlpParams& params) {
  out.write(kMlpMagic, sizeof kMlpMagic);
  io::write_u32(out, static_cast<std::uint32_t>(params.spec.in_dim));
  io::write_u32(out, static_cast<std::uint32_t>(params.spec.widths.size()));
  for (int w : params.spec.widths) io::write_u32(out, static_cast<std::uint32_t>(w));
  io::write_u32(out, static_cast<std::uint32_t>(params.spec.activation));
  io::write_u32(out, static_cast<std::uint32_t>(params.spec.out_dim));
  io::write_u64(out, params.seed);
  io::write_u64(out, static_cast<std::uint64_t>(params.flat.size()));
  for (Eigen::Index i = 0; i < params.flat.size(); ++i) io::write_f64(out, params.flat[i]);
}

MlpParams read_checkpoint(std::istream& in) {
  char magic[8];
  io::read_exact(in, magic, sizeof magic, "checkpoint magic");
  if (std::memcmp(magic, kMlpMagic, sizeof magic) != 0) {
    throw std::runtime_error("bad checkpoint magic");
  }
  MlpParams p;
  p.spec.in_dim = static_cast<int>(io::read_u32(in, "in_dim"));
  const std::uint32_t layers = io::read_u32(in, "layer count");
  if (layers > 4096) throw std::runtime_error("implausible layer count in checkpoint");
  for (std::uint32_t i = 0; i < layers; ++i) {
    p.spec.widths.push_back(static_cast<int>(io::read_u32(in, "width")));
  }
  const std::uint32_t act = io::read_u32(in, "activation");
  if (act > static_cast<std::uint32_t>(Activation::Relu)) {
    throw std::runtime_error("bad activation tag in checkpoint");
  }
  p.spec.activation = static_cast<Activation>(act);
  p.spec.out_dim = static_cast<int>(io::read_u32(in, "out_dim"));
  p.spec.validate();
  p.seed = io::read_u64(in, "seed");
  const std::uint64_t n = io::read_u64(in, "flat length");
  if (n != p.spec.param_count()) {
    throw std::runtime_error("checkpoint flat length does not match its spec");
  }
  p.flat.resize(static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < n; ++i) p.flat[static_cast<Eigen::Index>(i)] = io::read_f64(in, "parameters");
  return p;
}

}  // namespace proxflow::nn
