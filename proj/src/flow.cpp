#include "proxflow/flow.hpp"

#include "proxflow/binary_io.hpp"
#include "proxflow/datasets.hpp"
#include "proxflow/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace proxflow::flow {

namespace {

// Purposes for derive_seed(seed, iteration, purpose).
constexpr std::uint64_t kReferenceDraw = 1;
constexpr std::uint64_t kTargetDraw = 2;
constexpr std::uint64_t kPenaltyDraw = 3;
constexpr std::uint64_t kInitPotential = 4;
constexpr std::uint64_t kInitDiscriminator = 5;

constexpr char kFlowMagic[8] = {'P', 'F', 'F', 'L', 'O', 'W', '0', '1'};

ad::Var time_column(ad::Tape& tape, Eigen::Index rows, double t) {
  return tape.constant(Matrix::Constant(rows, 1, t));
}

}  // namespace

Mode parse_mode(const std::string& name) {
  if (name == "unregularized") return Mode::Unregularized;
  if (name == "w2_only") return Mode::W2Only;
  if (name == "w1_only") return Mode::W1Only;
  if (name == "w1w2") return Mode::W1W2;
  throw std::invalid_argument("unknown mode '" + name +
                              "' (expected unregularized, w2_only, w1_only or w1w2)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Unregularized: return "unregularized";
    case Mode::W2Only: return "w2_only";
    case Mode::W1Only: return "w1_only";
    case Mode::W1W2: return "w1w2";
  }
  return "unknown";
}

bool uses_kinetic(Mode m) { return m == Mode::W2Only || m == Mode::W1W2; }
bool uses_lipschitz(Mode m) { return m == Mode::W1Only || m == Mode::W1W2; }

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return "completed";
    case RunStatus::BlowUp: return "blow_up";
    case RunStatus::NonFinite: return "non_finite";
    case RunStatus::EarlyStop: return "early_stop";
  }
  return "unknown";
}

void FlowConfig::validate() const {
  // lambda also sets the velocity scale v = -grad U / lambda, so it must be
  // positive in every mode, not only where the kinetic term is active.
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (!(T > 0.0)) throw std::invalid_argument("terminal time T must be positive");
  if (K < 1) throw std::invalid_argument("step count K must be >= 1");
  if (M < 1 || N < 1) throw std::invalid_argument("batch sizes M and N must be >= 1");
  if (outer_iters < 0) throw std::invalid_argument("outer iteration count must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw std::invalid_argument("adam_beta1 must be in [0, 1)");
  if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0)) {
    throw std::invalid_argument("lr_final_fraction must be in (0, 1]");
  }
}

nn::MlpSpec potential_spec(int dim, const FlowConfig& cfg) {
  return nn::MlpSpec{dim + 1, cfg.u_widths, cfg.activation, 1};
}

PotentialFn neural_potential(const nn::MlpVars& vars, double T) {
  return [vars, T](ad::Var x, ad::Var t) {
    return nn::forward(vars, ad::concat_cols(x, t * (1.0 / T)));
  };
}

PotentialFactory neural_potential(const nn::MlpParams& params, double T) {
  return [params, T](ad::Tape& tape) { return neural_potential(nn::bind_frozen(tape, params), T); };
}

Matrix velocity(const PotentialFactory& U, const Matrix& x, double t, double lambda) {
  return -indicators::potential_derivatives(U, x, t).grad_x / lambda;
}

SimulationError::SimulationError(const std::string& what, int step)
    : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}

TrajectoryBatch simulate(const PotentialFactory& U, const Matrix& initial, double T, int K,
                         double lambda) {
  if (K < 1) throw std::invalid_argument("simulate: K must be >= 1");
  if (!(T > 0.0) || !(lambda > 0.0)) throw std::invalid_argument("simulate: T, lambda must be > 0");
  TrajectoryBatch traj;
  traj.h = T / K;
  traj.T = T;
  traj.lambda = lambda;
  traj.K = K;
  traj.points.reserve(K + 1);
  traj.grads.reserve(K);
  traj.points.push_back(initial);
  for (int k = 0; k < K; ++k) {
    const Matrix& y = traj.points.back();
    Matrix g;
    try {
      g = indicators::potential_derivatives(U, y, k * traj.h).grad_x;
    } catch (const ad::NonFiniteError& e) {
      throw SimulationError(std::string("simulate: ") + e.what(), k);
    }
    Matrix next = y - (traj.h / lambda) * g;
    if (!next.allFinite()) throw SimulationError("simulate: non-finite position", k + 1);
    traj.grads.push_back(std::move(g));
    traj.points.push_back(std::move(next));
  }
  return traj;
}

TrajectoryBatch simulate(const PotentialFactory& U, const Matrix& initial, const FlowConfig& cfg) {
  return simulate(U, initial, cfg.T, cfg.K, cfg.lambda);
}

TapeTrajectory simulate_on_tape(ad::Tape& tape, const PotentialFn& U, const Matrix& initial,
                                double T, int K, double lambda) {
  if (K < 1) throw std::invalid_argument("simulate_on_tape: K must be >= 1");
  TapeTrajectory traj;
  traj.h = T / K;
  traj.lambda = lambda;
  traj.points.push_back(tape.constant(initial));
  for (int k = 0; k < K; ++k) {
    ad::Var y = traj.points.back();
    ad::Var u = U(y, time_column(tape, initial.rows(), k * traj.h));
    ad::Var g = tape.gradient(ad::sum(u), y);
    traj.grads.push_back(g);
    traj.points.push_back(y - (traj.h / lambda) * g);
  }
  return traj;
}

TrajectoryBatch to_batch(const TapeTrajectory& traj, double T) {
  TrajectoryBatch out;
  out.h = traj.h;
  out.T = T;
  out.lambda = traj.lambda;
  out.K = static_cast<int>(traj.grads.size());
  for (const auto& p : traj.points) out.points.push_back(p.value());
  for (const auto& g : traj.grads) out.grads.push_back(g.value());
  return out;
}

double kinetic_energy(const TrajectoryBatch& traj, double lambda) {
  const Eigen::Index m = traj.batch();
  if (m == 0) return 0.0;
  double total = 0.0;
  for (const auto& g : traj.grads) total += g.squaredNorm();
  return traj.h * total / (2.0 * lambda * static_cast<double>(m));
}

ad::Var kinetic_energy(const TapeTrajectory& traj) {
  const auto m = static_cast<double>(traj.points.front().rows());
  ad::Var total = ad::sum(ad::square(traj.grads.front()));
  for (std::size_t k = 1; k < traj.grads.size(); ++k) {
    total = total + ad::sum(ad::square(traj.grads[k]));
  }
  return total * (traj.h / (2.0 * traj.lambda * m));
}

GeneratorTerms generator_objective(ad::Tape& tape, const TapeTrajectory& traj,
                                   const divergence::PhiFn& phi, const Matrix& target,
                                   const FlowConfig& cfg, divergence::FKind f) {
  GeneratorTerms terms;
  terms.trajectory = traj;
  terms.dual = divergence::dual_estimate(phi(traj.points.back()), phi(tape.constant(target)), f);
  terms.kinetic = kinetic_energy(traj);
  terms.objective = uses_kinetic(cfg.mode) ? terms.dual + terms.kinetic : terms.dual;
  return terms;
}

GeneratorTerms generator_objective(ad::Tape& tape, const PotentialFn& U,
                                   const divergence::PhiFn& phi, const Matrix& initial,
                                   const Matrix& target, const FlowConfig& cfg,
                                   divergence::FKind f) {
  const TapeTrajectory traj = simulate_on_tape(tape, U, initial, cfg.T, cfg.K, cfg.lambda);
  return generator_objective(tape, traj, phi, target, cfg, f);
}

TrainResult train(const TargetSampler& target, int dim, const FlowConfig& cfg,
                  const divergence::DivergenceConfig& div_cfg, const nn::MlpSpec& phi_spec,
                  const IterationCallback& on_iter) {
  cfg.validate();
  div_cfg.validate();
  divergence::DivergenceConfig dc = div_cfg;
  if (!uses_lipschitz(cfg.mode)) dc.penalty_weight = 0.0;

  TrainResult result;
  result.potential = nn::init(potential_spec(dim, cfg), derive_seed(cfg.seed, 0, kInitPotential));
  nn::AdamConfig u_adam{cfg.learning_rate};
  u_adam.beta1 = cfg.adam_beta1;
  auto u_opt = nn::OptimizerState::for_params(result.potential, u_adam);
  result.discriminator =
      divergence::Discriminator::create(phi_spec, dc, derive_seed(cfg.seed, 0, kInitDiscriminator));
  result.discriminator.optimizer.config.beta1 = cfg.adam_beta1;
  const double phi_lr = dc.learning_rate;

  const auto start = std::chrono::steady_clock::now();
  for (long it = 0; it < cfg.outer_iters; ++it) {
    const auto uit = static_cast<std::uint64_t>(it);
    const Matrix y0 = datasets::sample_reference(dim, cfg.M, derive_seed(cfg.seed, uit, kReferenceDraw));
    const Matrix x = target(cfg.N, derive_seed(cfg.seed, uit, kTargetDraw));
    if (x.cols() != dim) throw std::invalid_argument("train: target sampler dimension mismatch");

    const double progress =
        cfg.outer_iters > 1 ? static_cast<double>(it) / (cfg.outer_iters - 1) : 0.0;
    const double lr_scale = 1.0 - (1.0 - cfg.lr_final_fraction) * progress;
    u_opt.config.learning_rate = cfg.learning_rate * lr_scale;
    dc.learning_rate = phi_lr * lr_scale;

    indicators::MetricsRecord rec;
    rec.iter = it;
    try {
      ad::Tape tape;
      const nn::MlpVars vars = nn::bind(tape, result.potential, "U.");
      const PotentialFn u = neural_potential(vars, cfg.T);
      const TapeTrajectory traj = simulate_on_tape(tape, u, y0, cfg.T, cfg.K, cfg.lambda);
      const Matrix endpoints = traj.points.back().value();

      divergence::train_discriminator(endpoints, x, dc, result.discriminator,
                                      derive_seed(cfg.seed, uit, kPenaltyDraw));
      const divergence::PhiFn phi = result.discriminator.bind(tape);
      const GeneratorTerms terms = generator_objective(tape, traj, phi, x, cfg, dc.f);
      rec.dual_estimate = terms.dual.scalar();
      rec.kinetic_energy = terms.kinetic.scalar();

      if (cfg.compute_indicators) {
        const PotentialFactory uf = neural_potential(result.potential, cfg.T);
        const divergence::Discriminator& disc = result.discriminator;
        const PhiFactory pf = [&disc](ad::Tape& t) { return disc.bind(t); };
        rec.hj_residual = indicators::hj_residual(uf, to_batch(traj, cfg.T), cfg.lambda);
        rec.terminal_error = indicators::terminal_error(uf, pf, endpoints, cfg.T);
      } else {
        rec.hj_residual = std::numeric_limits<double>::quiet_NaN();
        rec.terminal_error = std::numeric_limits<double>::quiet_NaN();
      }

      const auto params = vars.all();
      const Vector grad =
          nn::flatten(tape.gradient(terms.objective, params), result.potential.flat.size());
      nn::adam_step(result.potential, grad, u_opt);
    } catch (const std::runtime_error& e) {
      // Non-finite values anywhere in the iteration (tape, discriminator, optimizer).
      result.status = RunStatus::NonFinite;
      result.stop_iter = it;
      result.message = to_string(cfg.mode) + ": " + e.what() + " at outer iteration " +
                       std::to_string(it);
      return result;
    }
    rec.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    if (on_iter) on_iter(rec);

    if (!(std::abs(rec.dual_estimate) <= cfg.blowup_threshold)) {
      result.status = RunStatus::BlowUp;
      result.stop_iter = it;
      result.message = to_string(cfg.mode) + ": terminal estimate " +
                       std::to_string(rec.dual_estimate) + " exceeded " +
                       std::to_string(cfg.blowup_threshold) + " at outer iteration " +
                       std::to_string(it);
      return result;
    }
    if (cfg.early_stop && cfg.compute_indicators &&
        indicators::should_stop(result.history, *cfg.early_stop)) {
      result.status = RunStatus::EarlyStop;
      result.stop_iter = it;
      result.message = "indicators below thresholds";
      return result;
    }
  }
  return result;
}

TrainResult train(const TargetSampler& target, int dim, const FlowConfig& cfg,
                  const divergence::DivergenceConfig& div_cfg, const IterationCallback& on_iter) {
  return train(target, dim, cfg, div_cfg, nn::MlpSpec{dim, cfg.phi_widths, cfg.activation, 1},
               on_iter);
}

Matrix generate(const PotentialFactory& U, int dim, int n, int K_gen, double T, double lambda,
                std::uint64_t seed) {
  if (n == 0) return Matrix(0, dim);
  return generate_from(U, datasets::sample_reference(dim, n, seed), K_gen, T, lambda).endpoints();
}

TrajectoryBatch generate_from(const PotentialFactory& U, const Matrix& initial, int K_gen,
                              double T, double lambda) {
  return simulate(U, initial, T, K_gen, lambda);
}

std::vector<double> chord_deviation_ratios(const TrajectoryBatch& traj, double min_length) {
  std::vector<double> out;
  const Matrix& y0 = traj.points.front();
  const Matrix& yk = traj.points.back();
  for (Eigen::Index m = 0; m < traj.batch(); ++m) {
    const double len = (yk.row(m) - y0.row(m)).norm();
    if (len < min_length) continue;
    double worst = 0.0;
    for (int k = 1; k < traj.K; ++k) {
      const double s = static_cast<double>(k) / traj.K;
      const auto chord = y0.row(m) + s * (yk.row(m) - y0.row(m));
      worst = std::max(worst, (traj.points[k].row(m) - chord).norm());
    }
    out.push_back(worst / len);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  if (values.size() % 2 == 1) return values[mid];
  const double upper = values[mid];
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

double mean_path_length(const TrajectoryBatch& traj) {
  if (traj.batch() == 0) return 0.0;
  Eigen::VectorXd len = Eigen::VectorXd::Zero(traj.batch());
  for (int k = 0; k < traj.K; ++k) len += (traj.points[k + 1] - traj.points[k]).rowwise().norm();
  return len.mean();
}

double mean_displacement(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("mean_displacement: shape mismatch");
  }
  if (a.rows() == 0) return 0.0;
  return (a - b).rowwise().norm().mean();
}

void write_flow_checkpoint(std::ostream& out, const FlowCheckpoint& ckpt) {
  out.write(kFlowMagic, sizeof(kFlowMagic));
  io::write_f64(out, ckpt.lambda);
  io::write_f64(out, ckpt.T);
  io::write_u32(out, static_cast<std::uint32_t>(ckpt.K));
  io::write_u32(out, static_cast<std::uint32_t>(ckpt.mode));
  io::write_u32(out, static_cast<std::uint32_t>(ckpt.f));
  io::write_f64(out, ckpt.margin);
  nn::write_checkpoint(out, ckpt.potential);
  nn::write_checkpoint(out, ckpt.discriminator);
  if (!out) throw std::runtime_error("failed to write flow checkpoint");
}

FlowCheckpoint read_flow_checkpoint(std::istream& in) {
  char magic[8];
  io::read_exact(in, magic, sizeof(magic), "flow checkpoint magic");
  if (!std::equal(magic, magic + 8, kFlowMagic)) {
    throw std::runtime_error("not a flow checkpoint (bad magic)");
  }
  FlowCheckpoint c;
  c.lambda = io::read_f64(in, "lambda");
  c.T = io::read_f64(in, "T");
  c.K = static_cast<int>(io::read_u32(in, "K"));
  const auto mode = io::read_u32(in, "mode");
  const auto f = io::read_u32(in, "f");
  if (mode > 3 || f > 1) throw std::runtime_error("flow checkpoint: bad mode or divergence tag");
  c.mode = static_cast<Mode>(mode);
  c.f = static_cast<divergence::FKind>(f);
  c.margin = io::read_f64(in, "domain margin");
  c.potential = nn::read_checkpoint(in);
  c.discriminator = nn::read_checkpoint(in);
  return c;
}

void save_flow_checkpoint(const std::string& path, const FlowCheckpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  write_flow_checkpoint(out, ckpt);
}

FlowCheckpoint load_flow_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint file '" + path + "' not found or unreadable");
  return read_flow_checkpoint(in);
}

}  // namespace proxflow::flow
