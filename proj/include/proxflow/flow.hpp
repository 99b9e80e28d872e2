#pragma once

#include "proxflow/divergence.hpp"
#include "proxflow/indicators.hpp"
#include "proxflow/nn.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxflow::flow {

using ad::Matrix;
using nn::Vector;

enum class Mode { Unregularized, W2Only, W1Only, W1W2 };

Mode parse_mode(const std::string& name);
std::string to_string(Mode m);
/// Whether the kinetic term enters the generator objective.
bool uses_kinetic(Mode m);
/// Whether the discriminator is Lipschitz-constrained by the gradient penalty.
bool uses_lipschitz(Mode m);

struct FlowConfig {
  double lambda = 0.05;
  double T = 5.0;
  int K = 5;
  Mode mode = Mode::W1W2;
  int M = 256;  // trajectories per outer iteration
  int N = 256;  // target samples per outer iteration
  int outer_iters = 2000;
  std::uint64_t seed = 0;
  std::vector<int> u_widths = {512, 512, 512};
  std::vector<int> phi_widths = {256, 256, 256};
  nn::Activation activation = nn::Activation::Softplus;
  double learning_rate = 1e-4;  // potential network
  double adam_beta1 = 0.9;       // both networks
  // Both learning rates decay linearly to this fraction of their start value.
  double lr_final_fraction = 1.0;
  bool compute_indicators = true;
  double blowup_threshold = 1e3;
  std::optional<indicators::StopThresholds> early_stop;

  double h() const { return T / K; }
  void validate() const;
};

/// Potential network U(x, t) on inputs [x, t / T].
nn::MlpSpec potential_spec(int dim, const FlowConfig& cfg);
PotentialFn neural_potential(const nn::MlpVars& vars, double T);
PotentialFactory neural_potential(const nn::MlpParams& params, double T);

/// -grad_x U(x, t) / lambda for each row of x.
Matrix velocity(const PotentialFactory& U, const Matrix& x, double t, double lambda);

class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, int step);
  int step() const { return step_; }

 private:
  int step_;
};

/// Forward Euler Y_{k+1} = Y_k - (h / lambda) grad U(Y_k, k h), h = T / K.
TrajectoryBatch simulate(const PotentialFactory& U, const Matrix& initial, double T, int K,
                         double lambda);
TrajectoryBatch simulate(const PotentialFactory& U, const Matrix& initial, const FlowConfig& cfg);

/// The same recurrence recorded on a tape, so the endpoints stay differentiable
/// with respect to whatever U depends on.
struct TapeTrajectory {
  std::vector<ad::Var> points;
  std::vector<ad::Var> grads;
  double h = 1.0;
  double lambda = 1.0;
};
TapeTrajectory simulate_on_tape(ad::Tape& tape, const PotentialFn& U, const Matrix& initial,
                                double T, int K, double lambda);
TrajectoryBatch to_batch(const TapeTrajectory& traj, double T);

/// (h / (2 lambda M)) sum_m sum_k |grad U(Y_k, k h)|^2.
double kinetic_energy(const TrajectoryBatch& traj, double lambda);
ad::Var kinetic_energy(const TapeTrajectory& traj);

struct GeneratorTerms {
  ad::Var objective;
  ad::Var dual;
  ad::Var kinetic;
  TapeTrajectory trajectory;
};

/// Dual estimate at the simulated endpoints plus, for modes with the W2 term,
/// the kinetic energy. phi is used as given, i.e. frozen unless bound otherwise.
GeneratorTerms generator_objective(ad::Tape& tape, const TapeTrajectory& traj,
                                   const divergence::PhiFn& phi, const Matrix& target,
                                   const FlowConfig& cfg, divergence::FKind f);
GeneratorTerms generator_objective(ad::Tape& tape, const PotentialFn& U,
                                   const divergence::PhiFn& phi, const Matrix& initial,
                                   const Matrix& target, const FlowConfig& cfg,
                                   divergence::FKind f);

using TargetSampler = std::function<Matrix(int n, std::uint64_t seed)>;

enum class RunStatus { Completed, BlowUp, NonFinite, EarlyStop };
std::string to_string(RunStatus s);

struct TrainResult {
  nn::MlpParams potential;
  divergence::Discriminator discriminator;
  std::vector<indicators::MetricsRecord> history;
  RunStatus status = RunStatus::Completed;
  long stop_iter = -1;
  std::string message;
};

using IterationCallback = std::function<void(const indicators::MetricsRecord&)>;

/// Alternating training: per outer iteration, sample reference and target
/// batches, simulate, update the discriminator, then take one descent step on
/// the generator objective with the discriminator frozen.
TrainResult train(const TargetSampler& target, int dim, const FlowConfig& cfg,
                  const divergence::DivergenceConfig& div_cfg,
                  const nn::MlpSpec& phi_spec, const IterationCallback& on_iter = {});
TrainResult train(const TargetSampler& target, int dim, const FlowConfig& cfg,
                  const divergence::DivergenceConfig& div_cfg,
                  const IterationCallback& on_iter = {});

/// Integrates fresh N(0, I) draws with K_gen steps.
Matrix generate(const PotentialFactory& U, int dim, int n, int K_gen, double T, double lambda,
                std::uint64_t seed);
TrajectoryBatch generate_from(const PotentialFactory& U, const Matrix& initial, int K_gen,
                              double T, double lambda);

/// Per trajectory: max_k |Y_k - chord_k| / |Y_K - Y_0|, skipping trajectories
/// shorter than min_length.
std::vector<double> chord_deviation_ratios(const TrajectoryBatch& traj, double min_length = 1e-3);
double median(std::vector<double> values);
/// Mean over trajectories of the polyline length sum_k |Y_{k+1} - Y_k|.
double mean_path_length(const TrajectoryBatch& traj);
/// Mean row distance between two endpoint clouds.
double mean_displacement(const Matrix& a, const Matrix& b);

struct FlowCheckpoint {
  double lambda = 0.05;
  double T = 5.0;
  int K = 5;
  Mode mode = Mode::W1W2;
  nn::MlpParams potential;
  divergence::FKind f = divergence::FKind::ReverseKl;
  double margin = 1e-3;
  nn::MlpParams discriminator;
};

void write_flow_checkpoint(std::ostream& out, const FlowCheckpoint& ckpt);
FlowCheckpoint read_flow_checkpoint(std::istream& in);
void save_flow_checkpoint(const std::string& path, const FlowCheckpoint& ckpt);
FlowCheckpoint load_flow_checkpoint(const std::string& path);

}  // namespace proxflow::flow
