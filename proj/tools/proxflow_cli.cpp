#include "proxflow/config.hpp"
#include "proxflow/datasets.hpp"
#include "proxflow/flow.hpp"
#include "proxflow/indicators.hpp"
#include "proxflow/oracles.hpp"
#include "proxflow/random.hpp"
#include "proxflow/runtime.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace proxflow;
using nlohmann::ordered_json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitBlowUp = 3;

struct RunOutcome {
  flow::RunStatus status = flow::RunStatus::Completed;
  std::string dir;
  std::vector<indicators::MetricsRecord> history;
  std::string message;
};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

ordered_json resolved_json(const config::KeyValues& resolved) {
  ordered_json j;
  for (const auto& [key, def] : config::known_keys()) {
    const auto it = resolved.find(key);
    if (it != resolved.end()) j[key] = it->second;
  }
  return j;
}

RunOutcome run_one(const config::KeyValues& resolved, const std::vector<std::string>& overrides,
                   const fs::path& dir, bool quiet) {
  const config::RunSettings s = config::settings_from(resolved);
  fs::create_directories(dir);

  ordered_json manifest;
  manifest["version"] = PROXFLOW_VERSION;
  manifest["seed"] = s.flow.seed;
  manifest["mode"] = flow::to_string(s.flow.mode);
  manifest["overrides"] = overrides;
  manifest["config"] = resolved_json(resolved);
  write_text(dir / "config.resolved", config::to_text(resolved));

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot write metrics in '" + dir.string() + "'");
  const datasets::TargetSpec target = s.target;
  const flow::TargetSampler sampler = [&target](int n, std::uint64_t seed) {
    return datasets::sample_target(target, n, seed);
  };
  const long every = std::max(1, s.flow.outer_iters / 20);
  flow::TrainResult r = flow::train(
      sampler, target.dim(), s.flow, s.divergence, [&](const indicators::MetricsRecord& rec) {
        metrics << indicators::to_json_line(rec) << '\n';
        if (!quiet && (rec.iter % every == 0 || rec.iter + 1 == s.flow.outer_iters)) {
          std::cerr << "[" << flow::to_string(s.flow.mode) << "] iter " << rec.iter
                    << " dual " << rec.dual_estimate << " kinetic " << rec.kinetic_energy
                    << " hj " << rec.hj_residual << " terminal " << rec.terminal_error << '\n';
        }
      });
  metrics.close();

  flow::FlowCheckpoint ckpt;
  ckpt.lambda = s.flow.lambda;
  ckpt.T = s.flow.T;
  ckpt.K = s.flow.K;
  ckpt.mode = s.flow.mode;
  ckpt.potential = r.potential;
  ckpt.f = s.divergence.f;
  ckpt.margin = s.divergence.domain_margin;
  ckpt.discriminator = r.discriminator.net;
  flow::save_flow_checkpoint((dir / "checkpoint.bin").string(), ckpt);

  manifest["status"] = flow::to_string(r.status);
  manifest["stop_iter"] = r.stop_iter;
  manifest["iterations_recorded"] = r.history.size();
  if (!r.message.empty()) manifest["message"] = r.message;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return {r.status, dir.string(), std::move(r.history), r.message};
}

config::KeyValues load_config(const std::string& path, const std::vector<std::string>& overrides,
                              bool need_mode) {
  config::KeyValues kv = config::read_file(path);
  for (const auto& o : overrides) config::apply_override(kv, o);
  return config::resolve(kv, need_mode);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              bool quiet) {
  const auto resolved = load_config(config_path, overrides, true);
  const RunOutcome out = run_one(resolved, overrides, resolved.at("out_dir"), quiet);
  if (out.status == flow::RunStatus::BlowUp || out.status == flow::RunStatus::NonFinite) {
    std::cerr << "run terminated: " << out.message << '\n';
    return kExitBlowUp;
  }
  std::cout << "run completed: " << out.history.size() << " iterations, outputs in " << out.dir
            << '\n';
  return 0;
}

double window_mean(const std::vector<double>& v, std::size_t window) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = std::min(window, v.size());
  return std::accumulate(v.end() - static_cast<long>(n), v.end(), 0.0) / static_cast<double>(n);
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
              bool quiet, std::size_t window) {
  const auto base = load_config(config_path, overrides, false);
  const fs::path root = base.at("out_dir");
  fs::create_directories(root);
  ordered_json manifest;
  manifest["version"] = PROXFLOW_VERSION;
  manifest["seed"] = base.at("seed");
  manifest["runs"] = ordered_json::array();

  std::ostringstream table;
  table << "mode\tstatus\titerations\tdual_estimate\tkinetic_energy\thj_residual\tterminal_error\n";
  for (const auto mode : {flow::Mode::Unregularized, flow::Mode::W2Only, flow::Mode::W1Only,
                          flow::Mode::W1W2}) {
    auto kv = base;
    kv["mode"] = flow::to_string(mode);
    const fs::path dir = root / flow::to_string(mode);
    kv["out_dir"] = dir.string();
    const RunOutcome out = run_one(kv, overrides, dir, quiet);
    manifest["runs"].push_back({{"mode", flow::to_string(mode)},
                                {"dir", out.dir},
                                {"status", flow::to_string(out.status)}});
    std::vector<double> dual, kin, hj, te;
    for (const auto& r : out.history) {
      dual.push_back(r.dual_estimate);
      kin.push_back(r.kinetic_energy);
      hj.push_back(r.hj_residual);
      te.push_back(r.terminal_error);
    }
    table << flow::to_string(mode) << '\t' << flow::to_string(out.status) << '\t'
          << out.history.size() << '\t' << window_mean(dual, window) << '\t'
          << window_mean(kin, window) << '\t' << window_mean(hj, window) << '\t'
          << window_mean(te, window) << '\n';
  }
  write_text(root / "sweep_manifest.json", manifest.dump(2) + "\n");
  write_text(root / "comparison.tsv", table.str());
  std::cout << table.str();
  return 0;
}

void write_samples(std::ostream& out, const Matrix& x, int dim) {
  for (int j = 0; j < dim; ++j) out << (j ? "," : "") << 'x' << j;
  out << '\n';
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << format_double(x(i, j));
    out << '\n';
  }
}

Matrix read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open samples file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("samples file '" + path + "' is empty");
  const auto dim = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  long row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index cols = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++cols;
    }
    if (cols != dim) {
      throw std::runtime_error("samples file '" + path + "': row " + std::to_string(row) +
                               " has " + std::to_string(cols) + " columns, header has " +
                               std::to_string(dim));
    }
  }
  Matrix x(row, dim);
  for (long i = 0; i < row; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) x(i, j) = values[static_cast<std::size_t>(i * dim + j)];
  }
  return x;
}

int cmd_generate(const std::string& checkpoint, int n, int k_gen, std::uint64_t seed,
                 const std::string& out_path) {
  if (n < 0) throw std::invalid_argument("n must be >= 0");
  if (k_gen < 1) throw std::invalid_argument("K_gen must be >= 1");
  const flow::FlowCheckpoint c = flow::load_flow_checkpoint(checkpoint);
  const int dim = c.potential.spec.in_dim - 1;
  const Matrix x = flow::generate(flow::neural_potential(c.potential, c.T), dim, n, k_gen, c.T,
                                  c.lambda, seed);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
  write_samples(out, x, dim);
  return 0;
}

Matrix subsample(const Matrix& x, int n, std::uint64_t seed) {
  if (x.rows() <= n) return x;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Matrix out(n, x.cols());
  for (int i = 0; i < n; ++i) out.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

Matrix covariance(const Matrix& x) {
  const Matrix centered = x.rowwise() - x.colwise().mean();
  return centered.transpose() * centered / std::max<double>(1.0, static_cast<double>(x.rows() - 1));
}

int cmd_evaluate(const std::string& samples_path, const std::string& config_path,
                 const std::vector<std::string>& overrides, int n_sub, std::uint64_t seed,
                 const std::string& report_path, const std::string& compare_path) {
  const auto resolved = load_config(config_path, overrides, false);
  const config::RunSettings s = config::settings_from(resolved);
  const Matrix samples = read_samples(samples_path);
  if (samples.cols() != s.target.dim()) {
    throw std::invalid_argument("dimension mismatch: samples have " +
                                std::to_string(samples.cols()) + " columns, target has dimension " +
                                std::to_string(s.target.dim()));
  }
  if (samples.rows() == 0) throw std::invalid_argument("samples file has no rows");
  n_sub = std::min<int>(n_sub, static_cast<int>(samples.rows()));
  if (n_sub > 256) throw std::invalid_argument("subsample size must be <= 256");

  const Matrix sub = subsample(samples, n_sub, derive_seed(seed, 1));
  const Matrix fresh = datasets::sample_target(s.target, n_sub, derive_seed(seed, 2));
  const Matrix fresh2 = datasets::sample_target(s.target, n_sub, derive_seed(seed, 3));
  const Matrix big = datasets::sample_target(s.target, 20000, derive_seed(seed, 4));

  ordered_json report;
  report["samples"] = samples_path;
  report["n_samples"] = samples.rows();
  report["dim"] = samples.cols();
  report["target"] = datasets::kind_name(s.target.kind) + " " + datasets::describe(s.target);
  report["subsample"] = n_sub;
  report["w1_to_target"] = oracles::empirical_w1_exact(sub, fresh);
  report["w1_self_baseline"] = oracles::empirical_w1_exact(fresh, fresh2);
  report["mean_error"] = (samples.colwise().mean() - big.colwise().mean()).norm();
  report["cov_error"] = (covariance(samples) - covariance(big)).norm();
  const double residual = datasets::manifold_residual(s.target, samples);
  if (std::isnan(residual)) {
    report["manifold_residual"] = nullptr;
  } else {
    report["manifold_residual"] = residual;
  }
  if (!compare_path.empty()) {
    const Matrix other = read_samples(compare_path);
    if (other.rows() != samples.rows() || other.cols() != samples.cols()) {
      throw std::invalid_argument("comparison file shape differs from samples");
    }
    report["mean_displacement"] = flow::mean_displacement(samples, other);
  }
  const std::string text = report.dump(2) + "\n";
  std::cout << text;
  if (!report_path.empty()) write_text(report_path, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate W1+W2 proximal generative flows"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PROXFLOW_VERSION);

  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "train one flow from a key=value config");
  train->add_option("config", config_path, "config file")->required();
  train->add_option("--override", overrides, "key=value, applied after the file");
  train->add_flag("-q,--quiet", quiet, "no progress output");

  std::size_t window = 50;
  auto* sweep = app.add_subcommand("sweep", "run all four modes on one target");
  sweep->add_option("config", config_path, "config file")->required();
  sweep->add_option("--override", overrides, "key=value, applied after the file");
  sweep->add_option("--window", window, "trailing window for the comparison table");
  sweep->add_flag("-q,--quiet", quiet, "no progress output");

  std::string checkpoint;
  int n = 1000;
  int k_gen = 5;
  std::uint64_t seed = 0;
  std::string out_path;
  auto* gen = app.add_subcommand("generate", "sample from a trained checkpoint");
  gen->add_option("checkpoint", checkpoint, "checkpoint.bin from a train run")->required();
  gen->add_option("-n,--count", n, "number of samples");
  gen->add_option("-k,--k-gen", k_gen, "Euler steps over [0, T]");
  gen->add_option("-s,--seed", seed, "seed for the reference draws");
  gen->add_option("-o,--out", out_path, "output file")->required();

  std::string samples_path;
  std::string report_path;
  std::string compare_path;
  int n_sub = 256;
  auto* eval = app.add_subcommand("evaluate", "compare samples with the configured target");
  eval->add_option("samples", samples_path, "samples file from generate")->required();
  eval->add_option("config", config_path, "config file with target.kind / target.params")
      ->required();
  eval->add_option("--override", overrides, "key=value, applied after the file");
  eval->add_option("--subsample", n_sub, "points used for the exact W1 (<= 256)");
  eval->add_option("-s,--seed", seed, "seed for target draws and subsampling");
  eval->add_option("--compare", compare_path, "second samples file for endpoint displacement");
  eval->add_option("-o,--out", report_path, "also write the report here");

  CLI11_PARSE(app, argc, argv);
  configure_allocator();

  try {
    if (*train) return cmd_train(config_path, overrides, quiet);
    if (*sweep) return cmd_sweep(config_path, overrides, quiet, window);
    if (*gen) return cmd_generate(checkpoint, n, k_gen, seed, out_path);
    if (*eval) {
      return cmd_evaluate(samples_path, config_path, overrides, n_sub, seed, report_path,
                          compare_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
