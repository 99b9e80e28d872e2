#include "proxflow/config.hpp"
#include "proxflow/datasets.hpp"
#include "proxflow/divergence.hpp"
#include "proxflow/flow.hpp"
#include "proxflow/indicators.hpp"
#include "proxflow/oracles.hpp"
#include "proxflow/runtime.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace proxflow;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace {

divergence::FKind fkind(const std::string& name) { return divergence::parse_fkind(name); }

// A trained flow: potential, discriminator and the integration settings.
struct Model {
  flow::FlowCheckpoint ckpt;

  int dim() const { return ckpt.potential.spec.in_dim - 1; }
  PotentialFactory potential() const { return flow::neural_potential(ckpt.potential, ckpt.T); }

  Matrix generate(int n, int k_gen, std::uint64_t seed) const {
    return flow::generate(potential(), dim(), n, k_gen > 0 ? k_gen : ckpt.K, ckpt.T, ckpt.lambda,
                          seed);
  }

  // (K + 1) x n x d positions, returned as a list of n x d arrays.
  std::vector<Matrix> trajectories(const Matrix& initial, int k_gen) const {
    return flow::generate_from(potential(), initial, k_gen > 0 ? k_gen : ckpt.K, ckpt.T,
                               ckpt.lambda)
        .points;
  }

  Vector discriminator(const Matrix& x) const {
    divergence::Discriminator d;
    d.net = ckpt.discriminator;
    d.f = ckpt.f;
    d.margin = ckpt.margin;
    return d.values(x);
  }
};

py::dict history_dict(const std::vector<indicators::MetricsRecord>& h) {
  std::vector<long> iter;
  std::vector<double> dual, kin, hj, te, wall;
  for (const auto& r : h) {
    iter.push_back(r.iter);
    dual.push_back(r.dual_estimate);
    kin.push_back(r.kinetic_energy);
    hj.push_back(r.hj_residual);
    te.push_back(r.terminal_error);
    wall.push_back(r.wallclock_s);
  }
  py::dict out;
  out["iter"] = iter;
  out["dual_estimate"] = dual;
  out["kinetic_energy"] = kin;
  out["hj_residual"] = hj;
  out["terminal_error"] = te;
  out["wallclock_s"] = wall;
  return out;
}

py::dict train(const std::string& config_text, const std::map<std::string, std::string>& overrides) {
  auto kv = config::parse_text(config_text);
  for (const auto& [k, v] : overrides) config::apply_override(kv, k + "=" + v);
  if (!kv.count("out_dir")) kv["out_dir"] = ".";
  const auto s = config::settings_from(config::resolve(kv));
  const auto target = s.target;
  flow::TargetSampler sampler = [target](int n, std::uint64_t seed) {
    return datasets::sample_target(target, n, seed);
  };
  flow::TrainResult r;
  {
    py::gil_scoped_release release;
    r = flow::train(sampler, target.dim(), s.flow, s.divergence);
  }
  Model m;
  m.ckpt = {s.flow.lambda, s.flow.T, s.flow.K, s.flow.mode, r.potential, s.divergence.f,
            s.divergence.domain_margin, r.discriminator.net};
  py::dict out;
  out["model"] = m;
  out["history"] = history_dict(r.history);
  out["status"] = flow::to_string(r.status);
  out["message"] = r.message;
  return out;
}

}  // namespace

PYBIND11_MODULE(proxflow, m) {
  m.doc() = "Wasserstein-proximal generative flows: training, sampling and oracles.";
  m.attr("__version__") = PROXFLOW_VERSION;
  configure_allocator();

  py::class_<Model>(m, "Model")
      .def_property_readonly("dim", &Model::dim)
      .def_property_readonly("lambda_", [](const Model& s) { return s.ckpt.lambda; })
      .def_property_readonly("T", [](const Model& s) { return s.ckpt.T; })
      .def_property_readonly("K", [](const Model& s) { return s.ckpt.K; })
      .def_property_readonly("mode", [](const Model& s) { return flow::to_string(s.ckpt.mode); })
      .def("generate", &Model::generate, py::arg("n"), py::arg("k_gen") = 0, py::arg("seed") = 0,
           "Integrate n fresh standard-normal draws; k_gen = 0 uses the training step count.")
      .def("trajectories", &Model::trajectories, py::arg("initial"), py::arg("k_gen") = 0)
      .def("discriminator", &Model::discriminator, py::arg("x"))
      .def("save", [](const Model& s, const std::string& path) {
        flow::save_flow_checkpoint(path, s.ckpt);
      });

  m.def(
      "load_model",
      [](const std::string& path) { return Model{flow::load_flow_checkpoint(path)}; },
      py::arg("path"));
  m.def("train", &train, py::arg("config"), py::arg("overrides") = std::map<std::string, std::string>{},
        "Train from key = value config text. Returns model, history, status and message.");

  m.def("sample_reference", &datasets::sample_reference, py::arg("dim"), py::arg("n"),
        py::arg("seed"));
  m.def(
      "sample_target",
      [](const std::string& kind, const std::string& params, int n, std::uint64_t seed) {
        return datasets::sample_target(datasets::parse_target(kind, params), n, seed);
      },
      py::arg("kind"), py::arg("params"), py::arg("n"), py::arg("seed"));
  m.def(
      "manifold_residual",
      [](const std::string& kind, const std::string& params, const Matrix& x) {
        return datasets::manifold_residual(datasets::parse_target(kind, params), x);
      },
      py::arg("kind"), py::arg("params"), py::arg("samples"));

  m.def(
      "f_star", [](const std::string& f, double y) { return divergence::f_star(fkind(f), y); },
      py::arg("f"), py::arg("y"));
  m.def(
      "dual_estimate",
      [](const Vector& phi_gen, const Vector& phi_target, const std::string& f) {
        return divergence::dual_estimate(phi_gen, phi_target, fkind(f));
      },
      py::arg("phi_gen"), py::arg("phi_target"), py::arg("f") = "reverse_kl");

  m.def("gaussian_w2_squared", &oracles::gaussian_w2_squared, py::arg("m1"), py::arg("c1"),
        py::arg("m2"), py::arg("c2"));
  m.def("gaussian_kl", &oracles::gaussian_kl, py::arg("m1"), py::arg("c1"), py::arg("m2"),
        py::arg("c2"));
  m.def("empirical_w1_exact", &oracles::empirical_w1_exact, py::arg("a"), py::arg("b"));
  m.def("min_cost_assignment", &oracles::min_cost_assignment, py::arg("cost"));
  m.def(
      "fgamma_two_dirac",
      [](const std::string& f, double L, double dist) {
        return oracles::fgamma_two_dirac(fkind(f), L, dist);
      },
      py::arg("f"), py::arg("L"), py::arg("dist"));
  m.def(
      "conjugate_check",
      [](const std::string& f, double y) { return oracles::conjugate_check(fkind(f), y); },
      py::arg("f"), py::arg("y"));
}
