#include "proxflow/datasets.hpp"

#include "proxflow/binary_io.hpp"
#include "proxflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace proxflow::datasets {

namespace {

Vector parse_vector(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) values.push_back(std::stod(item));
  return Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

bool is_planar(TargetKind k) { return k != TargetKind::Gaussian; }

Matrix orthogonal_map(int dim, std::uint64_t seed) {
  Matrix g = standard_normal(dim, dim, seed);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(dim, dim);
}

Matrix embed(const TargetSpec& spec, const Matrix& planar) {
  if (spec.embed_dim == 2 && !spec.rotate) return planar;
  Matrix out = Matrix::Zero(planar.rows(), spec.embed_dim);
  out.leftCols(2) = planar;
  if (spec.rotate) out = out * orthogonal_map(spec.embed_dim, spec.rotation_seed).transpose();
  return out;
}

}  // namespace

Matrix sample_reference(int d, int n, std::uint64_t seed) {
  if (d <= 0 || n < 0) throw std::invalid_argument("sample_reference: bad shape");
  return standard_normal(n, d, seed);
}

int TargetSpec::dim() const {
  return kind == TargetKind::Gaussian ? static_cast<int>(mean.size()) : embed_dim;
}

std::string kind_name(TargetKind kind) {
  switch (kind) {
    case TargetKind::Gaussian: return "gaussian";
    case TargetKind::GaussianMixture: return "gaussian_mixture";
    case TargetKind::Circle: return "circle";
    case TargetKind::TwoMoons: return "two_moons";
    case TargetKind::Checkerboard: return "checkerboard";
  }
  return "unknown";
}

TargetSpec parse_target(const std::string& kind, const std::string& params) {
  TargetSpec spec;
  if (kind == "gaussian") {
    spec.kind = TargetKind::Gaussian;
  } else if (kind == "gaussian_mixture") {
    spec.kind = TargetKind::GaussianMixture;
    spec.radius = 2.0;
    spec.sigma = 0.1;
  } else if (kind == "circle") {
    spec.kind = TargetKind::Circle;
  } else if (kind == "two_moons") {
    spec.kind = TargetKind::TwoMoons;
  } else if (kind == "checkerboard") {
    spec.kind = TargetKind::Checkerboard;
  } else {
    throw std::invalid_argument("unknown target kind '" + kind + "'");
  }

  std::stringstream ss(params);
  std::string token;
  while (ss >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("target parameter '" + token + "' is not key=value");
    }
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (key == "mean" || key == "m") {
      spec.mean = parse_vector(value);
    } else if (key == "sigma") {
      spec.sigma = std::stod(value);
    } else if (key == "k" || key == "components") {
      spec.components = std::stoi(value);
    } else if (key == "r" || key == "radius") {
      spec.radius = std::stod(value);
    } else if (key == "noise") {
      spec.noise = std::stod(value);
    } else if (key == "embed_dim") {
      spec.embed_dim = std::stoi(value);
    } else if (key == "rotate") {
      spec.rotate = std::stoi(value) != 0;
    } else if (key == "rotation_seed") {
      spec.rotation_seed = std::stoull(value);
    } else {
      throw std::invalid_argument("unknown target parameter '" + key + "' for " + kind);
    }
  }
  if (spec.kind == TargetKind::Gaussian && spec.mean.size() == 0) {
    throw std::invalid_argument("gaussian target needs a nonempty mean");
  }
  if (is_planar(spec.kind) && spec.embed_dim < 2) {
    throw std::invalid_argument("embed_dim must be at least 2");
  }
  if (spec.sigma <= 0.0 || spec.noise < 0.0 || spec.components < 1) {
    throw std::invalid_argument("target parameters out of range");
  }
  return spec;
}

std::string describe(const TargetSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  switch (spec.kind) {
    case TargetKind::Gaussian: {
      os << "mean=";
      for (Eigen::Index i = 0; i < spec.mean.size(); ++i) os << (i ? "," : "") << spec.mean[i];
      os << " sigma=" << spec.sigma;
      return os.str();
    }
    case TargetKind::GaussianMixture:
      os << "k=" << spec.components << " r=" << spec.radius << " sigma=" << spec.sigma;
      break;
    case TargetKind::Circle:
      os << "r=" << spec.radius << " noise=" << spec.noise;
      break;
    case TargetKind::TwoMoons:
      os << "noise=" << spec.noise;
      break;
    case TargetKind::Checkerboard:
      break;
  }
  os << " embed_dim=" << spec.embed_dim << " rotate=" << (spec.rotate ? 1 : 0)
     << " rotation_seed=" << spec.rotation_seed;
  std::string s = os.str();
  return s.front() == ' ' ? s.substr(1) : s;
}

Matrix sample_target(const TargetSpec& spec, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("sample_target: negative count");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double pi = std::numbers::pi;

  if (spec.kind == TargetKind::Gaussian) {
    Matrix out(n, spec.mean.size());
    for (int i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < spec.mean.size(); ++j) {
        out(i, j) = spec.mean[j] + spec.sigma * normal(rng);
      }
    }
    return out;
  }

  Matrix planar(n, 2);
  for (int i = 0; i < n; ++i) {
    double x = 0.0;
    double y = 0.0;
    switch (spec.kind) {
      case TargetKind::GaussianMixture: {
        std::uniform_int_distribution<int> pick(0, spec.components - 1);
        const double angle = 2.0 * pi * pick(rng) / spec.components;
        x = spec.radius * std::cos(angle) + spec.sigma * normal(rng);
        y = spec.radius * std::sin(angle) + spec.sigma * normal(rng);
        break;
      }
      case TargetKind::Circle: {
        const double angle = 2.0 * pi * unit(rng);
        x = spec.radius * std::cos(angle);
        y = spec.radius * std::sin(angle);
        if (spec.noise > 0.0) {
          x += spec.noise * normal(rng);
          y += spec.noise * normal(rng);
        }
        break;
      }
      case TargetKind::TwoMoons: {
        const double t = pi * unit(rng);
        if (unit(rng) < 0.5) {
          x = std::cos(t);
          y = std::sin(t);
        } else {
          x = 1.0 - std::cos(t);
          y = 0.5 - std::sin(t);
        }
        x -= 0.5;
        y -= 0.25;
        if (spec.noise > 0.0) {
          x += spec.noise * normal(rng);
          y += spec.noise * normal(rng);
        }
        break;
      }
      case TargetKind::Checkerboard: {
        x = 4.0 * unit(rng) - 2.0;
        const double base = unit(rng) - 2.0 * std::floor(2.0 * unit(rng));
        y = base + std::fmod(std::floor(x) + 4.0, 2.0);
        break;
      }
      case TargetKind::Gaussian:
        break;
    }
    planar(i, 0) = x;
    planar(i, 1) = y;
  }
  return embed(spec, planar);
}

double manifold_residual(const TargetSpec& spec, const Matrix& samples) {
  if (spec.kind != TargetKind::Circle || samples.rows() == 0) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return (samples.rowwise().norm().array() - spec.radius).abs().mean();
}

IdxHeader read_idx_header(std::istream& in) {
  IdxHeader h;
  h.magic = io::read_u32_be(in, "IDX magic");
  if (h.magic != 0x00000803u) {
    std::ostringstream os;
    os << "bad IDX magic number 0x" << std::hex << h.magic << " (expected 0x00000803)";
    throw std::runtime_error(os.str());
  }
  h.count = io::read_u32_be(in, "IDX item count");
  h.rows = io::read_u32_be(in, "IDX row count");
  h.cols = io::read_u32_be(in, "IDX column count");
  return h;
}

Matrix load_mnist(const std::string& path, int n_train, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open MNIST file '" + path + "'");
  const IdxHeader h = read_idx_header(in);
  const std::size_t pixels = std::size_t{h.rows} * h.cols;
  if (n_train < 0 || static_cast<std::uint32_t>(n_train) > h.count) {
    throw std::invalid_argument("n_train exceeds the number of images in '" + path + "'");
  }
  std::vector<unsigned char> raw(pixels * h.count);
  io::read_exact(in, reinterpret_cast<char*>(raw.data()), raw.size(), "IDX pixel data");

  std::vector<std::uint32_t> order(h.count);
  std::iota(order.begin(), order.end(), 0u);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Matrix out(n_train, static_cast<Eigen::Index>(pixels));
  for (int i = 0; i < n_train; ++i) {
    const unsigned char* img = raw.data() + std::size_t{order[i]} * pixels;
    for (std::size_t p = 0; p < pixels; ++p) out(i, static_cast<Eigen::Index>(p)) = img[p] / 255.0;
  }
  return out;
}

}  // namespace proxflow::datasets
