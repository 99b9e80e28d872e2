#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <string>

namespace proxflow::datasets {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// n x d standard normal draws, deterministic per seed.
Matrix sample_reference(int d, int n, std::uint64_t seed);

enum class TargetKind { Gaussian, GaussianMixture, Circle, TwoMoons, Checkerboard };

/// Target distribution description. The planar kinds (mixture, circle, moons,
/// checkerboard) are generated in R^2 and zero-padded to embed_dim, optionally
/// rotated by a fixed orthogonal map drawn from rotation_seed.
struct TargetSpec {
  TargetKind kind = TargetKind::Gaussian;
  Vector mean = Vector::Zero(2);  // gaussian
  double sigma = 1.0;             // gaussian; per-component std for the mixture
  int components = 8;             // gaussian_mixture
  double radius = 1.0;            // circle; mixture ring radius
  double noise = 0.0;             // circle, two_moons
  int embed_dim = 2;
  bool rotate = false;
  std::uint64_t rotation_seed = 0;

  int dim() const;
};

/// Parses e.g. kind "circle" with params "r=1 noise=0 embed_dim=8".
/// Vector values are comma separated: "mean=3,0 sigma=1".
TargetSpec parse_target(const std::string& kind, const std::string& params);
std::string kind_name(TargetKind kind);
std::string describe(const TargetSpec& spec);

Matrix sample_target(const TargetSpec& spec, int n, std::uint64_t seed);

/// Mean | |x| - r | for circle targets; NaN for kinds without a closed-form manifold.
double manifold_residual(const TargetSpec& spec, const Matrix& samples);

struct IdxHeader {
  std::uint32_t magic = 0;
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
};

/// Reads the big-endian header of an IDX3 image file (magic 0x00000803).
IdxHeader read_idx_header(std::istream& in);

/// Loads a seeded subset of n_train images from an IDX3 file, scaled to [0, 1].
Matrix load_mnist(const std::string& path, int n_train, std::uint64_t seed);

}  // namespace proxflow::datasets
