#include "proxflow/datasets.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace proxflow;
using datasets::Matrix;

namespace {

void put_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::string write_idx(std::uint32_t magic, std::uint32_t count, std::uint32_t rows,
                      std::uint32_t cols, bool truncate = false) {
  const auto path = std::filesystem::temp_directory_path() /
                    ("proxflow_idx_" + std::to_string(magic) + "_" + std::to_string(count) +
                     (truncate ? "_t" : "") + ".idx");
  std::ofstream out(path, std::ios::binary);
  put_be32(out, magic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  const std::size_t n = std::size_t{count} * rows * cols - (truncate ? 3 : 0);
  for (std::size_t i = 0; i < n; ++i) out.put(static_cast<char>((i * 37) % 256));
  return path.string();
}

}  // namespace

TEST_CASE("reference samples are standard normal and seeded") {
  const Matrix a = datasets::sample_reference(3, 20000, 5);
  CHECK(a.rows() == 20000);
  CHECK(a.cols() == 3);
  CHECK(a.colwise().mean().norm() < 0.05);
  const Matrix c = (a.transpose() * a) / a.rows();
  CHECK((c - Matrix::Identity(3, 3)).norm() < 0.06);
  CHECK(a == datasets::sample_reference(3, 20000, 5));
}

TEST_CASE("noise-free circle lies on the circle and is singular in the embedding") {
  auto spec = datasets::parse_target("circle", "r=1.5 noise=0 embed_dim=8");
  CHECK(spec.dim() == 8);
  const Matrix x = datasets::sample_target(spec, 4000, 3);
  CHECK(x.cols() == 8);
  CHECK(datasets::manifold_residual(spec, x) < 1e-12);
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Matrix cov = centered.transpose() * centered / (x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  int tiny = 0;
  for (Eigen::Index i = 0; i < 8; ++i) tiny += es.eigenvalues()[i] < 1e-20 ? 1 : 0;
  CHECK(tiny == 6);
}

TEST_CASE("rotated embedding keeps distances and radius") {
  auto spec = datasets::parse_target("circle", "r=1 embed_dim=5 rotate=1 rotation_seed=4");
  const Matrix x = datasets::sample_target(spec, 500, 1);
  CHECK(datasets::manifold_residual(spec, x) < 1e-12);
  // A rotated plane is no longer axis-aligned.
  CHECK(x.rightCols(3).norm() > 1.0);
}

TEST_CASE("gaussian targets honor mean and sigma") {
  auto spec = datasets::parse_target("gaussian", "mean=3,0 sigma=2");
  CHECK(spec.dim() == 2);
  const Matrix x = datasets::sample_target(spec, 40000, 8);
  CHECK(x.col(0).mean() == doctest::Approx(3.0).epsilon(0.02));
  CHECK(std::abs(x.col(1).mean()) < 0.05);
  const double var = (x.col(0).array() - x.col(0).mean()).square().mean();
  CHECK(var == doctest::Approx(4.0).epsilon(0.03));
  CHECK(std::isnan(datasets::manifold_residual(spec, x)));
}

TEST_CASE("all planar samplers produce the requested shape deterministically") {
  for (const char* kind : {"gaussian_mixture", "two_moons", "checkerboard", "circle"}) {
    auto spec = datasets::parse_target(kind, "embed_dim=3");
    const Matrix a = datasets::sample_target(spec, 100, 2);
    CHECK(a.rows() == 100);
    CHECK(a.cols() == 3);
    CHECK(a.col(2).norm() == 0.0);
    CHECK(a == datasets::sample_target(spec, 100, 2));
    CHECK(a.allFinite());
  }
}

TEST_CASE("mixture components sit on the ring") {
  auto spec = datasets::parse_target("gaussian_mixture", "k=4 r=3 sigma=0.01");
  const Matrix x = datasets::sample_target(spec, 400, 1);
  CHECK((x.rowwise().norm().array() - 3.0).abs().maxCoeff() < 0.1);
}

TEST_CASE("target parsing errors") {
  CHECK_THROWS_AS(datasets::parse_target("spiral", ""), std::invalid_argument);
  CHECK_THROWS_AS(datasets::parse_target("circle", "radius"), std::invalid_argument);
  CHECK_THROWS_AS(datasets::parse_target("circle", "colour=3"), std::invalid_argument);
  CHECK_THROWS_AS(datasets::parse_target("circle", "embed_dim=1"), std::invalid_argument);
  CHECK_THROWS_AS(datasets::parse_target("gaussian", "sigma=-1 mean=0"), std::invalid_argument);
}

TEST_CASE("describe output parses back to the same target") {
  auto a = datasets::parse_target("circle", "r=2 noise=0.1 embed_dim=4 rotate=1 rotation_seed=9");
  auto b = datasets::parse_target("circle", datasets::describe(a));
  CHECK(datasets::sample_target(a, 10, 1) == datasets::sample_target(b, 10, 1));
}

TEST_CASE("IDX header and seeded MNIST subset") {
  const std::string path = write_idx(0x00000803, 12, 28, 28);
  std::ifstream in(path, std::ios::binary);
  const auto h = datasets::read_idx_header(in);
  CHECK(h.magic == 0x00000803u);
  CHECK(h.count == 12);
  CHECK(h.rows == 28);
  CHECK(h.cols == 28);
  const Matrix a = datasets::load_mnist(path, 5, 3);
  CHECK(a.rows() == 5);
  CHECK(a.cols() == 784);
  CHECK(a.minCoeff() >= 0.0);
  CHECK(a.maxCoeff() <= 1.0);
  CHECK(a == datasets::load_mnist(path, 5, 3));
  CHECK_THROWS_AS(datasets::load_mnist(path, 13, 3), std::invalid_argument);
}

TEST_CASE("IDX errors: bad magic, truncated data, missing file") {
  CHECK_THROWS_WITH(datasets::load_mnist(write_idx(0x00000801, 2, 2, 2), 1, 0),
                    doctest::Contains("magic"));
  CHECK_THROWS_WITH(datasets::load_mnist(write_idx(0x00000803, 3, 4, 4, true), 1, 0),
                    doctest::Contains("truncated"));
  CHECK_THROWS_AS(datasets::load_mnist("/nonexistent/mnist.idx", 1, 0), std::runtime_error);
}
