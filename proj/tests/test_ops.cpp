#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

using namespace tpc;
using test::gradcheck;
using test::project;
using test::random_param;

namespace {
constexpr double kTol = 1e-4;
}

TEST_CASE("gradient: matmul, linear, transpose") {
  std::mt19937_64 rng(1);
  auto a = random_param(3, 4, rng);
  auto b = random_param(4, 2, rng);
  auto bias = random_param(1, 2, rng);
  CHECK(gradcheck({a, b}, [&] { return project(matmul(a, b)); }) < kTol);
  CHECK(gradcheck({a, b, bias}, [&] { return project(linear(a, b, bias)); }) < kTol);
  CHECK(gradcheck({a}, [&] { return project(transpose(a)); }) < kTol);
}

TEST_CASE("gradient: elementwise arithmetic") {
  std::mt19937_64 rng(2);
  auto a = random_param(3, 3, rng);
  auto b = random_param(3, 3, rng);
  CHECK(gradcheck({a, b}, [&] { return project(add(a, b)); }) < kTol);
  CHECK(gradcheck({a, b}, [&] { return project(sub(a, b)); }) < kTol);
  CHECK(gradcheck({a, b}, [&] { return project(mul(a, b)); }) < kTol);
  CHECK(gradcheck({a}, [&] { return project(affine(a, 1.7, -0.3)); }) < kTol);
  CHECK(gradcheck({a}, [&] { return project(scale(a, -2.5)); }) < kTol);
}

TEST_CASE("gradient: scalar_affine reaches both scalars") {
  std::mt19937_64 rng(3);
  auto x = random_param(5, 1, rng);
  auto g = random_param(1, 1, rng);
  auto b = random_param(1, 1, rng);
  CHECK(gradcheck({x, g, b}, [&] { return project(scalar_affine(x, g, b)); }) < kTol);
}

TEST_CASE("gradient: mul_rows") {
  std::mt19937_64 rng(4);
  auto x = random_param(4, 3, rng);
  auto c = random_param(4, 1, rng);
  CHECK(gradcheck({x, c}, [&] { return project(mul_rows(x, c)); }) < kTol);
}

TEST_CASE("gradient: activations") {
  std::mt19937_64 rng(5);
  auto x = random_param(3, 4, rng, 2.0);
  CHECK(gradcheck({x}, [&] { return project(sigmoid(x)); }) < kTol);
  CHECK(gradcheck({x}, [&] { return project(gelu(x)); }) < kTol);
  CHECK(gradcheck({x}, [&] { return project(softmax(x, Axis::cols)); }) < kTol);
  CHECK(gradcheck({x}, [&] { return project(softmax(x, Axis::rows)); }) < kTol);
}

TEST_CASE("gradient: layernorm") {
  std::mt19937_64 rng(6);
  auto x = random_param(3, 6, rng);
  auto g = random_param(1, 6, rng);
  auto b = random_param(1, 6, rng);
  CHECK(gradcheck({x, g, b}, [&] { return project(layernorm(x, g, b)); }) < kTol);
}

TEST_CASE("gradient: log, sum, mean, normalize_sum") {
  std::mt19937_64 rng(7);
  Matrix<double> pos = test::random_matrix(2, 5, rng).cwiseAbs().array() + 0.2;
  Tensor<double> x(pos, true);
  CHECK(gradcheck({x}, [&] { return project(log(x, 1e-12)); }) < kTol);
  CHECK(gradcheck({x}, [&] { return sum(x); }) < kTol);
  CHECK(gradcheck({x}, [&] { return mean(mul(x, x)); }) < kTol);
  CHECK(gradcheck({x}, [&] { return project(normalize_sum(x)); }) < kTol);
}

TEST_CASE("gradient: gather, scatter, concat, slice") {
  std::mt19937_64 rng(8);
  auto x = random_param(5, 3, rng);
  auto src = random_param(2, 3, rng);
  const std::vector<Index> idx{4, 1, 1};
  const std::vector<Index> dst{0, 3};
  CHECK(gradcheck({x}, [&] { return project(gather_rows(x, std::span<const Index>(idx))); }) < kTol);
  CHECK(gradcheck({x, src}, [&] { return project(scatter_rows(x, src, std::span<const Index>(dst))); }) < kTol);
  CHECK(gradcheck({x, src}, [&] { return project(concat_rows<double>({x, src, x})); }) < kTol);
  CHECK(gradcheck({x}, [&] { return project(slice_cols(x, 1, 2)); }) < kTol);
}

TEST_CASE("gradient: cross_entropy") {
  std::mt19937_64 rng(9);
  auto z = random_param(3, 4, rng);
  const std::vector<int> labels{0, 3, 2};
  CHECK(gradcheck({z}, [&] { return cross_entropy(z, std::span<const int>(labels)); }) < kTol);
}

TEST_CASE("sigmoid saturates without overflow") {
  Matrix<double> m(1, 2);
  m << -800.0, 800.0;
  Tensor<double> s = sigmoid(Tensor<double>(m));
  CHECK(s(0, 0) == doctest::Approx(0.0));
  CHECK(s(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("scatter to an out-of-range row is rejected") {
  Tensor<double> base = Tensor<double>::zeros(3, 1);
  Tensor<double> src(Matrix<double>::Ones(1, 1));
  const std::vector<Index> bad{5};
  CHECK_THROWS_AS(scatter_rows(base, src, std::span<const Index>(bad)), ContractError);
}

TEST_CASE("cross_entropy of uniform logits is ln C") {
  Tensor<double> z = Tensor<double>::zeros(1, 7);
  const int label = 3;
  CHECK(cross_entropy(z, std::span<const int>(&label, 1)).item() == doctest::Approx(std::log(7.0)));
  const int bad = 7;
  CHECK_THROWS_AS(cross_entropy(z, std::span<const int>(&bad, 1)), ContractError);
}

TEST_CASE("layernorm output has zero mean and unit variance per row") {
  std::mt19937_64 rng(10);
  Tensor<double> x(test::random_matrix(4, 16, rng, 3.0));
  Tensor<double> y = layernorm(x, Tensor<double>(Matrix<double>::Ones(1, 16)), Tensor<double>::zeros(1, 16));
  for (Index r = 0; r < 4; ++r) {
    const auto row = y.value().row(r);
    CHECK(row.mean() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK((row.array() - row.mean()).square().mean() == doctest::Approx(1.0).epsilon(1e-4));
  }
}
