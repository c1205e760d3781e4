#include "doctest.h"
#include "helpers.hpp"

using namespace tpc;

TEST_CASE("ops outside a tape record nothing") {
  Tensor<double> a(Matrix<double>::Ones(2, 2), true);
  Tensor<double> b = mul(a, a);
  CHECK_FALSE(b.requires_grad());
  CHECK(b.is_leaf());
}

TEST_CASE("matmul forward value") {
  Matrix<double> a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  Matrix<double> b(3, 2);
  b << 7, 8, 9, 10, 11, 12;
  Tensor<double> c = matmul(Tensor<double>(a), Tensor<double>(b));
  CHECK(c(0, 0) == 58);
  CHECK(c(0, 1) == 64);
  CHECK(c(1, 0) == 139);
  CHECK(c(1, 1) == 154);
}

TEST_CASE("mismatched matmul raises DimensionError") {
  Tensor<double> a = Tensor<double>::zeros(2, 3);
  Tensor<double> b = Tensor<double>::zeros(2, 3);
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("backward twice without reset is a contract error") {
  Tensor<double> x(Matrix<double>::Constant(1, 1, 3.0), true);
  GradTape<double> tape;
  Tensor<double> y = mul(x, x);
  tape.backward(y);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
  CHECK_THROWS_AS(tape.backward(y), ContractError);
  tape.reset();
  x.zero_grad();
  Tensor<double> z = mul(x, x);
  tape.backward(z);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("non-scalar loss is rejected") {
  Tensor<double> x(Matrix<double>::Ones(2, 2), true);
  GradTape<double> tape;
  Tensor<double> y = scale(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("leaf gradients accumulate across tapes until zero_grad") {
  Tensor<double> x(Matrix<double>::Constant(1, 1, 2.0), true);
  for (int i = 0; i < 2; ++i) {
    GradTape<double> tape;
    tape.backward(scale(x, 3.0));
  }
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("tapes nest and restore the outer tape") {
  GradTape<double> outer;
  CHECK(GradTape<double>::active() == &outer);
  {
    GradTape<double> inner;
    CHECK(GradTape<double>::active() == &inner);
  }
  CHECK(GradTape<double>::active() == &outer);
}

TEST_CASE("float and double tapes are independent") {
  GradTape<float> tf;
  CHECK(GradTape<double>::active() == nullptr);
  CHECK(GradTape<float>::active() == &tf);
}

TEST_CASE("flop counter tallies multiply-accumulates") {
  flop_counter().reset();
  Tensor<double> a = Tensor<double>::zeros(2, 3);
  Tensor<double> b = Tensor<double>::zeros(3, 4);
  matmul(a, b);
  CHECK(flop_counter().matmul == 24);
}

TEST_CASE("debug checks flag non-finite output from finite input") {
  const bool prev = debug_checks();
  set_debug_checks(true);
  Tensor<double> x(Matrix<double>::Constant(1, 2, -1.0));
  CHECK_THROWS_AS(log(x), NumericError);
  set_debug_checks(prev);
}

TEST_CASE("detach cuts the graph") {
  Tensor<double> x(Matrix<double>::Constant(1, 1, 2.0), true);
  GradTape<double> tape;
  Tensor<double> y = add(mul(x, x.detach()), x);
  tape.backward(y);
  CHECK(x.grad()(0, 0) == doctest::Approx(3.0));
}
