#pragma once

#include <functional>
#include <random>
#include <vector>

#include "tpc/ops.hpp"

namespace tpc::test {

inline Matrix<double> random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

inline Tensor<double> random_param(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  return Tensor<double>(random_matrix(rows, cols, rng, scale), true);
}

/// Norm-wise relative error between the tape gradient and central
/// differences, worst over `params`. `loss` must rebuild the graph from the
/// current parameter values and return a 1x1 tensor.
inline double gradcheck(const std::vector<Tensor<double>>& params, const std::function<Tensor<double>()>& loss,
                        double h = 1e-6) {
  for (auto p : params) p.zero_grad();
  {
    GradTape<double> tape;
    tape.backward(loss());
  }
  double worst = 0;
  for (auto p : params) {
    Matrix<double> analytic = p.has_grad() ? p.grad() : Matrix<double>::Zero(p.rows(), p.cols());
    Matrix<double> numeric(p.rows(), p.cols());
    for (Index i = 0; i < p.size(); ++i) {
      double& x = p.mutable_value().data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss().item();
      x = saved - h;
      const double down = loss().item();
      x = saved;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-10});
    worst = std::max(worst, (analytic - numeric).norm() / scale);
  }
  return worst;
}

/// sum(out * R) for a fixed random R, making any tensor a scalar objective.
inline Tensor<double> project(const Tensor<double>& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(out, Tensor<double>(random_matrix(out.rows(), out.cols(), rng))));
}

}  // namespace tpc::test
