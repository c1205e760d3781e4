#pragma once

// Training objectives: task cross-entropy on the aggregated CLS state, the
// ponder cost, and the KL term pulling the per-layer weight distribution
// toward a discretized Gaussian centred on the target depth.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "tpc/controller.hpp"
#include "tpc/vit.hpp"

namespace tpc {

inline constexpr double kDefaultPhiP = 5e-4;
inline constexpr double kDefaultPhiD = 0.1;
inline constexpr double kTargetFloor = 1e-12;

struct LossBreakdown {
  double task = 0;
  double ponder = 0;
  double distribution = 0;
  double final_loss = 0;
  double phi_p = kDefaultPhiP;
  double phi_d = kDefaultPhiD;
};

struct LayerBreakDistribution {
  Eigen::VectorXd raw;
  Eigen::VectorXd normalized;
};

/// mean_k (M_k + R_k).
double ponder_loss(std::span<const int> halting_layers, std::span<const double> remainders);

/// Normal(target_depth, 1) density at layers 1..depth, normalized, then
/// floored at 1e-12.
Eigen::VectorXd gaussian_target(int depth, double target_depth);

/// KL(p || q) over layers; zero-mass entries of p contribute nothing.
double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

/// Per-layer mean of the records' aggregation weights over `tokens` tokens.
LayerBreakDistribution layer_distribution(std::span<const BreakRecord> records, int depth, Eigen::Index tokens);

/// KL(normalized D || target) for the given records.
double distribution_loss(std::span<const BreakRecord> records, double target_depth, int depth, Eigen::Index tokens);

LossBreakdown final_loss(double task, double ponder, double distribution, double phi_p = kDefaultPhiP,
                         double phi_d = kDefaultPhiD);

/// Differentiable KL(normalize(raw) || target) for a [1 x L] tensor.
template <typename Scalar>
Tensor<Scalar> kl_to_target(const Tensor<Scalar>& raw, const Eigen::VectorXd& target) {
  if (raw.size() != target.size()) throw DimensionError("kl_to_target: distribution length mismatch");
  Tensor<Scalar> q = normalize_sum(raw);
  Matrix<Scalar> log_t(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < target.size(); ++i) log_t.data()[i] = static_cast<Scalar>(std::log(target(i)));
  Tensor<Scalar> diff = sub(log(q, static_cast<Scalar>(kTargetFloor)), Tensor<Scalar>(std::move(log_t)));
  return sum(mul(q, diff));
}

template <typename Scalar>
Tensor<Scalar> task_loss(const Tensor<Scalar>& logits, int label) {
  return cross_entropy(logits, std::span<const int>(&label, 1));
}

template <typename Scalar>
struct LossTerms {
  Tensor<Scalar> task;
  Tensor<Scalar> ponder;
  Tensor<Scalar> distribution;
  Tensor<Scalar> total;
  LossBreakdown values;
};

/// Combines the per-image loss terms. Vanilla forwards contribute only the
/// task term.
template <typename Scalar>
LossTerms<Scalar> compute_losses(const ForwardResult<Scalar>& fwd, int label, const ModelConfig& cfg,
                                 double target_depth) {
  LossTerms<Scalar> t;
  t.task = task_loss(fwd.logits, label);
  const double phi_p = cfg.tpc.phi_p;
  const double phi_d = cfg.tpc.phi_d;
  if (!fwd.has_controller_terms()) {
    t.total = t.task;
    t.values = final_loss(static_cast<double>(t.task.item()), 0.0, 0.0, phi_p, phi_d);
    return t;
  }
  t.ponder = fwd.ponder;
  t.distribution = kl_to_target(fwd.distribution, gaussian_target(cfg.depth, target_depth));
  t.total = add(add(t.task, scale(t.ponder, static_cast<Scalar>(phi_p))),
                scale(t.distribution, static_cast<Scalar>(phi_d)));
  t.values = final_loss(static_cast<double>(t.task.item()), static_cast<double>(t.ponder.item()),
                        static_cast<double>(t.distribution.item()), phi_p, phi_d);
  return t;
}

}  // namespace tpc
