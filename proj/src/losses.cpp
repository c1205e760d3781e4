#include "tpc/losses.hpp"

#include <cmath>
#include <string>

#include "tpc/errors.hpp"

namespace tpc {

double ponder_loss(std::span<const int> halting_layers, std::span<const double> remainders) {
  if (halting_layers.empty()) throw ContractError("ponder_loss: empty token set");
  if (halting_layers.size() != remainders.size()) throw DimensionError("ponder_loss: one remainder per token");
  double total = 0;
  for (std::size_t k = 0; k < halting_layers.size(); ++k) {
    const double r = remainders[k];
    if (!(r >= 0.0 && r <= 1.0)) throw ContractError("ponder_loss: remainder " + std::to_string(r) + " outside [0, 1]");
    total += static_cast<double>(halting_layers[k]) + r;
  }
  return total / static_cast<double>(halting_layers.size());
}

Eigen::VectorXd gaussian_target(int depth, double target_depth) {
  if (depth < 1) throw ContractError("gaussian_target: depth must be >= 1");
  Eigen::VectorXd t(depth);
  for (int l = 1; l <= depth; ++l) {
    const double z = static_cast<double>(l) - target_depth;
    t(l - 1) = std::exp(-0.5 * z * z);
  }
  t /= t.sum();
  return t.cwiseMax(kTargetFloor);
}

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: length mismatch");
  double kl = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) kl += p(i) * (std::log(p(i)) - std::log(q(i)));
  }
  return kl;
}

LayerBreakDistribution layer_distribution(std::span<const BreakRecord> records, int depth, Eigen::Index tokens) {
  if (depth < 1) throw ContractError("layer_distribution: depth must be >= 1");
  if (tokens < 1) throw ContractError("layer_distribution: no tokens");
  LayerBreakDistribution d;
  d.raw = Eigen::VectorXd::Zero(depth);
  for (const auto& r : records) {
    if (r.layer < 1 || r.layer > depth) throw ContractError("layer_distribution: record layer out of range");
    d.raw(r.layer - 1) += r.weight;
  }
  d.raw /= static_cast<double>(tokens);
  const double total = d.raw.sum();
  d.normalized = total > 0 ? Eigen::VectorXd(d.raw / total) : Eigen::VectorXd::Constant(depth, 1.0 / depth);
  return d;
}

double distribution_loss(std::span<const BreakRecord> records, double target_depth, int depth, Eigen::Index tokens) {
  return kl_divergence(layer_distribution(records, depth, tokens).normalized, gaussian_target(depth, target_depth));
}

LossBreakdown final_loss(double task, double ponder, double distribution, double phi_p, double phi_d) {
  LossBreakdown b;
  b.task = task;
  b.ponder = ponder;
  b.distribution = distribution;
  b.phi_p = phi_p;
  b.phi_d = phi_d;
  b.final_loss = task + phi_p * ponder + phi_d * distribution;
  return b;
}

}  // namespace tpc
