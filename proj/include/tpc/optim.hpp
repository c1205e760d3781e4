#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "tpc/config.hpp"
#include "tpc/errors.hpp"
#include "tpc/tensor.hpp"

namespace tpc {

/// Linear warmup, then cosine decay from the base rate to base * min_ratio at
/// the last step.
struct CosineSchedule {
  double base_lr = 1e-4;
  double min_ratio = 1e-5;
  std::int64_t total_steps = 1;
  std::int64_t warmup_steps = 0;

  static CosineSchedule from(const OptimConfig& cfg, std::int64_t total_steps) {
    if (total_steps < 1) throw ContractError("schedule: total steps must be positive");
    CosineSchedule s;
    s.base_lr = cfg.lr;
    s.min_ratio = cfg.min_lr_ratio;
    s.total_steps = total_steps;
    s.warmup_steps = static_cast<std::int64_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total_steps)));
    if (s.warmup_steps >= total_steps) s.warmup_steps = total_steps - 1;
    return s;
  }

  double lr(std::int64_t step) const {
    if (step < warmup_steps) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const std::int64_t span = total_steps - 1 - warmup_steps;
    const double progress = span > 0 ? std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span)) : 1.0;
    const double floor = base_lr * min_ratio;
    return floor + (base_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Tensor<Scalar>> params, const OptimConfig& cfg, CosineSchedule schedule)
      : params_(std::move(params)), cfg_(cfg), schedule_(schedule) {
    for (const auto& p : params_) {
      m_.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    }
  }

  double current_lr() const { return schedule_.lr(step_); }
  std::int64_t step_count() const { return step_; }

  /// Applies one update from the accumulated gradients and ticks the schedule.
  /// Parameters without a gradient are left untouched.
  void step() {
    const double lr = current_lr();
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const auto b1 = static_cast<Scalar>(cfg_.beta1);
    const auto b2 = static_cast<Scalar>(cfg_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      const Matrix<Scalar>& g = p.grad();
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      auto m_hat = m_[i].array() / static_cast<Scalar>(c1);
      auto v_hat = v_[i].array() / static_cast<Scalar>(c2);
      p.mutable_value().array() -= static_cast<Scalar>(lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(cfg_.eps));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const std::vector<Matrix<Scalar>>& first_moments() const { return m_; }
  const std::vector<Matrix<Scalar>>& second_moments() const { return v_; }

  /// Restores the moment buffers and step count, e.g. from a checkpoint.
  void restore(std::vector<Matrix<Scalar>> m, std::vector<Matrix<Scalar>> v, std::int64_t step) {
    if (m.size() != params_.size() || v.size() != params_.size()) throw DimensionError("adam: moment count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (m[i].rows() != params_[i].rows() || m[i].cols() != params_[i].cols() || v[i].rows() != params_[i].rows() ||
          v[i].cols() != params_[i].cols()) {
        throw DimensionError("adam: moment shape mismatch");
      }
    }
    m_ = std::move(m);
    v_ = std::move(v);
    step_ = step;
  }

 private:
  std::vector<Tensor<Scalar>> params_;
  OptimConfig cfg_;
  CosineSchedule schedule_;
  std::vector<Matrix<Scalar>> m_;
  std::vector<Matrix<Scalar>> v_;
  std::int64_t step_ = 0;
};

}  // namespace tpc
