#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <span>
#include <vector>

#include "tpc/checkpoint.hpp"
#include "tpc/data.hpp"
#include "tpc/flops.hpp"
#include "tpc/losses.hpp"
#include "tpc/optim.hpp"
#include "tpc/vit.hpp"

namespace tpc {

/// Raised when a training loss is not finite. Carries the break records of the
/// offending image.
class NonFiniteLoss : public NumericError {
 public:
  NonFiniteLoss(const std::string& what, std::vector<BreakRecord> records)
      : NumericError(what), records_(std::move(records)) {}
  const std::vector<BreakRecord>& records() const { return records_; }

 private:
  std::vector<BreakRecord> records_;
};

void write_break_records(std::ostream& os, std::span<const BreakRecord> records);

struct StepSummary {
  std::int64_t step = 0;
  LossBreakdown loss;  // batch means
  double mean_depth = 0;
  double active_tokens_mean = 0;
  double lr = 0;
};

inline constexpr const char* kMetricsHeader = "step,task,ponder,distribution,final,mean_depth,active_tokens_mean,lr";
std::string format_metrics_row(const StepSummary& s);

struct EvalMetrics {
  std::size_t count = 0;
  double top1 = 0;  // percent
  double top5 = 0;
  double mean_depth = 0;
  std::vector<double> active_per_layer;
  std::vector<std::uint64_t> halting_histogram;  // tokens halting at layers 1..L
  double flops = 0;  // analytic, mean per image
};

/// Tokens each block actually computes on, given the rows entering it.
inline std::vector<int> computed_tokens(const ModelConfig& cfg, const std::vector<int>& rows) {
  if (cfg.variant == BlockVariant::tpc && cfg.tpc.mask_mode == MaskMode::zero) {
    return std::vector<int>(rows.size(), cfg.token_count());
  }
  return rows;
}

template <typename Scalar>
class Trainer {
 public:
  explicit Trainer(RunConfig cfg, std::int64_t steps_per_epoch = 1)
      : cfg_(std::move(cfg)),
        params_(init_params<Scalar>(cfg_.model, cfg_.train.seed)),
        schedule_(CosineSchedule::from(cfg_.optim, std::max<std::int64_t>(1, steps_per_epoch * cfg_.train.epochs))),
        optim_(params_.trainable(), cfg_.optim, schedule_),
        rng_(cfg_.train.seed ^ 0xD1B54A32D192ED03ull),
        target_depth_(cfg_.model.resolved_target_depth()) {
    cfg_.model.validate();
  }

  const RunConfig& config() const { return cfg_; }
  const VitParams<Scalar>& params() const { return params_; }
  VitParams<Scalar>& params() { return params_; }
  std::int64_t step() const { return step_; }
  std::uint64_t epoch() const { return epoch_; }
  double target_depth() const { return target_depth_; }
  const CosineSchedule& schedule() const { return schedule_; }

  ForwardResult<Scalar> forward_image(const Matrix<double>& image, const ForwardOptions& opt = {}) const {
    return forward(params_, cfg_.model, Matrix<Scalar>(image.cast<Scalar>()), opt);
  }

  /// Forward, backward and one optimizer update on the given dataset rows.
  /// The first image's controller events go to `sink`.
  StepSummary train_step(const Dataset& data, std::span<const std::size_t> batch, TraceSink* sink = nullptr) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));
    StepSummary s;
    s.step = step_;
    s.lr = optim_.current_lr();
    double depth_sum = 0;
    double active_sum = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t idx = batch[i];
      GradTape<Scalar> tape;
      ForwardOptions opt;
      opt.sink = i == 0 ? sink : nullptr;
      opt.step = step_;
      opt.collect_records = true;
      ForwardResult<Scalar> fwd;
      LossTerms<Scalar> terms;
      try {
        fwd = forward_image(data.images[idx], opt);
        terms = compute_losses(fwd, data.labels[idx], cfg_.model, target_depth_);
      } catch (const NonFiniteLoss&) {
        throw;
      } catch (const NumericError& e) {
        throw NonFiniteLoss("step " + std::to_string(step_) + " (dataset row " + std::to_string(idx) + "): " + e.what(),
                            fwd.records);
      }
      if (!std::isfinite(terms.values.final_loss)) {
        throw NonFiniteLoss("non-finite loss at step " + std::to_string(step_) + " (dataset row " +
                                std::to_string(idx) + ")",
                            fwd.records);
      }
      tape.backward(scale(terms.total, inv));
      s.loss.task += terms.values.task;
      s.loss.ponder += terms.values.ponder;
      s.loss.distribution += terms.values.distribution;
      s.loss.final_loss += terms.values.final_loss;
      depth_sum += fwd.mean_depth;
      const auto& act = fwd.active_per_layer;
      if (!act.empty()) active_sum += std::accumulate(act.begin(), act.end(), 0.0) / static_cast<double>(act.size());
    }
    const double n = static_cast<double>(batch.size());
    s.loss.task /= n;
    s.loss.ponder /= n;
    s.loss.distribution /= n;
    s.loss.final_loss /= n;
    s.loss.phi_p = cfg_.model.tpc.phi_p;
    s.loss.phi_d = cfg_.model.tpc.phi_d;
    s.mean_depth = depth_sum / n;
    s.active_tokens_mean = active_sum / n;
    optim_.step();
    params_.zero_grad();
    if (cfg_.model.tpc.target_mode == TargetDepthMode::dynamic) target_depth_ = s.mean_depth;
    ++step_;
    return s;
  }

  /// Runs the remaining epochs. `on_step` sees every step, `on_epoch` each
  /// finished epoch (1-based count).
  void train(const Dataset& data, const std::function<void(const StepSummary&)>& on_step = {},
             const std::function<void(std::uint64_t)>& on_epoch = {}, TraceSink* sink = nullptr) {
    if (data.empty()) throw ContractError("train: empty dataset");
    const std::size_t bs = static_cast<std::size_t>(std::max(1, cfg_.train.batch_size));
    while (epoch_ < static_cast<std::uint64_t>(cfg_.train.epochs)) {
      std::vector<std::size_t> order(data.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng_);
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t len = std::min(bs, order.size() - start);
        StepSummary s = train_step(data, std::span<const std::size_t>(order.data() + start, len), sink);
        if (on_step) on_step(s);
      }
      ++epoch_;
      if (on_epoch) on_epoch(epoch_);
    }
  }

  EvalMetrics evaluate(const Dataset& data) const {
    if (data.empty()) throw ContractError("evaluate: empty dataset");
    EvalMetrics m;
    m.count = data.size();
    m.active_per_layer.assign(static_cast<std::size_t>(cfg_.model.depth), 0.0);
    m.halting_histogram.assign(static_cast<std::size_t>(cfg_.model.depth), 0);
    std::size_t hit1 = 0;
    std::size_t hit5 = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      ForwardResult<Scalar> fwd = forward_image(data.images[i]);
      const auto& z = fwd.logits.value();
      const int label = data.labels[i];
      int above = 0;
      for (Index c = 0; c < z.cols(); ++c) {
        if (c != label && (z(0, c) > z(0, label) || (z(0, c) == z(0, label) && c < label))) ++above;
      }
      hit1 += above == 0;
      hit5 += above < 5;
      m.mean_depth += fwd.mean_depth;
      for (int h : fwd.halting_layers) {
        if (h >= 1) ++m.halting_histogram[static_cast<std::size_t>(h - 1)];
      }
      for (std::size_t l = 0; l < fwd.active_per_layer.size(); ++l) m.active_per_layer[l] += fwd.active_per_layer[l];
      m.flops += count_flops(cfg_.model, computed_tokens(cfg_.model, fwd.active_per_layer)).total;
    }
    const double n = static_cast<double>(data.size());
    m.top1 = 100.0 * static_cast<double>(hit1) / n;
    m.top5 = 100.0 * static_cast<double>(hit5) / n;
    m.mean_depth /= n;
    for (double& a : m.active_per_layer) a /= n;
    m.flops /= n;
    return m;
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.config_json = cfg_.to_json().dump();
    c.step = static_cast<std::uint64_t>(step_);
    c.epoch = epoch_;
    std::ostringstream rs;
    rs << rng_;
    c.rng_state = rs.str();
    for (const auto& [name, t] : params_.named()) c.tensors.emplace_back(name, to_record(t.value()));
    c.tensors.emplace_back("state.target_depth", to_record(Matrix<double>(Matrix<double>::Constant(1, 1, target_depth_))));
    c.optim_step = optim_.step_count();
    for (const auto& m : optim_.first_moments()) c.first_moments.push_back(to_record(m));
    for (const auto& v : optim_.second_moments()) c.second_moments.push_back(to_record(v));
    return c;
  }

  /// Restores parameters, optimizer, RNG and counters. The checkpoint must
  /// come from a run with the same model geometry.
  void restore(const Checkpoint& c) {
    for (auto& [name, t] : params_.named()) {
      Matrix<Scalar> v = to_matrix<Scalar>(c.tensor(name));
      if (v.rows() != t.rows() || v.cols() != t.cols()) throw FormatError("checkpoint tensor '" + name + "' has wrong shape");
      const_cast<Tensor<Scalar>&>(t).mutable_value() = std::move(v);
    }
    target_depth_ = to_matrix<double>(c.tensor("state.target_depth"))(0, 0);
    std::vector<Matrix<Scalar>> m;
    std::vector<Matrix<Scalar>> v;
    for (const auto& r : c.first_moments) m.push_back(to_matrix<Scalar>(r));
    for (const auto& r : c.second_moments) v.push_back(to_matrix<Scalar>(r));
    optim_.restore(std::move(m), std::move(v), c.optim_step);
    std::istringstream rs(c.rng_state);
    rs >> rng_;
    if (!rs) throw FormatError("checkpoint RNG state unreadable");
    step_ = static_cast<std::int64_t>(c.step);
    epoch_ = c.epoch;
  }

 private:
  RunConfig cfg_;
  VitParams<Scalar> params_;
  CosineSchedule schedule_;
  Adam<Scalar> optim_;
  std::mt19937_64 rng_;
  double target_depth_;
  std::int64_t step_ = 0;
  std::uint64_t epoch_ = 0;
};

/// Steps per epoch for a dataset of `n` rows.
inline std::int64_t steps_per_epoch(std::size_t n, int batch_size) {
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  return static_cast<std::int64_t>((n + bs - 1) / bs);
}

}  // namespace tpc
