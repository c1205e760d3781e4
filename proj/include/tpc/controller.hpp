#pragma once

// Token propagation state machine.
//
// Each layer yields, per token, a pause probability p and a non-restart
// probability 1 - r. Their product is the break probability b. Tokens still
// accumulating break mass (the set S) get b mixed toward the mean over S,
// then the mixed value accumulates; a token halts at the first layer where
// the accumulation reaches 1 - delta, or unconditionally at the last layer.
// The layer weights (b before the halt, the remainder at the halt, 0 after)
// sum to one per token in the default cumulative-sum mode.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "tpc/config.hpp"
#include "tpc/trace.hpp"

namespace tpc {

using Mask = std::vector<std::uint8_t>;

struct HaltSettings {
  int depth = 12;
  double delta = 0.01;
  double zeta = 0.5;
  HaltMode mode = HaltMode::cumulative_sum;
  RegularizerScope scope = RegularizerScope::all;

  static HaltSettings from(const ModelConfig& config);
};

struct TokenHaltState {
  Eigen::VectorXd cumulation;   // running sum (product in cumulative-product mode)
  Eigen::VectorXd weight_mass;  // sum of weights handed out before the halt
  Eigen::VectorXd remainder;    // 1 until the token halts
  Mask mask;                    // 1 while the token has not halted
  Mask skip;                    // pause-restart mode: sits out the next layer
  std::vector<int> halting_layer;  // 0 = not halted yet
  std::vector<int> eta;            // layers the token accumulated in
  int layers_done = 0;

  TokenHaltState() = default;
  TokenHaltState(Eigen::Index tokens, HaltMode mode);

  Eigen::Index size() const { return static_cast<Eigen::Index>(mask.size()); }
  bool all_halted() const;
};

/// Per token, per layer probabilities as recorded by the controller.
struct BreakRecord {
  int layer = 0;
  Eigen::Index token = 0;
  double pause = 0;
  double restart = 0;
  double non_restart = 0;
  double b_raw = 0;
  double b_reg = 0;
  double weight = 0;
};

struct StepResult {
  Eigen::VectorXd weight;  // aggregation weight of every token at this layer
  Mask in_set;             // tokens that accumulated at this layer
  Mask halted_now;
};

/// p * (1 - r). Throws ContractError outside [0, 1].
double break_prob(double pause, double restart);

/// zeta * b + (1 - zeta) * mean(b). Throws ContractError on an empty input.
Eigen::VectorXd regularize(const Eigen::VectorXd& b, double zeta);

/// Tokens that accumulate break mass at the next layer.
Mask halting_set(const TokenHaltState& state);

/// Rows that enter the next block: the halting set plus CLS (token 0).
Mask block_rows(const TokenHaltState& state);

/// Advances one layer. `b_reg` has one entry per token (ignored outside the
/// halting set). `weight_b`, when given, supplies the pre-halt weights and the
/// remainder mass instead of `b_reg` (RegularizerScope::cumulation).
StepResult step(TokenHaltState& state, const Eigen::VectorXd& b_reg, int layer, const HaltSettings& settings,
                const Eigen::VectorXd* weight_b = nullptr);

/// One-shot scan: first layer whose running sum (product) reaches the
/// threshold, or the sequence length if none does.
int halting_layer(std::span<const double> b, double delta, HaltMode mode = HaltMode::cumulative_sum);

/// Weighted sum of per-layer CLS states.
Eigen::VectorXd aggregate_cls(const std::vector<Eigen::VectorXd>& cls_states, std::span<const double> weights);

struct LayerOutcome {
  StepResult step;
  Eigen::VectorXd b_raw;
  Eigen::VectorXd b_reg;
  std::vector<BreakRecord> records;
};

/// Gate readout to state update for one layer: break probabilities, the
/// regularizer over the halting set, step(), trace emission, and the
/// pause-restart skip bookkeeping. `pause` and `non_restart` have one entry per
/// token; entries outside the halting set are ignored.
LayerOutcome advance_layer(TokenHaltState& state, const Eigen::VectorXd& pause, const Eigen::VectorXd& non_restart,
                           int layer, const HaltSettings& settings, TraceSink* sink = nullptr,
                           std::int64_t step_index = 0);

}  // namespace tpc
