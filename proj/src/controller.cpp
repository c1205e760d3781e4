#include "tpc/controller.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tpc/errors.hpp"

namespace tpc {
namespace {

void require_probability(const char* what, double v) {
  if (std::isnan(v)) throw NumericError(std::string(what) + " is NaN");
  if (!(v >= 0.0 && v <= 1.0)) throw ContractError(std::string(what) + " " + std::to_string(v) + " outside [0, 1]");
}

// p * (1 - r) with 1 - r supplied directly, matching the gate readout bit for bit.
double gate_break(double pause, double non_restart) {
  require_probability("pause probability", pause);
  require_probability("non-restart probability", non_restart);
  return pause * non_restart;
}

}  // namespace

HaltSettings HaltSettings::from(const ModelConfig& config) {
  HaltSettings s;
  s.depth = config.depth;
  s.delta = config.tpc.delta;
  s.zeta = config.tpc.zeta;
  s.mode = config.tpc.halt_mode;
  s.scope = config.tpc.regularizer;
  return s;
}

TokenHaltState::TokenHaltState(Eigen::Index tokens, HaltMode mode)
    : cumulation(Eigen::VectorXd::Constant(tokens, mode == HaltMode::cumulative_product ? 1.0 : 0.0)),
      weight_mass(Eigen::VectorXd::Zero(tokens)),
      remainder(Eigen::VectorXd::Ones(tokens)),
      mask(static_cast<std::size_t>(tokens), 1),
      skip(static_cast<std::size_t>(tokens), 0),
      halting_layer(static_cast<std::size_t>(tokens), 0),
      eta(static_cast<std::size_t>(tokens), 0) {}

bool TokenHaltState::all_halted() const {
  return std::all_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m == 0; });
}

double break_prob(double pause, double restart) {
  require_probability("pause probability", pause);
  require_probability("restart probability", restart);
  return pause * (1.0 - restart);
}

Eigen::VectorXd regularize(const Eigen::VectorXd& b, double zeta) {
  if (b.size() == 0) throw ContractError("regularize: empty active set");
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw ContractError("regularize: zeta outside [0, 1]");
  for (double v : b) require_probability("break probability", v);
  const double mean = b.mean();
  Eigen::VectorXd out = (zeta * b.array() + (1.0 - zeta) * mean).matrix();
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

Mask halting_set(const TokenHaltState& state) {
  Mask s(state.mask.size());
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = state.mask[k] && !state.skip[k];
  return s;
}

Mask block_rows(const TokenHaltState& state) {
  Mask rows = halting_set(state);
  if (!rows.empty()) rows[0] = 1;
  return rows;
}

StepResult step(TokenHaltState& state, const Eigen::VectorXd& b_reg, int layer, const HaltSettings& settings,
                const Eigen::VectorXd* weight_b) {
  const auto n = state.size();
  if (b_reg.size() != n) throw DimensionError("step: one break probability per token required");
  if (weight_b != nullptr && weight_b->size() != n) throw DimensionError("step: weight source size mismatch");
  if (layer != state.layers_done + 1 || layer < 1 || layer > settings.depth) {
    throw ContractError("step: layer " + std::to_string(layer) + " out of sequence");
  }
  const bool forced = layer == settings.depth;
  const bool product = settings.mode == HaltMode::cumulative_product;
  const double threshold = 1.0 - settings.delta;

  StepResult res;
  res.weight = Eigen::VectorXd::Zero(n);
  res.in_set.assign(static_cast<std::size_t>(n), 0);
  res.halted_now.assign(static_cast<std::size_t>(n), 0);

  for (Eigen::Index k = 0; k < n; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (!state.mask[ku] || (state.skip[ku] && !forced)) continue;
    const double b = forced ? 1.0 : b_reg(k);
    if (!forced) require_probability("break probability", b);
    const double wb = forced ? 1.0 : (weight_b != nullptr ? (*weight_b)(k) : b);
    const double prev = state.cumulation(k);
    const double cum = product ? prev * b : prev + b;
    state.cumulation(k) = cum;
    state.eta[ku] += 1;
    res.in_set[ku] = 1;

    const bool halt = forced || (product ? cum > threshold : cum >= threshold);
    if (halt) {
      double r = product ? 1.0 - prev : 1.0 - state.weight_mass(k);
      if (settings.scope == RegularizerScope::cumulation) r = std::clamp(r, 0.0, 1.0);
      state.remainder(k) = r;
      state.halting_layer[ku] = layer;
      state.mask[ku] = 0;
      res.weight(k) = r;
      res.halted_now[ku] = 1;
    } else {
      res.weight(k) = wb;
      state.weight_mass(k) += wb;
    }
  }
  state.layers_done = layer;
  return res;
}

int halting_layer(std::span<const double> b, double delta, HaltMode mode) {
  if (b.empty()) throw ContractError("halting_layer: empty sequence");
  const bool product = mode == HaltMode::cumulative_product;
  const double threshold = 1.0 - delta;
  double acc = product ? 1.0 : 0.0;
  for (std::size_t l = 0; l < b.size(); ++l) {
    require_probability("break probability", b[l]);
    acc = product ? acc * b[l] : acc + b[l];
    if (product ? acc > threshold : acc >= threshold) return static_cast<int>(l + 1);
  }
  return static_cast<int>(b.size());
}

Eigen::VectorXd aggregate_cls(const std::vector<Eigen::VectorXd>& cls_states, std::span<const double> weights) {
  if (cls_states.empty() || cls_states.size() != weights.size()) {
    throw ContractError("aggregate_cls: one weight per CLS state required");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(cls_states.front().size());
  for (std::size_t l = 0; l < cls_states.size(); ++l) {
    if (cls_states[l].size() != out.size()) throw DimensionError("aggregate_cls: CLS widths differ");
    out += weights[l] * cls_states[l];
  }
  return out;
}

LayerOutcome advance_layer(TokenHaltState& state, const Eigen::VectorXd& pause, const Eigen::VectorXd& non_restart,
                           int layer, const HaltSettings& settings, TraceSink* sink, std::int64_t step_index) {
  const auto n = state.size();
  if (pause.size() != n || non_restart.size() != n) throw DimensionError("advance_layer: one gate value per token");
  const bool forced = layer == settings.depth;
  const Mask set = halting_set(state);
  Mask accum = set;
  if (forced) accum = state.mask;  // skipped tokens still halt at the end

  LayerOutcome out;
  out.b_raw = Eigen::VectorXd::Zero(n);
  out.b_reg = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Index> members;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (!accum[static_cast<std::size_t>(k)]) continue;
    members.push_back(k);
    out.b_raw(k) = forced ? 1.0 : gate_break(pause(k), non_restart(k));
  }
  if (!members.empty()) {
    Eigen::VectorXd sub(static_cast<Eigen::Index>(members.size()));
    for (std::size_t i = 0; i < members.size(); ++i) sub(static_cast<Eigen::Index>(i)) = out.b_raw(members[i]);
    const double zeta = settings.scope == RegularizerScope::off ? 1.0 : settings.zeta;
    const Eigen::VectorXd reg = forced ? sub : regularize(sub, zeta);
    for (std::size_t i = 0; i < members.size(); ++i) out.b_reg(members[i]) = reg(static_cast<Eigen::Index>(i));
  }

  const Mask mask_before = state.mask;
  const Eigen::VectorXd* weight_src = settings.scope == RegularizerScope::cumulation ? &out.b_raw : nullptr;
  out.step = step(state, out.b_reg, layer, settings, weight_src);

  if (settings.mode == HaltMode::pause_restart) {
    // skip-then-reuse: a confident pause without restart sits out exactly one layer
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const bool was_skipped = state.skip[ku] != 0;
      state.skip[ku] = 0;
      if (was_skipped || !state.mask[ku] || k == 0) continue;
      state.skip[ku] = (pause(k) >= 0.5 && (1.0 - non_restart(k)) < 0.5) ? 1 : 0;
    }
  }

  for (Eigen::Index k : members) {
    const auto ku = static_cast<std::size_t>(k);
    BreakRecord rec;
    rec.layer = layer;
    rec.token = k;
    rec.pause = pause(k);
    rec.non_restart = non_restart(k);
    rec.restart = 1.0 - non_restart(k);
    rec.b_raw = out.b_raw(k);
    rec.b_reg = out.b_reg(k);
    rec.weight = out.step.weight(k);
    out.records.push_back(rec);
    if (sink != nullptr) {
      TraceEvent e;
      e.step = step_index;
      e.layer = layer;
      e.token = k;
      e.pause = rec.pause;
      e.restart = rec.restart;
      e.b_raw = rec.b_raw;
      e.b_reg = rec.b_reg;
      e.cumulation = state.cumulation(k);
      e.mask_before = mask_before[ku] != 0;
      e.mask_after = state.mask[ku] != 0;
      e.halted = out.step.halted_now[ku] != 0;
      sink->on_event(e);
    }
  }
  return out;
}

}  // namespace tpc
