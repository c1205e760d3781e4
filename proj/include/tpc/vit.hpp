#pragma once

// Vision-transformer building blocks: patch embedding, the pre-norm encoder
// block, its token-masked variant with gate readout, and the full forward
// pass that threads the halting controller through the stack.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tpc/config.hpp"
#include "tpc/controller.hpp"
#include "tpc/ops.hpp"
#include "tpc/stabilizer.hpp"

namespace tpc {

template <typename Scalar>
struct LinearParams {
  Tensor<Scalar> weight;  // [in x out]
  Tensor<Scalar> bias;    // [1 x out]
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return linear(x, weight, bias); }
};

template <typename Scalar>
struct NormParams {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return layernorm(x, gamma, beta); }
};

template <typename Scalar>
struct BlockParams {
  NormParams<Scalar> norm1;
  LinearParams<Scalar> qkv;
  LinearParams<Scalar> proj;
  NormParams<Scalar> norm2;
  LinearParams<Scalar> fc1;
  LinearParams<Scalar> fc2;
};

template <typename Scalar>
struct VitParams {
  LinearParams<Scalar> patch;
  Tensor<Scalar> cls;  // [1 x d]
  Tensor<Scalar> pos;  // [(K+1) x d]
  std::vector<BlockParams<Scalar>> blocks;
  NormParams<Scalar> norm;
  LinearParams<Scalar> head;
  Tensor<Scalar> gate_gamma;  // [1 x 1], trainable only with learnable gates
  Tensor<Scalar> gate_beta;

  /// Stable, checkpoint-facing names. Gate scalars are listed last.
  std::vector<std::pair<std::string, Tensor<Scalar>>> named() const {
    std::vector<std::pair<std::string, Tensor<Scalar>>> out;
    auto lin = [&](const std::string& p, const LinearParams<Scalar>& l) {
      out.emplace_back(p + ".weight", l.weight);
      out.emplace_back(p + ".bias", l.bias);
    };
    auto nrm = [&](const std::string& p, const NormParams<Scalar>& n) {
      out.emplace_back(p + ".gamma", n.gamma);
      out.emplace_back(p + ".beta", n.beta);
    };
    lin("patch", patch);
    out.emplace_back("cls", cls);
    out.emplace_back("pos", pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i);
      nrm(p + ".norm1", blocks[i].norm1);
      lin(p + ".qkv", blocks[i].qkv);
      lin(p + ".proj", blocks[i].proj);
      nrm(p + ".norm2", blocks[i].norm2);
      lin(p + ".fc1", blocks[i].fc1);
      lin(p + ".fc2", blocks[i].fc2);
    }
    nrm("norm", norm);
    lin("head", head);
    out.emplace_back("gate.gamma", gate_gamma);
    out.emplace_back("gate.beta", gate_beta);
    return out;
  }

  std::vector<Tensor<Scalar>> trainable() const {
    std::vector<Tensor<Scalar>> out;
    for (auto& [name, t] : named()) {
      if (t.requires_grad()) out.push_back(t);
    }
    return out;
  }

  void zero_grad() const {
    for (auto& [name, t] : named()) const_cast<Tensor<Scalar>&>(t).zero_grad();
  }
};

namespace detail {
template <typename Scalar>
Tensor<Scalar> trunc_normal(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    double v = dist(rng);
    while (std::abs(v) > 2.0 * stddev) v = dist(rng);
    m.data()[i] = static_cast<Scalar>(v);
  }
  return Tensor<Scalar>(std::move(m), true);
}

template <typename Scalar>
LinearParams<Scalar> init_linear(Index in, Index out, std::mt19937_64& rng) {
  return {trunc_normal<Scalar>(in, out, 0.02, rng), Tensor<Scalar>::zeros(1, out, true)};
}

template <typename Scalar>
NormParams<Scalar> init_norm(Index width) {
  return {Tensor<Scalar>(Matrix<Scalar>::Ones(1, width), true), Tensor<Scalar>::zeros(1, width, true)};
}
}  // namespace detail

/// Truncated-normal (std 0.02) projections and embeddings, zero biases, unit
/// norm scales. Deterministic in `seed`.
template <typename Scalar>
VitParams<Scalar> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate(true);
  std::mt19937_64 rng(seed);
  const Index d = cfg.embed_dim;
  VitParams<Scalar> p;
  p.patch = detail::init_linear<Scalar>(cfg.patch_dim(), d, rng);
  p.cls = detail::trunc_normal<Scalar>(1, d, 0.02, rng);
  p.pos = detail::trunc_normal<Scalar>(cfg.token_count(), d, 0.02, rng);
  for (int l = 0; l < cfg.depth; ++l) {
    BlockParams<Scalar> b;
    b.norm1 = detail::init_norm<Scalar>(d);
    b.qkv = detail::init_linear<Scalar>(d, 3 * d, rng);
    b.proj = detail::init_linear<Scalar>(d, d, rng);
    b.norm2 = detail::init_norm<Scalar>(d);
    b.fc1 = detail::init_linear<Scalar>(d, cfg.mlp_dim(), rng);
    b.fc2 = detail::init_linear<Scalar>(cfg.mlp_dim(), d, rng);
    p.blocks.push_back(std::move(b));
  }
  p.norm = detail::init_norm<Scalar>(d);
  p.head = detail::init_linear<Scalar>(d, cfg.num_classes, rng);
  p.gate_gamma = Tensor<Scalar>::scalar(static_cast<Scalar>(cfg.tpc.gamma), cfg.tpc.learnable_gates);
  p.gate_beta = Tensor<Scalar>::scalar(static_cast<Scalar>(cfg.tpc.beta), cfg.tpc.learnable_gates);
  return p;
}

/// Tokens of one image; row 0 is CLS.
template <typename Scalar>
struct TokenBatch {
  Tensor<Scalar> tokens;
  Index patch_count = 0;
};

/// [C x H*W] image to [K x C*p*p] patch rows, channel-major within a patch.
template <typename Scalar>
Matrix<Scalar> patchify(const Matrix<Scalar>& image, const ModelConfig& cfg) {
  const int side = cfg.image_size;
  const int p = cfg.patch_size;
  if (image.rows() != cfg.in_channels || image.cols() != static_cast<Index>(side) * side) {
    throw ConfigError("model.image_size", "image of shape [" + std::to_string(image.rows()) + "x" +
                                              std::to_string(image.cols()) + "] does not match the configuration");
  }
  if (side % p != 0) throw ConfigError("model.patch_size", "image side not divisible by patch size");
  const int grid = side / p;
  Matrix<Scalar> out(static_cast<Index>(grid) * grid, cfg.patch_dim());
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const Index row = static_cast<Index>(gy) * grid + gx;
      Index col = 0;
      for (int c = 0; c < cfg.in_channels; ++c) {
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx) {
            out(row, col++) = image(c, static_cast<Index>(gy * p + dy) * side + gx * p + dx);
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
TokenBatch<Scalar> patch_embed(const VitParams<Scalar>& params, const ModelConfig& cfg, const Matrix<Scalar>& image) {
  Tensor<Scalar> patches(patchify(image, cfg));
  Tensor<Scalar> embedded = params.patch(patches);
  Tensor<Scalar> tokens = add(concat_rows<Scalar>({params.cls, embedded}), params.pos);
  return {tokens, patches.rows()};
}

/// Pre-norm encoder block: x + MSA(LN(x)), then + MLP(LN(.)).
template <typename Scalar>
Tensor<Scalar> block_forward(const BlockParams<Scalar>& b, const ModelConfig& cfg, const Tensor<Scalar>& x,
                             const AttentionSpec& spec) {
  const Index d = cfg.embed_dim;
  Tensor<Scalar> qkv = b.qkv(b.norm1(x));
  Tensor<Scalar> attn = multi_head_attention(slice_cols(qkv, 0, d), slice_cols(qkv, d, d), slice_cols(qkv, 2 * d, d), spec);
  Tensor<Scalar> y = add(x, b.proj(attn));
  return add(y, b.fc2(gelu(b.fc1(b.norm2(y)))));
}

inline AttentionSpec dense_spec(const ModelConfig& cfg) {
  return {cfg.heads, 0, false, cfg.tpc.attn_scale};
}

inline AttentionSpec stabilizer_spec(const ModelConfig& cfg) {
  return {cfg.heads, cfg.tpc.kappa, cfg.tpc.stabilizer, cfg.tpc.attn_scale};
}

/// Fixed token count in and out.
template <typename Scalar>
Tensor<Scalar> vanilla_block(const BlockParams<Scalar>& b, const ModelConfig& cfg, const Tensor<Scalar>& tokens) {
  return block_forward(b, cfg, tokens, dense_spec(cfg));
}

template <typename Scalar>
struct TpcBlockOutput {
  Tensor<Scalar> tokens;          // all rows; rows outside `rows` untouched in drop mode
  std::vector<Index> rows;        // participating token indices, ascending
  Tensor<Scalar> pause;           // [|rows| x 1]
  Tensor<Scalar> non_restart;     // [|rows| x 1]
};

/// Runs the block on the rows selected by `mask` and reads the two gate
/// probabilities from the reserved embedding dimensions of the updated rows.
template <typename Scalar>
TpcBlockOutput<Scalar> tpc_block(const BlockParams<Scalar>& b, const VitParams<Scalar>& params, const ModelConfig& cfg,
                                 const Tensor<Scalar>& tokens, const Mask& mask) {
  if (static_cast<Index>(mask.size()) != tokens.rows()) throw DimensionError("tpc_block: mask length != token count");
  if (mask.empty() || !mask[0]) throw ContractError("tpc_block: CLS token must stay active");
  TpcBlockOutput<Scalar> out;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k]) out.rows.push_back(static_cast<Index>(k));
  }
  AttentionSpec spec = stabilizer_spec(cfg);
  Tensor<Scalar> updated;
  if (cfg.tpc.mask_mode == MaskMode::drop) {
    Tensor<Scalar> sub = gather_rows(tokens, std::span<const Index>(out.rows));
    updated = block_forward(b, cfg, sub, spec);
    out.tokens = scatter_rows(tokens, updated, std::span<const Index>(out.rows));
  } else {
    Matrix<Scalar> m(tokens.rows(), 1);
    for (std::size_t k = 0; k < mask.size(); ++k) m(static_cast<Index>(k), 0) = mask[k] ? Scalar(1) : Scalar(0);
    Tensor<Scalar> zeroed = mul_rows(tokens, Tensor<Scalar>(std::move(m)));
    out.tokens = block_forward(b, cfg, zeroed, spec);
    updated = gather_rows(out.tokens, std::span<const Index>(out.rows));
  }
  const auto [g0, g1] = cfg.tpc.gate_dims;
  out.pause = sigmoid(scalar_affine(slice_cols(updated, g0, 1), params.gate_gamma, params.gate_beta));
  out.non_restart = sigmoid(scalar_affine(slice_cols(updated, g1, 1), params.gate_gamma, params.gate_beta));
  return out;
}

struct ForwardOptions {
  TraceSink* sink = nullptr;
  std::int64_t step = 0;
  /// Per-token halting layers (index 0 ignored) overriding the controller;
  /// token k joins layers 1..forced_halting[k]. Used by benchmarks.
  const std::vector<int>* forced_halting = nullptr;
  bool collect_records = false;
};

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> logits;          // [1 x classes]
  Tensor<Scalar> aggregated_cls;  // [1 x d]
  Tensor<Scalar> ponder;          // [1 x 1], controller runs only
  Tensor<Scalar> distribution;    // [1 x L] per-layer mean aggregation weight
  std::vector<int> halting_layers;
  std::vector<double> remainders;
  std::vector<int> active_per_layer;  // rows entering each block
  std::vector<BreakRecord> records;
  double mean_depth = 0;

  bool has_controller_terms() const { return ponder.defined(); }
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> column_mask(const Mask& m) {
  Matrix<Scalar> v(static_cast<Index>(m.size()), 1);
  for (std::size_t k = 0; k < m.size(); ++k) v(static_cast<Index>(k), 0) = m[k] ? Scalar(1) : Scalar(0);
  return Tensor<Scalar>(std::move(v));
}

template <typename Scalar>
Tensor<Scalar> head_logits(const VitParams<Scalar>& params, const Tensor<Scalar>& cls) {
  return params.head(params.norm(cls));
}

template <typename Scalar>
ForwardResult<Scalar> forward_vanilla(const VitParams<Scalar>& params, const ModelConfig& cfg,
                                      TokenBatch<Scalar> embedded) {
  ForwardResult<Scalar> r;
  Tensor<Scalar> t = embedded.tokens;
  const int n = static_cast<int>(t.rows());
  for (const auto& b : params.blocks) {
    t = vanilla_block(b, cfg, t);
    r.active_per_layer.push_back(n);
  }
  const Index cls_row = 0;
  r.aggregated_cls = gather_rows(t, std::span<const Index>(&cls_row, 1));
  r.logits = head_logits(params, r.aggregated_cls);
  r.halting_layers.assign(static_cast<std::size_t>(n), cfg.depth);
  r.remainders.assign(static_cast<std::size_t>(n), 1.0);
  r.mean_depth = cfg.depth;
  return r;
}

}  // namespace detail

/// Full forward pass for one [C x H*W] image.
template <typename Scalar>
ForwardResult<Scalar> forward(const VitParams<Scalar>& params, const ModelConfig& cfg, const Matrix<Scalar>& image,
                              const ForwardOptions& options = {}) {
  TokenBatch<Scalar> embedded = patch_embed(params, cfg, image);
  if (cfg.variant == BlockVariant::vanilla || cfg.depth == 0) return detail::forward_vanilla(params, cfg, embedded);

  const Index n = embedded.tokens.rows();
  const int depth = cfg.depth;
  const HaltSettings settings = HaltSettings::from(cfg);
  const bool product = settings.mode == HaltMode::cumulative_product;
  const Scalar zeta = settings.scope == RegularizerScope::off ? Scalar(1) : static_cast<Scalar>(settings.zeta);
  const Index cls_row = 0;

  ForwardResult<Scalar> r;
  Tensor<Scalar> t = embedded.tokens;

  if (options.forced_halting != nullptr) {
    const auto& halt = *options.forced_halting;
    if (static_cast<Index>(halt.size()) != n) throw DimensionError("forced halting schedule needs one entry per token");
    for (int l = 1; l <= depth; ++l) {
      Mask rows(static_cast<std::size_t>(n));
      for (Index k = 0; k < n; ++k) rows[static_cast<std::size_t>(k)] = (k == 0 || halt[static_cast<std::size_t>(k)] >= l);
      auto out = tpc_block(params.blocks[static_cast<std::size_t>(l - 1)], params, cfg, t, rows);
      t = out.tokens;
      r.active_per_layer.push_back(static_cast<int>(out.rows.size()));
    }
    r.aggregated_cls = gather_rows(t, std::span<const Index>(&cls_row, 1));
    r.logits = detail::head_logits(params, r.aggregated_cls);
    double depth_sum = depth;
    r.halting_layers.assign(static_cast<std::size_t>(n), depth);
    for (Index k = 1; k < n; ++k) {
      r.halting_layers[static_cast<std::size_t>(k)] = std::clamp(halt[static_cast<std::size_t>(k)], 1, depth);
      depth_sum += r.halting_layers[static_cast<std::size_t>(k)];
    }
    r.remainders.assign(static_cast<std::size_t>(n), 0.0);
    r.mean_depth = depth_sum / static_cast<double>(n);
    return r;
  }

  TokenHaltState state(n, settings.mode);
  Tensor<Scalar> mass = Tensor<Scalar>::zeros(n, 1);
  Tensor<Scalar> prod = Tensor<Scalar>::constant(n, 1, Scalar(1));
  Tensor<Scalar> remainder_sum = Tensor<Scalar>::zeros(n, 1);
  std::vector<Tensor<Scalar>> cls_states;
  std::vector<Tensor<Scalar>> cls_weights;
  std::vector<Tensor<Scalar>> layer_means;

  for (int l = 1; l <= depth; ++l) {
    const bool forced = l == depth;
    auto out = tpc_block(params.blocks[static_cast<std::size_t>(l - 1)], params, cfg, t, block_rows(state));
    t = out.tokens;
    r.active_per_layer.push_back(static_cast<int>(out.rows.size()));

    Eigen::VectorXd pause = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd non_restart = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
      pause(out.rows[i]) = static_cast<double>(out.pause(static_cast<Index>(i), 0));
      non_restart(out.rows[i]) = static_cast<double>(out.non_restart(static_cast<Index>(i), 0));
    }
    auto outcome = advance_layer(state, pause, non_restart, l, settings, options.sink, options.step);

    // Differentiable mirror of the controller's weights. Decisions (which
    // tokens accumulate, which halt) come from the controller.
    std::vector<Index> members;    // token ids accumulating at this layer
    std::vector<Index> positions;  // their rows within out.rows
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
      if (outcome.step.in_set[static_cast<std::size_t>(out.rows[i])]) {
        members.push_back(out.rows[i]);
        positions.push_back(static_cast<Index>(i));
      }
    }
    Mask cont(static_cast<std::size_t>(n), 0);
    Mask halting = outcome.step.halted_now;
    for (Index k = 0; k < n; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      cont[ku] = outcome.step.in_set[ku] && !outcome.step.halted_now[ku];
      if (halting[ku] && outcome.step.weight(k) <= 0.0 && settings.scope == RegularizerScope::cumulation) {
        halting[ku] = 0;  // remainder clamped to zero
      }
    }

    Tensor<Scalar> b_full;  // break mass entering the weights, zero outside the set
    Tensor<Scalar> b_cum;   // break mass entering the running product
    if (!forced && !members.empty()) {
      std::span<const Index> pos(positions);
      Tensor<Scalar> b = mul(gather_rows(out.pause, pos), gather_rows(out.non_restart, pos));
      Tensor<Scalar> ones = Tensor<Scalar>::constant(b.rows(), 1, Scalar(1));
      Tensor<Scalar> reg = zeta == Scalar(1) ? b : add(scale(b, zeta), scale(matmul(ones, mean(b)), Scalar(1) - zeta));
      Tensor<Scalar> weight_src = settings.scope == RegularizerScope::cumulation ? b : reg;
      b_full = scatter_rows(Tensor<Scalar>::zeros(n, 1), weight_src, std::span<const Index>(members));
      if (product) b_cum = scatter_rows(Tensor<Scalar>::constant(n, 1, Scalar(1)), reg, std::span<const Index>(members));
    } else {
      Matrix<Scalar> v = Matrix<Scalar>::Zero(n, 1);
      for (Index k : members) v(k, 0) = Scalar(1);
      b_full = Tensor<Scalar>(v);
      b_cum = Tensor<Scalar>(Matrix<Scalar>::Ones(n, 1));
    }

    Tensor<Scalar> remainder = product ? affine(prod, Scalar(-1), Scalar(1)) : affine(mass, Scalar(-1), Scalar(1));
    Tensor<Scalar> cont_part = mul(b_full, detail::column_mask<Scalar>(cont));
    Tensor<Scalar> halt_part = mul(remainder, detail::column_mask<Scalar>(halting));
    Tensor<Scalar> w = add(cont_part, halt_part);
    mass = add(mass, cont_part);
    if (product) prod = mul(prod, b_cum);
    remainder_sum = add(remainder_sum, halt_part);

    cls_states.push_back(gather_rows(t, std::span<const Index>(&cls_row, 1)));
    cls_weights.push_back(gather_rows(w, std::span<const Index>(&cls_row, 1)));
    layer_means.push_back(mean(w));
    if (options.collect_records) {
      r.records.insert(r.records.end(), outcome.records.begin(), outcome.records.end());
    }
  }

  Tensor<Scalar> weight_row = transpose(concat_rows(cls_weights));
  r.aggregated_cls = matmul(weight_row, concat_rows(cls_states));
  r.logits = detail::head_logits(params, r.aggregated_cls);

  r.halting_layers = state.halting_layer;
  r.remainders.assign(state.remainder.data(), state.remainder.data() + n);
  double depth_sum = 0;
  for (int m : r.halting_layers) depth_sum += m;
  r.mean_depth = depth_sum / static_cast<double>(n);
  r.ponder = affine(mean(remainder_sum), Scalar(1), static_cast<Scalar>(r.mean_depth));
  r.distribution = transpose(concat_rows(layer_means));
  return r;
}

}  // namespace tpc
