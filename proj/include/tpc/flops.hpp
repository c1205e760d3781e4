#pragma once

// Analytic operation counts and parameter counts.
//
// Multiply-accumulates count once by default (`mac_factor` 1); pass 2 to
// count the multiply and the add separately. Elementwise work (softmax exp and
// divide, layer-norm mean and variance, gate arithmetic) counts one per
// element.

#include <cstdint>
#include <string>
#include <vector>

#include "tpc/config.hpp"

namespace tpc {

struct LayerFlops {
  int active_tokens = 0;
  double projection = 0;  // qkv and output projection
  double attention = 0;   // scores, softmax, value mix
  double mlp = 0;
  double norm = 0;
  double gate = 0;
  double selection = 0;  // top-k key distances
  double total() const { return projection + attention + mlp + norm + gate + selection; }
};

struct FlopLedger {
  std::vector<LayerFlops> layers;
  double embed = 0;  // patch projection
  double head = 0;   // final norm and classifier
  double total = 0;
  double dense_equivalent = 0;  // same configuration with every token in every layer
  int mac_factor = 1;
};

/// Per-token gate cost: two affine + sigmoid readouts, the break product and
/// the regularizer mix.
inline constexpr double kGateOpsPerToken = 12;

/// One layer with `n` participating tokens.
LayerFlops layer_flops(const ModelConfig& cfg, int n, int mac_factor = 1);

/// `active` has one entry per layer (tokens entering that block, CLS included).
FlopLedger count_flops(const ModelConfig& cfg, const std::vector<int>& active, int mac_factor = 1);

/// All tokens in all layers.
FlopLedger count_flops(const ModelConfig& cfg, int mac_factor = 1);

/// Plain ViT: all tokens, dense attention, no gates.
double dense_path_flops(const ModelConfig& cfg, int mac_factor = 1);

/// Exact learnable-scalar count. The gate scalars count only when learnable.
std::int64_t count_params(const ModelConfig& cfg);

std::string format_ledger(const FlopLedger& ledger);
std::string ledger_csv(const FlopLedger& ledger);

}  // namespace tpc
