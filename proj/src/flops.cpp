#include "tpc/flops.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "tpc/errors.hpp"
#include "tpc/trace.hpp"

namespace tpc {

LayerFlops layer_flops(const ModelConfig& cfg, int n, int mac_factor) {
  if (n < 0 || n > cfg.token_count()) throw ContractError("layer_flops: active count outside [0, K+1]");
  const double d = cfg.embed_dim;
  const double m = cfg.mlp_dim();
  const double h = cfg.heads;
  const double nn = n;
  const double mac = mac_factor;
  const bool tpc = cfg.variant == BlockVariant::tpc;
  const bool sparse = tpc && cfg.tpc.stabilizer && cfg.tpc.kappa < n;
  const double keys = sparse ? cfg.tpc.kappa : nn;

  LayerFlops f;
  f.active_tokens = n;
  f.projection = mac * 4 * nn * d * d;
  f.attention = mac * 2 * nn * keys * d + 2 * nn * keys * h;
  f.mlp = mac * 2 * nn * d * m;
  f.norm = 2 * 2 * nn * d;
  f.gate = tpc ? kGateOpsPerToken * nn : 0;
  f.selection = sparse ? mac * nn * nn * d : 0;
  return f;
}

namespace {

void fill_outer(const ModelConfig& cfg, FlopLedger& l) {
  l.embed = static_cast<double>(l.mac_factor) * cfg.patch_count() * static_cast<double>(cfg.patch_dim()) * cfg.embed_dim;
  l.head = 2.0 * cfg.embed_dim + static_cast<double>(l.mac_factor) * cfg.embed_dim * cfg.num_classes;
}

}  // namespace

FlopLedger count_flops(const ModelConfig& cfg, const std::vector<int>& active, int mac_factor) {
  if (static_cast<int>(active.size()) != cfg.depth) throw DimensionError("count_flops: one active count per layer");
  if (mac_factor != 1 && mac_factor != 2) throw ContractError("count_flops: mac_factor must be 1 or 2");
  FlopLedger l;
  l.mac_factor = mac_factor;
  fill_outer(cfg, l);
  l.total = l.embed + l.head;
  l.dense_equivalent = l.total;
  const LayerFlops full = layer_flops(cfg, cfg.token_count(), mac_factor);
  for (int n : active) {
    l.layers.push_back(layer_flops(cfg, n, mac_factor));
    l.total += l.layers.back().total();
    l.dense_equivalent += full.total();
  }
  return l;
}

FlopLedger count_flops(const ModelConfig& cfg, int mac_factor) {
  return count_flops(cfg, std::vector<int>(static_cast<std::size_t>(cfg.depth), cfg.token_count()), mac_factor);
}

double dense_path_flops(const ModelConfig& cfg, int mac_factor) {
  ModelConfig plain = cfg;
  plain.variant = BlockVariant::vanilla;
  return count_flops(plain, mac_factor).total;
}

std::int64_t count_params(const ModelConfig& cfg) {
  const std::int64_t d = cfg.embed_dim;
  const std::int64_t m = cfg.mlp_dim();
  const std::int64_t block = 2 * 2 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * m + m) + (m * d + d);
  std::int64_t total = static_cast<std::int64_t>(cfg.patch_dim()) * d + d;  // patch projection
  total += d + static_cast<std::int64_t>(cfg.token_count()) * d;            // cls + positions
  total += cfg.depth * block;
  total += 2 * d + d * cfg.num_classes + cfg.num_classes;  // final norm + head
  if (cfg.variant == BlockVariant::tpc && cfg.tpc.learnable_gates) total += 2;
  return total;
}

std::string format_ledger(const FlopLedger& l) {
  std::ostringstream os;
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%-6s %7s %12s %12s %12s %12s %12s %12s %12s\n", "layer", "tokens", "projection",
                "attention", "mlp", "norm", "gate", "selection", "total");
  os << buf;
  for (std::size_t i = 0; i < l.layers.size(); ++i) {
    const auto& f = l.layers[i];
    std::snprintf(buf, sizeof(buf), "%-6zu %7d %12.4e %12.4e %12.4e %12.4e %12.4e %12.4e %12.4e\n", i + 1,
                  f.active_tokens, f.projection, f.attention, f.mlp, f.norm, f.gate, f.selection, f.total());
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "embed %.4e  head %.4e\n", l.embed, l.head);
  os << buf;
  std::snprintf(buf, sizeof(buf), "total %.4f G  dense-equivalent %.4f G  (1 MAC = %d FLOP%s)\n", l.total / 1e9,
                l.dense_equivalent / 1e9, l.mac_factor, l.mac_factor == 1 ? "" : "s");
  os << buf;
  return os.str();
}

std::string ledger_csv(const FlopLedger& l) {
  std::ostringstream os;
  os << "layer,active_tokens,projection,attention,mlp,norm,gate,selection,total\n";
  for (std::size_t i = 0; i < l.layers.size(); ++i) {
    const auto& f = l.layers[i];
    os << i + 1 << ',' << f.active_tokens << ',' << format_number(f.projection) << ',' << format_number(f.attention) << ',' << format_number(f.mlp) << ','
       << format_number(f.norm) << ',' << format_number(f.gate) << ',' << format_number(f.selection) << ','
       << format_number(f.total()) << '\n';
  }
  os << "embed,," << format_number(l.embed) << ",,,,,," << format_number(l.embed) << '\n';
  os << "head,," << format_number(l.head) << ",,,,,," << format_number(l.head) << '\n';
  os << "total,,,,,,,," << format_number(l.total) << '\n';
  os << "dense_equivalent,,,,,,,," << format_number(l.dense_equivalent) << '\n';
  return os.str();
}

}  // namespace tpc
