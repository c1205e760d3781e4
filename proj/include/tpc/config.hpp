#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tpc/stabilizer.hpp"

namespace tpc {

using Json = nlohmann::ordered_json;

/// How per-layer break mass accumulates into a halting decision.
enum class HaltMode {
  cumulative_sum,      // running sum, halt once >= 1 - delta
  cumulative_product,  // running product, halt once > 1 - delta
  pause_restart,       // cumulative_sum plus per-layer skip gating (experimental)
};

/// What happens to tokens that are not participating in a layer.
enum class MaskMode {
  zero,  // rows zeroed, still occupy attention slots
  drop,  // rows removed from the layer entirely
};

/// Where the regularized break probability replaces the raw one.
enum class RegularizerScope { all, cumulation, off };

enum class TargetDepthMode { fixed, dynamic };

enum class BlockVariant { tpc, vanilla };

struct TpcConfig {
  double gamma = 5.0;
  double beta = 40.0;
  double zeta = 0.5;
  double delta = 0.01;
  int kappa = 100;
  bool stabilizer = true;
  double phi_p = 5e-4;
  double phi_d = 0.1;
  int target_depth = 0;  // 0 resolves to ceil(depth / 2)
  TargetDepthMode target_mode = TargetDepthMode::fixed;
  std::array<int, 2> gate_dims{0, 1};
  AttnScale attn_scale = AttnScale::sqrt_d;
  HaltMode halt_mode = HaltMode::cumulative_sum;
  MaskMode mask_mode = MaskMode::drop;
  RegularizerScope regularizer = RegularizerScope::all;
  bool learnable_gates = false;
};

struct ModelConfig {
  std::string preset;
  BlockVariant variant = BlockVariant::tpc;
  int depth = 12;
  int embed_dim = 384;
  int heads = 6;
  int mlp_ratio = 4;
  int patch_size = 16;
  int image_size = 224;
  int in_channels = 3;
  int num_classes = 1000;
  TpcConfig tpc;

  int head_dim() const { return embed_dim / heads; }
  int mlp_dim() const { return embed_dim * mlp_ratio; }
  int patch_count() const { return (image_size / patch_size) * (image_size / patch_size); }
  int token_count() const { return patch_count() + 1; }
  int patch_dim() const { return in_channels * patch_size * patch_size; }
  int resolved_target_depth() const { return tpc.target_depth > 0 ? tpc.target_depth : (depth + 1) / 2; }

  /// Throws ConfigError naming the offending key. `allow_empty_stack` admits
  /// depth 0 (embedding + head only), used by throughput benchmarks.
  void validate(bool allow_empty_stack = false) const;

  /// "deit-t", "deit-s", "deit-b" (ImageNet geometry, 224px, patch 16).
  static ModelConfig from_preset(std::string_view name);
};

struct DataConfig {
  std::string source = "synthetic-blobs";  // synthetic-blobs | cifar10-binary | tensor-dir
  std::string path;
  int train_size = 512;
  int eval_size = 256;
  int num_classes = 0;  // 0: take the model's class count
  std::vector<double> mean;
  std::vector<double> stddev;
  std::uint64_t shuffle_seed = 0;  // 0: derive from the run seed
  double noise = 0.5;
};

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_fraction = 0.05;
  double min_lr_ratio = 1e-5;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  std::uint64_t seed = 0;
  bool trace = false;
  int checkpoint_every = 0;  // epochs between checkpoints, 0 = final only
  std::string precision = "f64";
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  OptimConfig optim;
  TrainConfig train;

  void validate() const;
  Json to_json() const;
  static RunConfig from_json(const Json& doc);
  static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
};

/// Applies "section.key=value" to a config document. The key must already
/// exist in the canonical schema; values parse as JSON, falling back to a
/// bare string.
void apply_override(Json& doc, std::string_view assignment);

/// Resolves a bare key ("kappa") to its dotted form ("tpc.kappa") when unique.
std::string qualify_key(std::string_view key);

std::string to_string(HaltMode m);
std::string to_string(MaskMode m);
std::string to_string(RegularizerScope s);
std::string to_string(AttnScale s);

}  // namespace tpc
