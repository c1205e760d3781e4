#include "tpc/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tpc/errors.hpp"

namespace tpc {
namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<HaltMode> kHaltModes[] = {{HaltMode::cumulative_sum, "cumulative-sum"},
                                             {HaltMode::cumulative_product, "cumulative-product"},
                                             {HaltMode::pause_restart, "pause-restart"}};
constexpr EnumName<MaskMode> kMaskModes[] = {{MaskMode::zero, "zero"}, {MaskMode::drop, "drop"}};
constexpr EnumName<RegularizerScope> kScopes[] = {
    {RegularizerScope::all, "all"}, {RegularizerScope::cumulation, "cumulation"}, {RegularizerScope::off, "off"}};
constexpr EnumName<AttnScale> kScales[] = {{AttnScale::sqrt_d, "sqrt_d"}, {AttnScale::d_literal, "d_literal"}};
constexpr EnumName<TargetDepthMode> kTargetModes[] = {{TargetDepthMode::fixed, "fixed"},
                                                      {TargetDepthMode::dynamic, "dynamic"}};
constexpr EnumName<BlockVariant> kVariants[] = {{BlockVariant::tpc, "tpc"}, {BlockVariant::vanilla, "vanilla"}};

template <typename E, std::size_t N>
std::string enum_name(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, std::size_t N>
E enum_value(const EnumName<E> (&table)[N], const std::string& key, const std::string& s) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  std::string allowed;
  for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
  throw ConfigError(key, "unknown value \"" + s + "\" (expected one of: " + allowed + ")");
}

/// Reads one JSON object section, rejecting keys nobody asked for.
class Section {
 public:
  Section(const Json& doc, std::string name) : name_(std::move(name)) {
    if (!doc.contains(name_)) return;
    node_ = &doc.at(name_);
    if (!node_->is_object()) throw ConfigError(name_, "must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.emplace_back(key);
    if (node_ == nullptr || !node_->contains(key)) return;
    const std::string full = name_ + "." + key;
    try {
      out = node_->at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(full, "wrong type: " + node_->at(key).dump());
    }
  }

  template <typename E, std::size_t N>
  void read_enum(const char* key, const EnumName<E> (&table)[N], E& out) {
    std::string s = enum_name(table, out);
    read(key, s);
    out = enum_value(table, name_ + "." + key, s);
  }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& [key, value] : node_->items()) {
      bool found = false;
      for (const auto& k : known_) found = found || k == key;
      if (!found) throw ConfigError(name_ + "." + key, "unknown key");
    }
  }

 private:
  std::string name_;
  const Json* node_ = nullptr;
  std::vector<std::string> known_;
};

}  // namespace

std::string to_string(HaltMode m) { return enum_name(kHaltModes, m); }
std::string to_string(MaskMode m) { return enum_name(kMaskModes, m); }
std::string to_string(RegularizerScope s) { return enum_name(kScopes, s); }
std::string to_string(AttnScale s) { return enum_name(kScales, s); }

ModelConfig ModelConfig::from_preset(std::string_view name) {
  ModelConfig c;
  c.preset = std::string(name);
  if (name == "deit-t") {
    c.embed_dim = 192;
    c.heads = 3;
  } else if (name == "deit-s") {
    c.embed_dim = 384;
    c.heads = 6;
  } else if (name == "deit-b") {
    c.embed_dim = 768;
    c.heads = 12;
  } else {
    throw ConfigError("model.preset", "unknown preset \"" + std::string(name) + "\" (expected deit-t, deit-s, deit-b)");
  }
  c.depth = 12;
  c.mlp_ratio = 4;
  c.patch_size = 16;
  c.image_size = 224;
  c.in_channels = 3;
  c.num_classes = 1000;
  return c;
}

void ModelConfig::validate(bool allow_empty_stack) const {
  if (depth < (allow_empty_stack ? 0 : 1)) throw ConfigError("model.depth", "must be positive");
  if (embed_dim < 1) throw ConfigError("model.embed_dim", "must be positive");
  if (heads < 1) throw ConfigError("model.heads", "must be positive");
  if (embed_dim % heads != 0) throw ConfigError("model.heads", "embed_dim must be divisible by heads");
  if (mlp_ratio < 1) throw ConfigError("model.mlp_ratio", "must be positive");
  if (patch_size < 1) throw ConfigError("model.patch_size", "must be positive");
  if (image_size < 1 || image_size % patch_size != 0) {
    throw ConfigError("model.image_size", "must be a positive multiple of patch_size");
  }
  if (in_channels < 1) throw ConfigError("model.in_channels", "must be positive");
  if (num_classes < 1) throw ConfigError("model.num_classes", "must be positive");
  if (!(tpc.delta > 0.0 && tpc.delta < 1.0)) throw ConfigError("tpc.delta", "must lie in (0, 1)");
  if (!(tpc.zeta >= 0.0 && tpc.zeta <= 1.0)) throw ConfigError("tpc.zeta", "must lie in [0, 1]");
  if (tpc.kappa < 1) throw ConfigError("tpc.kappa", "must be >= 1");
  if (tpc.target_depth < 0 || (depth > 0 && resolved_target_depth() > depth)) {
    throw ConfigError("tpc.target_depth", "must lie in [1, depth]");
  }
  if (tpc.gate_dims[0] == tpc.gate_dims[1]) throw ConfigError("tpc.gate_dims", "dimensions must be distinct");
  for (int g : tpc.gate_dims) {
    if (g < 0 || g >= embed_dim) throw ConfigError("tpc.gate_dims", "dimension out of range");
  }
  if (tpc.phi_p < 0.0) throw ConfigError("tpc.phi_p", "must be non-negative");
  if (tpc.phi_d < 0.0) throw ConfigError("tpc.phi_d", "must be non-negative");
}

void RunConfig::validate() const {
  model.validate(true);  // training paths re-check with depth >= 1
  if (data.source != "synthetic-blobs" && data.source != "cifar10-binary" && data.source != "tensor-dir") {
    throw ConfigError("data.source", "unknown source \"" + data.source + "\"");
  }
  if (data.source != "synthetic-blobs" && data.path.empty()) throw ConfigError("data.path", "required for this source");
  if (data.train_size < 1) throw ConfigError("data.train_size", "must be positive");
  if (data.eval_size < 0) throw ConfigError("data.eval_size", "must be non-negative");
  if (data.num_classes != 0 && data.num_classes != model.num_classes) {
    throw ConfigError("data.num_classes", "disagrees with model.num_classes");
  }
  if (!data.mean.empty() && static_cast<int>(data.mean.size()) != model.in_channels) {
    throw ConfigError("data.mean", "needs one entry per channel");
  }
  if (data.stddev.size() != data.mean.size()) throw ConfigError("data.stddev", "must match data.mean");
  for (double s : data.stddev) {
    if (!(s > 0.0)) throw ConfigError("data.stddev", "entries must be positive");
  }
  if (!(optim.lr > 0.0)) throw ConfigError("optim.lr", "must be positive");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0)) throw ConfigError("optim.beta1", "must lie in [0, 1)");
  if (!(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) throw ConfigError("optim.beta2", "must lie in [0, 1)");
  if (!(optim.eps > 0.0)) throw ConfigError("optim.eps", "must be positive");
  if (!(optim.warmup_fraction >= 0.0 && optim.warmup_fraction < 1.0)) {
    throw ConfigError("optim.warmup_fraction", "must lie in [0, 1)");
  }
  if (!(optim.min_lr_ratio > 0.0 && optim.min_lr_ratio <= 1e-3)) {
    throw ConfigError("optim.min_lr_ratio", "must lie in (0, 1e-3]");
  }
  if (train.epochs < 1) throw ConfigError("train.epochs", "must be positive");
  if (train.batch_size < 1) throw ConfigError("train.batch_size", "must be positive");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every", "must be non-negative");
  if (train.precision != "f64" && train.precision != "f32") throw ConfigError("train.precision", "f64 or f32");
}

Json RunConfig::to_json() const {
  Json j;
  const auto& m = model;
  j["model"] = {{"preset", m.preset},           {"variant", enum_name(kVariants, m.variant)},
                {"depth", m.depth},             {"embed_dim", m.embed_dim},
                {"heads", m.heads},             {"mlp_ratio", m.mlp_ratio},
                {"patch_size", m.patch_size},   {"image_size", m.image_size},
                {"in_channels", m.in_channels}, {"num_classes", m.num_classes}};
  const auto& t = m.tpc;
  j["tpc"] = {{"gamma", t.gamma},
              {"beta", t.beta},
              {"zeta", t.zeta},
              {"delta", t.delta},
              {"kappa", t.kappa},
              {"stabilizer", t.stabilizer},
              {"phi_p", t.phi_p},
              {"phi_d", t.phi_d},
              {"target_depth", t.target_depth},
              {"target_depth_mode", enum_name(kTargetModes, t.target_mode)},
              {"gate_dims", t.gate_dims},
              {"attn_scale", enum_name(kScales, t.attn_scale)},
              {"halt_mode", enum_name(kHaltModes, t.halt_mode)},
              {"mask_mode", enum_name(kMaskModes, t.mask_mode)},
              {"regularizer", enum_name(kScopes, t.regularizer)},
              {"learnable_gates", t.learnable_gates}};
  j["data"] = {{"source", data.source},       {"path", data.path},
               {"train_size", data.train_size}, {"eval_size", data.eval_size},
               {"num_classes", data.num_classes}, {"mean", data.mean},
               {"stddev", data.stddev},         {"shuffle_seed", data.shuffle_seed},
               {"noise", data.noise}};
  j["optim"] = {{"lr", optim.lr},
                {"beta1", optim.beta1},
                {"beta2", optim.beta2},
                {"eps", optim.eps},
                {"warmup_fraction", optim.warmup_fraction},
                {"min_lr_ratio", optim.min_lr_ratio}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"seed", train.seed},
                {"trace", train.trace},
                {"checkpoint_every", train.checkpoint_every},
                {"precision", train.precision}};
  return j;
}

RunConfig RunConfig::from_json(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("", "config document must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (key != "model" && key != "tpc" && key != "data" && key != "optim" && key != "train") {
      throw ConfigError(key, "unknown section");
    }
  }
  RunConfig c;

  Section model(doc, "model");
  std::string preset;
  model.read("preset", preset);
  if (!preset.empty()) c.model = ModelConfig::from_preset(preset);
  model.read_enum("variant", kVariants, c.model.variant);
  model.read("depth", c.model.depth);
  model.read("embed_dim", c.model.embed_dim);
  model.read("heads", c.model.heads);
  model.read("mlp_ratio", c.model.mlp_ratio);
  model.read("patch_size", c.model.patch_size);
  model.read("image_size", c.model.image_size);
  model.read("in_channels", c.model.in_channels);
  model.read("num_classes", c.model.num_classes);
  model.finish();

  Section tpc(doc, "tpc");
  auto& t = c.model.tpc;
  tpc.read("gamma", t.gamma);
  tpc.read("beta", t.beta);
  tpc.read("zeta", t.zeta);
  tpc.read("delta", t.delta);
  tpc.read("kappa", t.kappa);
  tpc.read("stabilizer", t.stabilizer);
  tpc.read("phi_p", t.phi_p);
  tpc.read("phi_d", t.phi_d);
  tpc.read("target_depth", t.target_depth);
  tpc.read_enum("target_depth_mode", kTargetModes, t.target_mode);
  tpc.read("gate_dims", t.gate_dims);
  tpc.read_enum("attn_scale", kScales, t.attn_scale);
  tpc.read_enum("halt_mode", kHaltModes, t.halt_mode);
  tpc.read_enum("mask_mode", kMaskModes, t.mask_mode);
  tpc.read_enum("regularizer", kScopes, t.regularizer);
  tpc.read("learnable_gates", t.learnable_gates);
  tpc.finish();

  Section data(doc, "data");
  data.read("source", c.data.source);
  data.read("path", c.data.path);
  data.read("train_size", c.data.train_size);
  data.read("eval_size", c.data.eval_size);
  data.read("num_classes", c.data.num_classes);
  data.read("mean", c.data.mean);
  data.read("stddev", c.data.stddev);
  data.read("shuffle_seed", c.data.shuffle_seed);
  data.read("noise", c.data.noise);
  data.finish();

  Section optim(doc, "optim");
  optim.read("lr", c.optim.lr);
  optim.read("beta1", c.optim.beta1);
  optim.read("beta2", c.optim.beta2);
  optim.read("eps", c.optim.eps);
  optim.read("warmup_fraction", c.optim.warmup_fraction);
  optim.read("min_lr_ratio", c.optim.min_lr_ratio);
  optim.finish();

  Section train(doc, "train");
  train.read("epochs", c.train.epochs);
  train.read("batch_size", c.train.batch_size);
  train.read("seed", c.train.seed);
  train.read("trace", c.train.trace);
  train.read("checkpoint_every", c.train.checkpoint_every);
  train.read("precision", c.train.precision);
  train.finish();

  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("--config", std::string("malformed JSON: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc);
}

std::string qualify_key(std::string_view key) {
  if (key.find('.') != std::string_view::npos) return std::string(key);
  const Json schema = RunConfig{}.to_json();
  std::string match;
  for (const auto& [section, body] : schema.items()) {
    if (body.contains(std::string(key))) {
      if (!match.empty()) throw ConfigError(std::string(key), "ambiguous key; qualify it with a section");
      match = section + "." + std::string(key);
    }
  }
  if (match.empty()) throw ConfigError(std::string(key), "unknown key");
  return match;
}

void apply_override(Json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(std::string(assignment), "override must look like section.key=value");
  }
  const std::string key = qualify_key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  const auto dot = key.find('.');
  const std::string section = key.substr(0, dot);
  const std::string field = key.substr(dot + 1);
  const Json schema = RunConfig{}.to_json();
  if (!schema.contains(section) || !schema[section].contains(field)) throw ConfigError(key, "unknown key");
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  if (!doc.contains(section)) doc[section] = Json::object();
  doc[section][field] = std::move(value);
}

}  // namespace tpc
