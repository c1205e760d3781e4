#include <filesystem>
#include <functional>
#include <fstream>

#include "doctest.h"
#include "tpc/config.hpp"
#include "tpc/errors.hpp"

using namespace tpc;

namespace {

std::string key_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("defaults") {
  RunConfig r;
  CHECK(r.model.tpc.gamma == 5.0);
  CHECK(r.model.tpc.beta == 40.0);
  CHECK(r.model.tpc.zeta == 0.5);
  CHECK(r.model.tpc.delta == 0.01);
  CHECK(r.model.tpc.kappa == 100);
  CHECK(r.optim.lr == 1e-4);
  CHECK(r.train.batch_size == 128);
  CHECK(r.train.epochs == 200);
  CHECK(r.optim.warmup_fraction == 0.05);
  CHECK(r.model.resolved_target_depth() == 6);
}

TEST_CASE("JSON round trip") {
  RunConfig r;
  r.model.tpc.kappa = 42;
  r.model.tpc.halt_mode = HaltMode::cumulative_product;
  r.data.mean = {0.5, 0.4, 0.3};
  r.data.stddev = {0.2, 0.2, 0.25};
  RunConfig back = RunConfig::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  CHECK(back.model.tpc.kappa == 42);
}

TEST_CASE("unknown keys and bad values name the offender") {
  Json doc = RunConfig{}.to_json();
  doc["tpc"]["kapa"] = 3;
  CHECK(key_of([&] { RunConfig::from_json(doc); }) == "tpc.kapa");
  Json bad_mode = RunConfig{}.to_json();
  bad_mode["tpc"]["halt_mode"] = "sideways";
  CHECK(key_of([&] { RunConfig::from_json(bad_mode); }) == "tpc.halt_mode");
  Json bad_delta = RunConfig{}.to_json();
  bad_delta["tpc"]["delta"] = 1.5;
  CHECK(key_of([&] { RunConfig::from_json(bad_delta); }) == "tpc.delta");
  Json bad_type = RunConfig{}.to_json();
  bad_type["model"]["depth"] = "deep";
  CHECK(key_of([&] { RunConfig::from_json(bad_type); }) == "model.depth");
  CHECK(key_of([] { ModelConfig::from_preset("deit-x"); }) == "model.preset");
}

TEST_CASE("overrides") {
  Json doc = RunConfig{}.to_json();
  apply_override(doc, "tpc.kappa=60");
  apply_override(doc, "delta=0.2");
  apply_override(doc, "tpc.mask_mode=zero");
  RunConfig r = RunConfig::from_json(doc);
  CHECK(r.model.tpc.kappa == 60);
  CHECK(r.model.tpc.delta == 0.2);
  CHECK(r.model.tpc.mask_mode == MaskMode::zero);
  CHECK(qualify_key("kappa") == "tpc.kappa");
  CHECK(key_of([&] { apply_override(doc, "tpc.nothing=1"); }) == "tpc.nothing");
  CHECK_THROWS_AS(apply_override(doc, "kappa"), ConfigError);
}

TEST_CASE("load from file, presets, missing file") {
  const auto dir = std::filesystem::path(TPC_CONFIG_DIR);
  RunConfig toy = RunConfig::load(dir / "toy.json");
  CHECK(toy.model.depth == 2);
  RunConfig over = RunConfig::load(dir / "toy.json", {"tpc.kappa=7"});
  CHECK(over.model.tpc.kappa == 7);
  RunConfig s = RunConfig::load(dir / "deit-s.json");
  CHECK(s.model.embed_dim == 384);
  CHECK(s.model.depth == 12);
  CHECK_THROWS_AS(RunConfig::load(dir / "missing.json"), ConfigError);
  const auto tmp = std::filesystem::temp_directory_path() / "tpc_bad_config.json";
  std::ofstream(tmp) << "{ not json";
  CHECK_THROWS_AS(RunConfig::load(tmp), ConfigError);
  std::filesystem::remove(tmp);
}

TEST_CASE("presets") {
  auto t = ModelConfig::from_preset("deit-t");
  auto b = ModelConfig::from_preset("deit-b");
  CHECK(t.embed_dim == 192);
  CHECK(t.heads == 3);
  CHECK(b.embed_dim == 768);
  CHECK(b.heads == 12);
  CHECK(b.token_count() == 197);
}
