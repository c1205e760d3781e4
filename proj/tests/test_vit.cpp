#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "tpc/losses.hpp"
#include "tpc/vit.hpp"

using namespace tpc;

namespace {

ModelConfig tiny(int depth = 2) {
  ModelConfig c;
  c.depth = depth;
  c.embed_dim = 8;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.patch_size = 2;
  c.image_size = 4;
  c.in_channels = 2;
  c.num_classes = 3;
  c.tpc.gamma = 1.0;
  c.tpc.beta = 0.5;
  c.tpc.delta = 0.3;
  c.tpc.kappa = 3;
  return c;
}

Matrix<double> image_for(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return test::random_matrix(c.in_channels, static_cast<Index>(c.image_size) * c.image_size, rng);
}

}  // namespace

TEST_CASE("patchify is channel-major within each patch") {
  ModelConfig c = tiny();
  Matrix<double> img(2, 16);
  for (Index ch = 0; ch < 2; ++ch) {
    for (Index i = 0; i < 16; ++i) img(ch, i) = 100 * ch + i;
  }
  Matrix<double> p = patchify(img, c);
  REQUIRE(p.rows() == 4);
  REQUIRE(p.cols() == 8);
  // patch (0, 1): columns 2..3 of rows 0..1
  Eigen::RowVectorXd want(8);
  want << 2, 3, 6, 7, 102, 103, 106, 107;
  CHECK((p.row(1) - want).norm() == 0.0);
  CHECK_THROWS_AS(patchify(Matrix<double>(Matrix<double>::Zero(1, 16)), c), ConfigError);
}

TEST_CASE("full participation with kappa >= n equals the vanilla block") {
  ModelConfig c = tiny();
  c.tpc.kappa = 5;
  auto params = init_params<double>(c, 3);
  auto emb = patch_embed(params, c, image_for(c, 4));
  Mask all(5, 1);
  for (MaskMode mode : {MaskMode::drop, MaskMode::zero}) {
    c.tpc.mask_mode = mode;
    auto out = tpc_block(params.blocks[0], params, c, emb.tokens, all);
    auto ref = vanilla_block(params.blocks[0], c, emb.tokens);
    CHECK((out.tokens.value() - ref.value()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(out.pause.rows() == 5);
  }
}

TEST_CASE("tpc_block requires an active CLS row") {
  ModelConfig c = tiny();
  auto params = init_params<double>(c, 3);
  auto emb = patch_embed(params, c, image_for(c, 4));
  Mask m{0, 1, 1, 1, 1};
  CHECK_THROWS_AS(tpc_block(params.blocks[0], params, c, emb.tokens, m), ContractError);
  Mask short_mask{1, 1};
  CHECK_THROWS_AS(tpc_block(params.blocks[0], params, c, emb.tokens, short_mask), DimensionError);
}

TEST_CASE("drop mode leaves inactive rows untouched, zero mode does not") {
  ModelConfig c = tiny();
  auto params = init_params<double>(c, 5);
  auto emb = patch_embed(params, c, image_for(c, 6));
  Mask m{1, 1, 0, 1, 0};
  c.tpc.mask_mode = MaskMode::drop;
  auto dropped = tpc_block(params.blocks[0], params, c, emb.tokens, m);
  CHECK(dropped.rows == std::vector<Index>{0, 1, 3});
  CHECK((dropped.tokens.value().row(2) - emb.tokens.value().row(2)).norm() == 0.0);
  CHECK((dropped.tokens.value().row(4) - emb.tokens.value().row(4)).norm() == 0.0);
  c.tpc.mask_mode = MaskMode::zero;
  auto zeroed = tpc_block(params.blocks[0], params, c, emb.tokens, m);
  CHECK(zeroed.rows == dropped.rows);
  CHECK((zeroed.tokens.value().row(2) - emb.tokens.value().row(2)).norm() > 0.0);
  CHECK(zeroed.pause.rows() == 3);
}

TEST_CASE("gate probabilities read the reserved dimensions") {
  ModelConfig c = tiny();
  c.tpc.gate_dims = {3, 5};
  auto params = init_params<double>(c, 7);
  auto emb = patch_embed(params, c, image_for(c, 8));
  Mask all(5, 1);
  auto out = tpc_block(params.blocks[0], params, c, emb.tokens, all);
  for (Index r = 0; r < 5; ++r) {
    const double x0 = out.tokens.value()(r, 3);
    const double x1 = out.tokens.value()(r, 5);
    CHECK(out.pause.value()(r, 0) == doctest::Approx(1 / (1 + std::exp(-(1.0 * x0 + 0.5)))).epsilon(1e-12));
    CHECK(out.non_restart.value()(r, 0) == doctest::Approx(1 / (1 + std::exp(-(1.0 * x1 + 0.5)))).epsilon(1e-12));
  }
}

TEST_CASE("forward is deterministic and self-consistent") {
  ModelConfig c = tiny(3);
  auto params = init_params<double>(c, 9);
  Matrix<double> img = image_for(c, 10);
  ForwardOptions opt;
  opt.collect_records = true;
  auto a = forward(params, c, img, opt);
  auto b = forward(params, c, img, opt);
  CHECK((a.logits.value() - b.logits.value()).norm() == 0.0);
  CHECK(a.halting_layers == b.halting_layers);
  CHECK(a.halting_layers.size() == 5);
  double depth = 0;
  for (int m : a.halting_layers) {
    CHECK(m >= 1);
    CHECK(m <= 3);
    depth += m;
  }
  CHECK(a.mean_depth == doctest::Approx(depth / 5));
  double rem = 0;
  for (double r : a.remainders) rem += r;
  CHECK(a.ponder.item() == doctest::Approx(depth / 5 + rem / 5).epsilon(1e-12));
  // weights of every token sum to one, so the layer means do too
  CHECK(a.distribution.value().sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.active_per_layer.front() == 5);
  for (std::size_t l = 1; l < a.active_per_layer.size(); ++l) CHECK(a.active_per_layer[l] <= a.active_per_layer[l - 1]);
}

TEST_CASE("end-to-end gradient through the controller, learnable gates included") {
  ModelConfig c = tiny(2);
  c.tpc.learnable_gates = true;
  c.tpc.phi_p = 0.3;
  c.tpc.phi_d = 0.7;
  auto params = init_params<double>(c, 11);
  Matrix<double> img = image_for(c, 12);
  auto loss = [&] {
    auto fwd = forward(params, c, img);
    return compute_losses(fwd, 1, c, c.resolved_target_depth()).total;
  };
  std::vector<Tensor<double>> check{params.gate_gamma, params.gate_beta, params.cls, params.blocks[0].qkv.weight,
                                    params.blocks[1].fc2.bias, params.head.weight, params.patch.bias};
  CHECK(test::gradcheck(check, loss) < 1e-6);
}

TEST_CASE("vanilla variant and depth zero") {
  ModelConfig c = tiny(2);
  c.variant = BlockVariant::vanilla;
  auto params = init_params<double>(c, 13);
  auto r = forward(params, c, image_for(c, 14));
  CHECK_FALSE(r.has_controller_terms());
  CHECK(r.mean_depth == 2);
  ModelConfig empty = tiny(0);
  auto p0 = init_params<double>(empty, 13);
  auto r0 = forward(p0, empty, image_for(empty, 14));
  CHECK(r0.logits.cols() == 3);
  CHECK(r0.active_per_layer.empty());
}

TEST_CASE("forced schedule runs each token through its prescribed layers") {
  ModelConfig c = tiny(3);
  auto params = init_params<double>(c, 15);
  std::vector<int> halt{3, 1, 2, 3, 1};
  ForwardOptions opt;
  opt.forced_halting = &halt;
  auto r = forward(params, c, image_for(c, 16), opt);
  CHECK(r.active_per_layer == std::vector<int>{5, 3, 2});
  CHECK(r.mean_depth == doctest::Approx(2.0));
}

TEST_CASE("init is deterministic in the seed and names are unique") {
  ModelConfig c = tiny();
  auto a = init_params<double>(c, 1);
  auto b = init_params<double>(c, 1);
  auto d = init_params<double>(c, 2);
  CHECK((a.blocks[1].fc1.weight.value() - b.blocks[1].fc1.weight.value()).norm() == 0.0);
  CHECK((a.blocks[1].fc1.weight.value() - d.blocks[1].fc1.weight.value()).norm() > 0.0);
  CHECK(a.blocks[0].qkv.weight.value().cwiseAbs().maxCoeff() <= 0.04);
  auto named = a.named();
  std::set<std::string> names;
  for (auto& [n, t] : named) names.insert(n);
  CHECK(names.size() == named.size());
  CHECK(a.trainable().size() == named.size() - 2);
}
