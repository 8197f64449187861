// Backbone geometry (stride-8 reduction, dilation, receptive field) and the
// assembled model: output shapes for every head, parameter registration, and
// seeded-init determinism.
#include <gtest/gtest.h>

#include <random>
#include <set>

#include "ocseg/model.hpp"
#include "test_support.hpp"

using ocseg::BackboneConfig;
using ocseg::ModelConfig;
using ocseg::ModuleKind;
using ocseg::Tensor;
using test_support::randt;

namespace {

BackboneConfig small_backbone() {
  BackboneConfig c;
  c.stage_channels = {4, 6, 8, 8, 8};
  return c;
}

ModelConfig small_model(ModuleKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.backbone = small_backbone();
  c.mid_channels = 4;
  c.out_channels = 4;
  c.num_classes = 4;
  return c;
}

}  // namespace

TEST(Backbone, StrideEightShapes) {
  std::mt19937 rng(301);
  ocseg::ToyBackbone<double> bb(small_backbone(), &rng);
  auto [feats, aux] = bb.forward(randt({2, 3, 64, 64}, rng), true);
  EXPECT_EQ(feats.shape(), (std::vector<int>{2, 8, 8, 8}));
  EXPECT_EQ(aux.shape(), (std::vector<int>{2, 8, 8, 8}));
  auto [f2, a2] = bb.forward(randt({1, 3, 32, 48}, rng), true);
  EXPECT_EQ(f2.shape(), (std::vector<int>{1, 8, 4, 6}));
}

TEST(Backbone, RejectsIndivisibleInput) {
  std::mt19937 rng(303);
  ocseg::ToyBackbone<double> bb(small_backbone(), &rng);
  EXPECT_THROW(bb.forward(randt({1, 3, 60, 64}, rng), true), ocseg::ContractError);
  EXPECT_THROW(bb.forward(randt({1, 3, 64, 20}, rng), true), ocseg::ContractError);
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig c;
  c.stage_channels = {4, 6, 8};
  EXPECT_THROW(c.validate(), ocseg::ContractError);
  c.stage_channels = {4, 6, 8, 0, 8};
  EXPECT_THROW(c.validate(), ocseg::ContractError);
}

TEST(Backbone, ReceptiveFieldIsBounded) {
  // The stack's receptive-field radius in input pixels is
  // 1 + 2 + 4 + 2*8 + 4*8 = 55: stage radii scaled by accumulated stride.
  // Poking input pixel 64 can therefore reach output cells o with
  // 8o-55 <= 64 <= 8o+55, i.e. rows/cols 2..14 of the 16x16 map.
  std::mt19937 rng(305);
  ocseg::ToyBackbone<double> bb(small_backbone(), &rng);
  auto x = randt({1, 3, 128, 128}, rng);
  auto base = bb.forward(x, false).first;

  auto poked = Tensor<double>::from_data(
      x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  for (int c = 0; c < 3; ++c) poked.at({0, c, 64, 64}) += 1.0;
  auto after = bb.forward(poked, false).first;

  bool center_changed = false;
  for (int c = 0; c < 8; ++c) {
    for (int y = 0; y < 16; ++y)
      for (int xx = 0; xx < 16; ++xx) {
        const bool inside = (y >= 2 && y <= 14 && xx >= 2 && xx <= 14);
        if (!inside)
          EXPECT_EQ(after.at({0, c, y, xx}), base.at({0, c, y, xx}))
              << "leak at " << y << "," << xx;
      }
    center_changed = center_changed || after.at({0, c, 8, 8}) != base.at({0, c, 8, 8});
  }
  EXPECT_TRUE(center_changed);
}

TEST(Backbone, ZeroImageGivesConstantFeatures) {
  std::mt19937 rng(307);
  ocseg::ToyBackbone<double> bb(small_backbone(), &rng);
  auto [feats, aux] = bb.forward(Tensor<double>::zeros({1, 3, 32, 32}), true);
  for (int c = 0; c < 8; ++c) {
    const double ref = feats.at({0, c, 0, 0});
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) EXPECT_EQ(feats.at({0, c, y, x}), ref);
  }
}

TEST(ModuleKindNames, RoundTripAndRejection) {
  for (auto k : {ModuleKind::baseline, ModuleKind::gp, ModuleKind::base_oc,
                 ModuleKind::pyramid_oc, ModuleKind::asp_oc})
    EXPECT_EQ(ocseg::parse_module_kind(ocseg::module_kind_name(k)), k);
  EXPECT_THROW(ocseg::parse_module_kind("resnet"), ocseg::UsageError);
  try {
    ocseg::parse_module_kind("Base-OC");
    FAIL();
  } catch (const ocseg::UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("base-oc"), std::string::npos);
  }
}

TEST(SegModelAssembly, EveryHeadProducesFullResolutionLogits) {
  for (auto kind : {ModuleKind::baseline, ModuleKind::gp, ModuleKind::base_oc,
                    ModuleKind::pyramid_oc, ModuleKind::asp_oc}) {
    std::mt19937 rng(311);
    ocseg::SegModel<double> model(small_model(kind), &rng);
    auto out = model.forward(randt({2, 3, 64, 64}, rng), true);
    EXPECT_EQ(out.main_logits.shape(), (std::vector<int>{2, 4, 64, 64}))
        << ocseg::module_kind_name(kind);
    EXPECT_EQ(out.aux_logits.shape(), (std::vector<int>{2, 4, 64, 64}));
  }
}

TEST(SegModelAssembly, ContextMapAvailabilityByKind) {
  std::mt19937 rng(313);
  ocseg::SegModel<double> attn(small_model(ModuleKind::base_oc), &rng);
  EXPECT_TRUE(attn.has_context_map());
  ocseg::ObjectContextMap<double> map;
  attn.forward(randt({1, 3, 64, 64}, rng), false, &map);
  EXPECT_EQ(map.weights.shape(), (std::vector<int>{1, 64, 64}));  // N = 8*8

  ocseg::SegModel<double> plain(small_model(ModuleKind::baseline), &rng);
  EXPECT_FALSE(plain.has_context_map());
  ocseg::SegModel<double> pooled(small_model(ModuleKind::gp), &rng);
  EXPECT_FALSE(pooled.has_context_map());
}

TEST(SegModelAssembly, ParameterNamesAreUnique) {
  for (auto kind : {ModuleKind::baseline, ModuleKind::gp, ModuleKind::base_oc,
                    ModuleKind::pyramid_oc, ModuleKind::asp_oc}) {
    std::mt19937 rng(317);
    ocseg::SegModel<double> model(small_model(kind), &rng);
    std::vector<ocseg::NamedTensor<double>> params, buffers;
    model.collect(params, buffers);
    std::set<std::string> names;
    for (const auto& p : params) EXPECT_TRUE(names.insert(p.name).second) << p.name;
    for (const auto& b : buffers) EXPECT_TRUE(names.insert(b.name).second) << b.name;
    EXPECT_GT(params.size(), 10u);
    // every parameter participates in training
    for (const auto& p : params) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
    for (const auto& b : buffers) EXPECT_FALSE(b.tensor.requires_grad()) << b.name;
  }
}

TEST(SegModelAssembly, SameSeedSameForward) {
  auto run = [](unsigned seed) {
    std::mt19937 rng(seed);
    ocseg::SegModel<double> model(small_model(ModuleKind::base_oc), &rng);
    std::mt19937 drng(4242);
    auto x = randt({1, 3, 32, 32}, drng);
    return model.forward(x, true).main_logits;
  };
  auto a = run(7), b = run(7), c = run(8);
  for (int64_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  bool differs = false;
  for (int64_t i = 0; i < a.numel() && !differs; ++i)
    differs = a.data()[i] != c.data()[i];
  EXPECT_TRUE(differs);
}

TEST(SegModelAssembly, RejectsDegenerateClassCount) {
  std::mt19937 rng(319);
  auto cfg = small_model(ModuleKind::baseline);
  cfg.num_classes = 1;
  EXPECT_THROW(ocseg::SegModel<double>(cfg, &rng), ocseg::ContractError);
}
