#include <gtest/gtest.h>

#include "pycat/model.hpp"
#include "test_util.hpp"

using namespace pycat;
using pycat::testing::random_tensor;

namespace {

Tensor images(int64_t batch, int64_t size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(batch * 3 * size * size);
  for (auto& x : v) x = u(rng);
  return Tensor({batch, 3, size, size}, std::move(v));
}

bool has_prefix(const ParamStore& s, const std::string& prefix) {
  for (const auto& [name, _] : s.named())
    if (name.rfind(prefix, 0) == 0) return true;
  return false;
}

void expect_equal(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.values()[i], b.values()[i]) << i;
}

}  // namespace

TEST(Variant, NamesRoundTrip) {
  for (Variant v : all_variants()) {
    EXPECT_EQ(parse_variant(variant_id(v)), v);
    EXPECT_EQ(parse_variant(display_name(v)), v);
  }
  EXPECT_EQ(all_variants().size(), 5u);
  EXPECT_EQ(display_name(Variant::ca_fpn_transformer), "CA_FPN_Transformer");
  EXPECT_THROW(parse_variant("resnet"), ParseError);
}

TEST(Variant, LadderAddsOneModuleAtATime) {
  EXPECT_FALSE(uses_ca(Variant::baseline));
  EXPECT_TRUE(uses_ca(Variant::ca) && !uses_swin(Variant::ca));
  EXPECT_TRUE(uses_swin(Variant::ca_transformer) && !uses_fpn(Variant::ca_transformer));
  EXPECT_TRUE(uses_fpn(Variant::ca_fpn_transformer) && !uses_temporal(Variant::ca_fpn_transformer));
  EXPECT_TRUE(uses_temporal(Variant::pycat4) && uses_fpn(Variant::pycat4) && uses_ca(Variant::pycat4));
}

TEST(Model, ParameterGroupsFollowVariant) {
  for (Variant v : all_variants()) {
    auto m = Model::create(tiny_model_config(v), 1);
    const auto& s = m->store();
    EXPECT_TRUE(has_prefix(s, "backbone.")) << variant_id(v);
    EXPECT_TRUE(has_prefix(s, "regressor.")) << variant_id(v);
    EXPECT_EQ(has_prefix(s, "ca0."), uses_ca(v)) << variant_id(v);
    EXPECT_EQ(has_prefix(s, "fusion."), uses_fpn(v)) << variant_id(v);
    EXPECT_EQ(has_prefix(s, "deconv."), !uses_fpn(v)) << variant_id(v);
    EXPECT_EQ(has_prefix(s, "temporal."), uses_temporal(v)) << variant_id(v);
  }
}

TEST(Model, ForwardShapes) {
  for (Variant v : all_variants()) {
    auto m = Model::create(tiny_model_config(v), 2);
    ModelOutput o = m->forward(images(2, 32, 3));
    ASSERT_EQ(o.pyramid.levels.size(), 3u);
    const auto sizes = m->level_sizes();
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(o.pyramid.levels[i].shape(), (Shape{2, 8, sizes[i], sizes[i]})) << variant_id(v);
      EXPECT_EQ(o.dense.logits[i].shape(), (Shape{2, 10, sizes[i], sizes[i]}));
      EXPECT_EQ(o.dense.uv[i].shape(), (Shape{2, 2, sizes[i], sizes[i]}));
    }
    ASSERT_EQ(o.ief.states.size(), 3u);
    for (const auto& st : o.ief.states) EXPECT_EQ(st.shape(), (Shape{2, 55}));
  }
}

TEST(Model, DeskPyramidLevels) {
  ModelConfig c;
  c.variant = Variant::ca_fpn_transformer;
  auto m = Model::create(c, 4);
  FeaturePyramid p = m->pyramid(images(1, 112, 5));
  EXPECT_EQ(p.levels[0].shape(), (Shape{1, 64, 7, 7}));
  EXPECT_EQ(p.levels[1].shape(), (Shape{1, 64, 14, 14}));
  EXPECT_EQ(p.levels[2].shape(), (Shape{1, 64, 28, 28}));
  c.image_size = 224;
  m = Model::create(c, 4);
  p = m->pyramid(images(1, 224, 5));
  EXPECT_EQ(p.levels[0].shape(), (Shape{1, 64, 14, 14}));
  EXPECT_EQ(p.levels[2].shape(), (Shape{1, 64, 56, 56}));
}

TEST(Model, ZeroInitStatesEqualInitialState) {
  for (Variant v : all_variants()) {
    auto m = Model::create(tiny_model_config(v), 6);
    ModelOutput o = m->forward_window({images(2, 32, 7), images(2, 32, 8)}, {});
    const Tensor theta0 = initial_state(m->mesh(), m->config().regressor.init_scale);
    for (const auto& st : o.ief.states)
      for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < 55; ++i) ASSERT_EQ(st.values()[b * 55 + i], theta0.values()[i]) << variant_id(v);
  }
}

TEST(Model, TemporalBypassIsExactAtZeroInit) {
  auto m = Model::create(tiny_model_config(Variant::pycat4), 9);
  const Tensor img = images(2, 32, 10);
  ModelOutput single = m->head(m->pyramid(img));
  ModelOutput fused = m->forward(img);
  ModelOutput window = m->forward_window({images(2, 32, 11), img}, {});
  for (std::size_t i = 0; i < 3; ++i) {
    expect_equal(single.pyramid.levels[i], fused.pyramid.levels[i]);
    expect_equal(single.dense.logits[i], window.dense.logits[i]);
  }
  expect_equal(single.pyramid.global, window.pyramid.global);
}

TEST(Model, PastFramesDoNotAffectSingleFrameVariants) {
  auto m = Model::create(tiny_model_config(Variant::ca_fpn_transformer), 12);
  const Tensor img = images(1, 32, 13);
  ModelOutput a = m->forward(img);
  ModelOutput b = m->forward_window({images(1, 32, 14), img}, {});
  expect_equal(a.dense.logits[2], b.dense.logits[2]);
}

TEST(Model, Contracts) {
  ModelConfig c = tiny_model_config();
  c.image_size = 40;
  EXPECT_THROW(Model::create(c, 1), ContractError);
  auto m = Model::create(tiny_model_config(), 1);
  EXPECT_THROW(m->forward_window({}, {}), ContractError);
}
