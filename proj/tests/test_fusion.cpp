#include "pycat/conv_backbone.hpp"
#include "pycat/fusion.hpp"
#include "test_util.hpp"

using namespace pycat;
using pycat::testing::expect_gradients;
using pycat::testing::max_abs_diff;
using pycat::testing::probe_loss;
using pycat::testing::random_tensor;

namespace {

std::vector<Tensor> random_stages(std::mt19937_64& rng, int64_t base, int64_t width, bool grad = false) {
  std::vector<Tensor> s;
  int64_t size = base;
  for (int i = 0; i < 4; ++i) {
    s.push_back(random_tensor({1, width << i, size, size}, rng, 1.0, grad));
    size = (size + 1) / 2;
  }
  return s;
}

void zero_conv(nn::Conv2d& c) {
  for (double& v : c.weight.mutable_values()) v = 0.0;
  for (double& v : c.bias.mutable_values()) v = 0.0;
}

}  // namespace

TEST(ConvBackbone, StageSizes) {
  ParamStore store;
  Rng prng(1);
  auto bb = ConvBackbone::create(store, "conv", {3, 8}, prng);
  NoGradScope no_grad;
  auto maps = bb.forward(Tensor::zeros({1, 3, 224, 224}));
  const int64_t sizes[4] = {56, 28, 14, 7};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(maps[i].shape(), (Shape{1, 8 << i, sizes[i], sizes[i]}));
  maps = bb.forward(Tensor::zeros({2, 3, 112, 112}));
  const int64_t desk[4] = {28, 14, 7, 4};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(maps[i].shape(), (Shape{2, 8 << i, desk[i], desk[i]}));
}

TEST(ConvBackbone, GradientChecks) {
  ParamStore store;
  Rng prng(2);
  auto bb = ConvBackbone::create(store, "conv", {3, 2}, prng);
  std::mt19937_64 rng(2);
  Tensor img = random_tensor({1, 3, 32, 32}, rng);
  auto loss = [&] {
    auto maps = bb.forward(img);
    Tensor l = probe_loss(maps[3]);
    for (int i = 0; i < 3; ++i) l = l + probe_loss(maps[i], i);
    return l;
  };
  std::vector<std::pair<std::string, Tensor>> probes{{"img", img}};
  for (const auto& [name, t] : store.named()) probes.emplace_back(name, t);
  expect_gradients(loss, probes, 1e-4, 12);
}

TEST(Aspp, PreservesSpatialSize) {
  ParamStore store;
  Rng prng(3);
  auto p = AsppParams::create(store, "aspp", 16, 8, {1, 2, 4, 8}, prng);
  std::mt19937_64 rng(3);
  EXPECT_EQ(aspp(random_tensor({2, 16, 14, 14}, rng, 1.0, false), p).shape(), (Shape{2, 8, 14, 14}));
  EXPECT_EQ(aspp(random_tensor({1, 16, 4, 4}, rng, 1.0, false), p).shape(), (Shape{1, 8, 4, 4}));
}

TEST(Aspp, ZeroBranchesGiveFuseBias) {
  ParamStore store;
  Rng prng(4);
  auto p = AsppParams::create(store, "aspp", 6, 3, {1, 2}, prng);
  zero_conv(p.pointwise);
  zero_conv(p.pooled);
  for (auto& c : p.dilated) zero_conv(c);
  const double bias[3] = {0.5, -1.25, 2.0};
  for (int i = 0; i < 3; ++i) p.fuse.bias.mutable_values()[i] = bias[i];
  std::mt19937_64 rng(4);
  Tensor y = aspp(random_tensor({1, 6, 5, 5}, rng, 1.0, false), p);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 25; ++i) EXPECT_EQ(y.values()[c * 25 + i], bias[c]);
}

TEST(Aspp, GradientChecks) {
  ParamStore store;
  Rng prng(5);
  auto p = AsppParams::create(store, "aspp", 4, 3, {1, 2, 4}, prng);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({1, 4, 6, 6}, rng);
  std::vector<std::pair<std::string, Tensor>> probes{{"x", x}};
  for (const auto& [name, t] : store.named()) probes.emplace_back(name, t);
  expect_gradients([&] { return probe_loss(aspp(x, p)); }, probes, 1e-4, 24);
}

TEST(Fpn, OutputSizes) {
  std::mt19937_64 rng(6);
  ParamStore store;
  Rng prng(6);
  auto stages = random_stages(rng, 56, 4);
  auto p = FpnParams::create(store, "fpn", {4, 8, 16, 32}, 8, prng);
  auto out = fpn(stages, p);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].shape(), (Shape{1, 8, 14, 14}));
  EXPECT_EQ(out[1].shape(), (Shape{1, 8, 28, 28}));
  EXPECT_EQ(out[2].shape(), (Shape{1, 8, 56, 56}));
}

TEST(Fpn, ZeroLateralsGiveZeroOutputs) {
  std::mt19937_64 rng(7);
  ParamStore store;
  Rng prng(7);
  auto stages = random_stages(rng, 28, 4);
  auto p = FpnParams::create(store, "fpn", {4, 8, 16, 32}, 8, prng);
  for (auto& l : p.laterals) zero_conv(l);
  for (const auto& o : fpn(stages, p))
    for (double v : o.values()) EXPECT_EQ(v, 0.0);
}

TEST(Fpn, GradientChecks) {
  std::mt19937_64 rng(8);
  ParamStore store;
  Rng prng(8);
  auto stages = random_stages(rng, 8, 2, true);
  auto p = FpnParams::create(store, "fpn", {2, 4, 8, 16}, 3, prng);
  auto loss = [&] {
    auto out = fpn(stages, p);
    return probe_loss(out[0], 1) + probe_loss(out[1], 2) + probe_loss(out[2], 3);
  };
  std::vector<std::pair<std::string, Tensor>> probes;
  for (int i = 0; i < 4; ++i) probes.emplace_back("stage" + std::to_string(i), stages[i]);
  for (const auto& [name, t] : store.named()) probes.emplace_back(name, t);
  expect_gradients(loss, probes, 1e-4, 24);
}

TEST(FusePyramid, LevelSizesInBothModes) {
  for (auto [base, expected] : std::vector<std::pair<int64_t, std::vector<int64_t>>>{{56, {14, 28, 56}},
                                                                                         {28, {7, 14, 28}}}) {
    std::mt19937_64 rng(9);
    ParamStore store;
    Rng prng(9);
    auto stages = random_stages(rng, base, 4);
    FusionConfig cfg;
    cfg.channels = 8;
    auto p = FusionParams::create(store, "fusion", {4, 8, 16, 32}, cfg, prng);
    FeaturePyramid pyr = fuse_pyramid(stages, p);
    EXPECT_NO_THROW(validate_pyramid(pyr, expected));
    EXPECT_EQ(pyr.levels[0].size(1), 8);
    EXPECT_EQ(pyr.global.shape(), (Shape{1, 32}));
    for (const auto& l : pyr.levels)
      for (double v : l.values()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(FusePyramid, DisablingAsppGivesPlainFpnBitwise) {
  std::mt19937_64 rng(10);
  ParamStore store;
  Rng prng(10);
  auto stages = random_stages(rng, 28, 4);
  FusionConfig cfg;
  cfg.channels = 8;
  cfg.use_aspp = false;
  auto p = FusionParams::create(store, "fusion", {4, 8, 16, 32}, cfg, prng);
  FeaturePyramid pyr = fuse_pyramid(stages, p);
  auto plain = fpn(stages, p.fpn);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(max_abs_diff(pyr.levels[i], plain[i]), 0.0);
  p.cfg.use_aspp = true;
  FeaturePyramid with = fuse_pyramid(stages, p);
  EXPECT_GT(max_abs_diff(with.levels[0], plain[0]), 0.0);
}

TEST(FusePyramid, PerLevelAsppSwitch) {
  std::mt19937_64 rng(11);
  ParamStore store;
  Rng prng(11);
  auto stages = random_stages(rng, 28, 4);
  FusionConfig cfg;
  cfg.channels = 8;
  cfg.aspp_all_levels = true;
  auto p = FusionParams::create(store, "fusion", {4, 8, 16, 32}, cfg, prng);
  EXPECT_EQ(p.aspp.size(), 4u);
  EXPECT_NO_THROW(validate_pyramid(fuse_pyramid(stages, p), {7, 14, 28}));
}

TEST(FusePyramid, GradientReachesEveryStage) {
  std::mt19937_64 rng(12);
  ParamStore store;
  Rng prng(12);
  auto stages = random_stages(rng, 28, 4, true);
  FusionConfig cfg;
  cfg.channels = 8;
  auto p = FusionParams::create(store, "fusion", {4, 8, 16, 32}, cfg, prng);
  Tape tape;
  TapeScope scope(tape);
  FeaturePyramid pyr = fuse_pyramid(stages, p);
  Tensor loss = probe_loss(pyr.levels[0], 1) + probe_loss(pyr.levels[1], 2) + probe_loss(pyr.levels[2], 3) +
                probe_loss(pyr.global, 4);
  Gradients g = tape.backward(loss);
  for (int i = 0; i < 4; ++i) {
    int64_t nonzero = 0;
    for (double v : g.of(stages[i]).values()) nonzero += v != 0.0;
    EXPECT_EQ(nonzero, stages[i].numel()) << "stage " << i;
  }
}

TEST(DeconvPyramid, LevelSizesInBothModes) {
  for (auto [base, expected] : std::vector<std::pair<int64_t, std::vector<int64_t>>>{{56, {14, 28, 56}},
                                                                                         {28, {7, 14, 28}}}) {
    std::mt19937_64 rng(13);
    ParamStore store;
    Rng prng(13);
    auto stages = random_stages(rng, base, 4);
    auto p = DeconvPyramidParams::create(store, "deconv", 32, 8, prng);
    EXPECT_NO_THROW(validate_pyramid(deconv_pyramid(stages, p), expected));
  }
}

TEST(DeconvPyramid, GradientChecks) {
  std::mt19937_64 rng(14);
  ParamStore store;
  Rng prng(14);
  auto stages = random_stages(rng, 14, 2, true);
  auto p = DeconvPyramidParams::create(store, "deconv", 16, 3, prng);
  auto loss = [&] {
    FeaturePyramid pyr = deconv_pyramid(stages, p);
    return probe_loss(pyr.levels[0], 1) + probe_loss(pyr.levels[1], 2) + probe_loss(pyr.levels[2], 3) +
           probe_loss(pyr.global, 4);
  };
  std::vector<std::pair<std::string, Tensor>> probes{{"stage3", stages[3]}};
  for (const auto& [name, t] : store.named()) probes.emplace_back(name, t);
  expect_gradients(loss, probes, 1e-4, 24);
}
