#include "pycat/temporal.hpp"
#include "test_util.hpp"

using namespace pycat;
using pycat::testing::expect_gradients;
using pycat::testing::max_abs_diff;
using pycat::testing::probe_loss;
using pycat::testing::random_tensor;

namespace {

TemporalConfig small_config() {
  TemporalConfig cfg;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.max_frames = 5;
  return cfg;
}

FeaturePyramid random_pyramid(std::mt19937_64& rng, int64_t B = 2, int64_t C = 8, int64_t G = 12) {
  FeaturePyramid p;
  for (int64_t s : {3, 5, 7}) p.levels.push_back(random_tensor({B, C, s, s}, rng, 1.0, false));
  p.global = random_tensor({B, G}, rng, 1.0, false);
  return p;
}

}  // namespace

TEST(TransformerBlock, ZeroOutputIsIdentity) {
  ParamStore store;
  Rng prng(1);
  auto blk = TransformerBlockParams::create(store, "blk", 16, 2, 2.0, prng, true);
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({2, 4, 16}, rng, 1.0, false);
  EXPECT_EQ(max_abs_diff(transformer_block(x, blk), x), 0.0);
}

TEST(SpatialEncode, ZeroBlocksAddOnlyPositions) {
  ParamStore store;
  Rng prng(2);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng);
  for (std::size_t i = 0; i < p.spatial.size(); ++i) {
    p.spatial[i] = TransformerBlockParams::create(store, "z" + std::to_string(i), 16, 2, 2.0, prng, true);
  }
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({3, 4, 16}, rng, 1.0, false);
  Tensor y = spatial_encode(x, p);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(max_abs_diff(y, x + p.spatial_pos), 0.0);
}

TEST(SpatialEncode, RejectsWrongWidth) {
  ParamStore store;
  Rng prng(3);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng);
  std::mt19937_64 rng(3);
  EXPECT_THROW(spatial_encode(random_tensor({1, 4, 15}, rng), p), DimensionError);
  EXPECT_THROW(spatial_encode(random_tensor({1, 3, 16}, rng), p), DimensionError);
}

TEST(SpatialEncode, GradientCheck) {
  ParamStore store;
  Rng prng(4);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng);
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 4, 16}, rng);
  expect_gradients([&] { return probe_loss(spatial_encode(x, p)); },
                   {{"x", x}, {"pos", p.spatial_pos}, {"qkv", p.spatial[0].attn.qkv_weight},
                    {"fc2", p.spatial[1].mlp.fc2.weight}},
                   1e-4, 60);
}

TEST(TemporalEncode, SingleFrameIsResidualUpdate) {
  ParamStore store;
  Rng prng(5);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng);
  std::mt19937_64 rng(5);
  Tensor e = random_tensor({2, 1, 16}, rng, 1.0, false);
  Tensor y = temporal_encode(e, {}, p);
  // Softmax over one key is 1, so attention reduces to the value path.
  Tensor x = e + narrow(p.temporal_pos, 0, 4, 1);
  for (const auto& blk : p.temporal) {
    const nn::MHAParams& a = blk.attn;
    Tensor h = blk.norm1(x);
    Tensor v = narrow(nn::linear(h, a.qkv_weight, a.qkv_bias), 2, 32, 16);
    x = x + nn::linear(v, a.out_weight, a.out_bias);
    x = x + blk.mlp(blk.norm2(x));
  }
  EXPECT_LT(max_abs_diff(y, x), 1e-12);
}

TEST(TemporalEncode, PaddingFramesGetZeroWeight) {
  ParamStore store;
  Rng prng(6);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng);
  std::mt19937_64 rng(6);
  Tensor e = random_tensor({2, 4, 16}, rng, 1.0, false);
  std::vector<uint8_t> valid = {0, 0, 1, 1, 0, 1, 1, 1};
  std::vector<nn::AttentionProbe> probes;
  temporal_encode(e, valid, p, &probes);
  ASSERT_EQ(probes.size(), p.temporal.size());
  for (const auto& pr : probes) {
    const Tensor& w = pr.weights;  // [B,h,T,T]
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t h = 0; h < 2; ++h)
        for (int64_t q = 0; q < 4; ++q) {
          if (!valid[b * 4 + q]) continue;
          double row = 0.0;
          for (int64_t k = 0; k < 4; ++k) {
            const double v = w.at({b, h, q, k});
            row += v;
            if (!valid[b * 4 + k]) EXPECT_LT(v, 1e-8);
          }
          EXPECT_NEAR(row, 1.0, 1e-12);
        }
  }
}

TEST(TemporalEncode, InvalidFrameContentIsIgnored) {
  ParamStore store;
  Rng prng(7);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng);
  std::mt19937_64 rng(7);
  Tensor e = random_tensor({1, 4, 16}, rng, 1.0, false);
  std::vector<uint8_t> valid = {0, 1, 0, 1};
  Tensor y0 = temporal_encode(e, valid, p);
  std::vector<double> v(e.values().begin(), e.values().end());
  for (int64_t d = 0; d < 16; ++d) {
    v[d] += 5.0;
    v[2 * 16 + d] -= 3.0;
  }
  Tensor y1 = temporal_encode(Tensor(e.shape(), v), valid, p);
  EXPECT_LT(max_abs_diff(narrow(y0, 1, 3, 1), narrow(y1, 1, 3, 1)), 1e-9);
  EXPECT_LT(max_abs_diff(narrow(y0, 1, 1, 1), narrow(y1, 1, 1, 1)), 1e-9);
}

TEST(TemporalEncode, Contracts) {
  ParamStore store;
  Rng prng(8);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng);
  std::mt19937_64 rng(8);
  Tensor e = random_tensor({1, 3, 16}, rng, 1.0, false);
  EXPECT_THROW(temporal_encode(e, {0, 0, 0}, p), ContractError);
  EXPECT_THROW(temporal_encode(e, {1, 1, 0}, p), ContractError);
  EXPECT_THROW(temporal_encode(e, {1, 1}, p), DimensionError);
  EXPECT_THROW(temporal_encode(random_tensor({1, 6, 16}, rng), {}, p), ContractError);
  EXPECT_THROW(temporal_encode(random_tensor({1, 3, 8}, rng), {}, p), DimensionError);
}

TEST(TemporalEncode, GradientCheck) {
  ParamStore store;
  Rng prng(9);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng);
  std::mt19937_64 rng(9);
  Tensor e = random_tensor({2, 3, 16}, rng);
  std::vector<uint8_t> valid = {1, 1, 1, 0, 1, 1};
  expect_gradients([&] { return probe_loss(temporal_encode(e, valid, p)); },
                   {{"e", e}, {"pos", p.temporal_pos}, {"qkv", p.temporal[1].attn.qkv_weight},
                    {"norm", p.temporal[0].norm1.gain}},
                   1e-4, 60);
}

TEST(TemporalFuse, SingleFrameZeroInitIsBypass) {
  ParamStore store;
  Rng prng(10);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng);
  std::mt19937_64 rng(10);
  FeaturePyramid cur = random_pyramid(rng);
  FeaturePyramid out = temporal_fuse({{cur}, {}}, p);
  EXPECT_EQ(max_abs_diff(out.global, cur.global), 0.0);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(max_abs_diff(out.levels[i], cur.levels[i]), 0.0);
}

TEST(TemporalFuse, PastFrameOrderMatters) {
  ParamStore store;
  Rng prng(11);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng, false);
  std::mt19937_64 rng(11);
  std::vector<FeaturePyramid> frames;
  for (int t = 0; t < 4; ++t) frames.push_back(random_pyramid(rng));
  Tensor y0 = temporal_fuse({frames, {}}, p).global;
  std::swap(frames[0], frames[2]);
  Tensor y1 = temporal_fuse({frames, {}}, p).global;
  EXPECT_GT(max_abs_diff(y0, y1), 1e-6);
}

TEST(TemporalFuse, PaddingContentIsIgnored) {
  ParamStore store;
  Rng prng(12);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng, false);
  std::mt19937_64 rng(12);
  std::vector<FeaturePyramid> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(random_pyramid(rng));
  std::vector<uint8_t> valid = {0, 1, 1, 0, 1, 1};
  Tensor y0 = temporal_fuse({frames, valid}, p).global;
  frames[0] = random_pyramid(rng);
  Tensor y1 = temporal_fuse({frames, valid}, p).global;
  EXPECT_LT(max_abs_diff(y0, y1), 1e-9);
}

TEST(TemporalFuse, CopiesOfCurrentFrameAreFinite) {
  ParamStore store;
  Rng prng(13);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng, false);
  std::mt19937_64 rng(13);
  FeaturePyramid cur = random_pyramid(rng);
  FeaturePyramid out = temporal_fuse({std::vector<FeaturePyramid>(5, cur), {}}, p);
  EXPECT_EQ(out.global.shape(), cur.global.shape());
  for (double v : out.global.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(TemporalFuse, GradientReachesPastFrames) {
  ParamStore store;
  Rng prng(14);
  auto p = TemporalParams::create(store, "t", 8, 12, small_config(), prng, false);
  std::mt19937_64 rng(14);
  FeaturePyramid past = random_pyramid(rng, 1);
  FeaturePyramid cur = random_pyramid(rng, 1);
  Tensor g = random_tensor({1, 12}, rng);
  past.global = g;
  expect_gradients([&] { return probe_loss(temporal_fuse({{past, cur}, {}}, p).global); },
                   {{"past_global", g}, {"output", p.output.weight}, {"level_proj", p.level_proj[1].weight}},
                   1e-4, 60);
}
