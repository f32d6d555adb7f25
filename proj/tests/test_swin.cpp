#include <chrono>
#include <set>

#include "pycat/swin.hpp"
#include "test_util.hpp"

using namespace pycat;
using pycat::testing::expect_gradients;
using pycat::testing::max_abs_diff;
using pycat::testing::probe_loss;
using pycat::testing::random_tensor;

namespace {

// Pre-shift region of a position in a grid rolled by -shift: whether the
// original coordinate wrapped around the seam.
int wrapped(int64_t p, int64_t extent, int shift) { return p + shift >= extent ? 1 : 0; }

std::vector<int> oracle_regions(int64_t H, int64_t W, int M, int shift, int64_t wy, int64_t wx) {
  std::vector<int> ids;
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < M; ++j)
      ids.push_back(wrapped(wy * M + i, H, shift) * 2 + wrapped(wx * M + j, W, shift));
  return ids;
}

Tensor zero_table_like(const Tensor& t) { return Tensor::zeros(t.shape()); }

}  // namespace

TEST(PatchEmbed, TokenCounts) {
  ParamStore store;
  Rng prng(1);
  auto e = PatchEmbed::create(store, "embed", 3, 8, 4, prng);
  EXPECT_EQ(patch_embed(Tensor::zeros({1, 3, 224, 224}), e).shape(), (Shape{1, 3136, 8}));
  EXPECT_EQ(patch_embed(Tensor::zeros({2, 3, 56, 56}), e).shape(), (Shape{2, 196, 8}));
  EXPECT_THROW(patch_embed(Tensor::zeros({1, 3, 30, 32}), e), DimensionError);
}

TEST(PatchEmbed, GradientChecks) {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    ParamStore store;
    Rng prng(seed);
    auto e = PatchEmbed::create(store, "embed", 3, 6, 2, prng);
    std::mt19937_64 rng(seed);
    Tensor img = random_tensor({1, 3, 4, 6}, rng);
    std::vector<std::pair<std::string, Tensor>> probes{{"img", img}};
    for (const auto& [name, t] : store.named()) probes.emplace_back(name, t);
    expect_gradients([&] { return probe_loss(patch_embed(img, e)); }, probes, 1e-5);
  }
}

TEST(WindowPartition, CountsAndRoundtrip) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({2, 56, 56, 3}, rng, 1.0, false);
  Tensor w = window_partition(x, 7);
  EXPECT_EQ(w.shape(), (Shape{2 * 64, 49, 3}));
  Tensor back = window_reverse(w, 7, 56, 56);
  EXPECT_EQ(max_abs_diff(back, x), 0.0);
  for (auto [h, ww, m] : std::vector<std::tuple<int, int, int>>{{6, 9, 3}, {4, 4, 1}, {8, 4, 4}, {5, 5, 5}}) {
    Tensor y = random_tensor({3, h, ww, 2}, rng, 1.0, false);
    EXPECT_EQ(max_abs_diff(window_reverse(window_partition(y, m), m, h, ww), y), 0.0);
  }
  EXPECT_THROW(window_partition(x, 5), DimensionError);
}

TEST(WindowPartition, SingleWindowIsReshape) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 7, 7, 4}, rng, 1.0, false);
  EXPECT_EQ(max_abs_diff(window_partition(x, 7), reshape(x, {2, 49, 4})), 0.0);
}

TEST(ShiftMask, ZeroShiftIsAllZero) {
  Tensor m = shift_mask(14, 14, 7, 0);
  EXPECT_EQ(m.shape(), (Shape{4, 49, 49}));
  for (double v : m.values()) EXPECT_EQ(v, 0.0);
}

TEST(ShiftMask, MatchesRegionEnumerator) {
  for (auto [H, W, M] : std::vector<std::tuple<int, int, int>>{{8, 8, 4}, {14, 14, 7}, {12, 6, 3}, {28, 28, 7}}) {
    const int s = M / 2;
    Tensor m = shift_mask(H, W, M, s);
    const int64_t N = M * M;
    for (int64_t wy = 0; wy < H / M; ++wy)
      for (int64_t wx = 0; wx < W / M; ++wx) {
        auto ids = oracle_regions(H, W, M, s, wy, wx);
        const int64_t w = wy * (W / M) + wx;
        for (int64_t i = 0; i < N; ++i)
          for (int64_t j = 0; j < N; ++j) {
            EXPECT_EQ(m.at({w, i, j}), ids[i] == ids[j] ? 0.0 : kMaskValue);
          }
      }
  }
}

TEST(ShiftMask, CornerWindowBlocksTwelveOfSixteenClasses) {
  const int M = 4;
  Tensor m = shift_mask(2 * M, 2 * M, M, M / 2);
  auto ids = oracle_regions(2 * M, 2 * M, M, M / 2, 1, 1);
  std::set<int> regions(ids.begin(), ids.end());
  EXPECT_EQ(regions.size(), 4u);
  std::set<std::pair<int, int>> blocked;
  std::set<std::pair<int, int>> classes;
  for (int i = 0; i < M * M; ++i)
    for (int j = 0; j < M * M; ++j) {
      classes.insert({ids[i], ids[j]});
      if (m.at({3, i, j}) == kMaskValue) blocked.insert({ids[i], ids[j]});
    }
  EXPECT_EQ(classes.size(), 16u);
  EXPECT_EQ(blocked.size(), 12u);
}

TEST(SwinBlock, MaskedPairsGetNegligibleWeight) {
  ParamStore store;
  Rng prng(4);
  auto p = SwinBlockParams::create(store, "blk", 8, 2, 4, 4.0, prng);
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 8, 8, 8}, rng, 2.0, false);
  nn::AttentionProbe probe;
  swin_block(x, {4, 2}, p, &probe);
  Tensor mask = shift_mask(8, 8, 4, 2);
  const int64_t nW = 4;
  const int64_t N = 16;
  int64_t masked = 0;
  for (int64_t b = 0; b < 2 * nW; ++b)
    for (int64_t h = 0; h < 2; ++h)
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < N; ++j)
          if (mask.at({b % nW, i, j}) != 0.0) {
            ++masked;
            EXPECT_LT(probe.weights.at({b, h, i, j}), 1e-8);
          }
  EXPECT_GT(masked, 0);
}

TEST(SwinBlock, ZeroShiftEqualsPlainWindowAttention) {
  ParamStore store;
  Rng prng(5);
  auto p = SwinBlockParams::create(store, "blk", 8, 2, 3, 2.0, prng);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 6, 9, 8}, rng, 1.0, false);
  Tensor y = swin_block(x, {3, 0}, p);

  // Reference: each window extracted with explicit loops and attended alone.
  Tensor h = p.norm1(x);
  Tensor bias = relative_position_bias(p.bias_table, 3, 3);
  std::vector<double> attn_out(x.numel());
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t wy = 0; wy < 2; ++wy)
      for (int64_t wx = 0; wx < 3; ++wx) {
        std::vector<double> tok;
        for (int64_t i = 0; i < 3; ++i)
          for (int64_t j = 0; j < 3; ++j)
            for (int64_t d = 0; d < 8; ++d) tok.push_back(h.at({b, wy * 3 + i, wx * 3 + j, d}));
        Tensor out = nn::mha_core(Tensor({1, 9, 8}, tok), p.attn, bias);
        for (int64_t i = 0; i < 3; ++i)
          for (int64_t j = 0; j < 3; ++j)
            for (int64_t d = 0; d < 8; ++d)
              attn_out[((b * 6 + wy * 3 + i) * 9 + wx * 3 + j) * 8 + d] = out.at({0, i * 3 + j, d});
      }
  Tensor r = x + Tensor(x.shape(), attn_out);
  r = r + p.mlp(p.norm2(r));
  EXPECT_LE(max_abs_diff(y, r), 1e-12);
}

TEST(SwinBlock, ZeroOutputProjectionsGiveIdentity) {
  ParamStore store;
  Rng prng(6);
  auto p = SwinBlockParams::create(store, "blk", 8, 2, 4, 4.0, prng, true);
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({1, 8, 8, 8}, rng, 1.0, false);
  EXPECT_EQ(max_abs_diff(swin_block(x, {4, 2}, p), x), 0.0);
  EXPECT_EQ(max_abs_diff(swin_block(x, {4, 0}, p), x), 0.0);
}

TEST(SwinBlock, PermutationEquivariantWithoutBias) {
  ParamStore store;
  Rng prng(7);
  auto p = SwinBlockParams::create(store, "blk", 6, 2, 4, 2.0, prng);
  p.bias_table = zero_table_like(p.bias_table);
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({1, 4, 4, 6}, rng, 1.0, false);
  std::vector<int64_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor tokens = reshape(x, {16, 6});
  Tensor px = reshape(index_select(tokens, 0, perm), {1, 4, 4, 6});
  Tensor y = reshape(swin_block(x, {4, 0}, p), {16, 6});
  Tensor py = reshape(swin_block(px, {4, 0}, p), {16, 6});
  EXPECT_LT(max_abs_diff(index_select(y, 0, perm), py), 1e-12);
}

TEST(SwinBlock, GradientChecks) {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    ParamStore store;
    Rng prng(seed);
    auto p = SwinBlockParams::create(store, "blk", 4, 2, 2, 2.0, prng);
    std::mt19937_64 rng(20 + seed);
    Tensor x = random_tensor({1, 4, 4, 4}, rng);
    std::vector<std::pair<std::string, Tensor>> probes{{"x", x}};
    for (const auto& [name, t] : store.named()) probes.emplace_back(name, t);
    expect_gradients([&] { return probe_loss(swin_block(x, {2, 1}, p)); }, probes, 1e-4);
  }
}

TEST(PatchMerging, ShapesAndConstancy) {
  ParamStore store;
  Rng prng(8);
  auto p = PatchMergingParams::create(store, "merge", 3, prng);
  EXPECT_EQ(patch_merging(Tensor::zeros({1, 56, 56, 3}), p).shape(), (Shape{1, 28, 28, 6}));
  Tensor y = patch_merging(Tensor::full({2, 4, 6, 3}, 0.7), p);
  for (int64_t i = 1; i < y.numel() / 6; ++i)
    for (int64_t d = 0; d < 6; ++d) EXPECT_EQ(y.values()[i * 6 + d], y.values()[d]);
  EXPECT_THROW(patch_merging(Tensor::zeros({1, 7, 7, 3}), p), DimensionError);
  EXPECT_EQ(patch_merging(Tensor::zeros({1, 7, 7, 3}), p, true).shape(), (Shape{1, 4, 4, 6}));
}

TEST(PatchMerging, GradientChecks) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    ParamStore store;
    Rng prng(seed);
    auto p = PatchMergingParams::create(store, "merge", 3, prng);
    std::mt19937_64 rng(30 + seed);
    Tensor x = random_tensor({2, 4, 6, 3}, rng);
    Tensor xo = random_tensor({1, 3, 3, 3}, rng);
    std::vector<std::pair<std::string, Tensor>> probes{{"x", x}, {"xo", xo}};
    for (const auto& [name, t] : store.named()) probes.emplace_back(name, t);
    expect_gradients([&] { return probe_loss(patch_merging(x, p)) + probe_loss(patch_merging(xo, p, true), 3); },
                     probes, 1e-5);
  }
}

TEST(SwinBackbone, StageSizesAt224) {
  ParamStore store;
  Rng prng(9);
  SwinConfig cfg;
  cfg.width = 8;
  cfg.depths = {1, 1, 1, 1};
  auto bb = SwinBackbone::create(store, "swin", cfg, prng);
  NoGradScope no_grad;
  auto maps = bb.forward(Tensor::zeros({1, 3, 224, 224}));
  ASSERT_EQ(maps.size(), 4u);
  const int64_t sizes[4] = {56, 28, 14, 7};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(maps[i].shape(), (Shape{1, 8 << i, sizes[i], sizes[i]}));
}

TEST(SwinBackbone, DeskConfigAt112WithPadding) {
  ParamStore store;
  Rng prng(10);
  SwinConfig cfg;
  cfg.pad_odd = true;
  auto bb = SwinBackbone::create(store, "swin", cfg, prng);
  NoGradScope no_grad;
  auto maps = bb.forward(Tensor::zeros({1, 3, 112, 112}));
  const int64_t sizes[4] = {28, 14, 7, 4};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(maps[i].shape(), (Shape{1, 32 << i, sizes[i], sizes[i]}));
  cfg.pad_odd = false;
  ParamStore store2;
  auto strict = SwinBackbone::create(store2, "swin", cfg, prng);
  EXPECT_THROW(strict.forward(Tensor::zeros({1, 3, 112, 112})), DimensionError);
}

TEST(SwinBackbone, DeterministicForFixedSeed) {
  auto run = [] {
    ParamStore store;
    Rng prng(11);
    SwinConfig cfg;
    cfg.width = 8;
    cfg.pad_odd = true;
    auto bb = SwinBackbone::create(store, "swin", cfg, prng);
    std::mt19937_64 rng(11);
    return bb.forward(random_tensor({1, 3, 112, 112}, rng, 1.0, false));
  };
  auto a = run();
  auto b = run();
  for (int i = 0; i < 4; ++i) EXPECT_EQ(max_abs_diff(a[i], b[i]), 0.0);
}

TEST(SwinBackbone, DeskConfigForwardBackwardUnderTenSeconds) {
  ParamStore store;
  Rng prng(12);
  SwinConfig cfg;  // width 32, depths 2/2/2/2, window 7
  auto bb = SwinBackbone::create(store, "swin", cfg, prng);
  std::mt19937_64 rng(12);
  Tensor img = random_tensor({1, 3, 224, 224}, rng, 1.0, false);
  const auto start = std::chrono::steady_clock::now();
  Tape tape;
  {
    TapeScope scope(tape);
    auto maps = bb.forward(img);
    Tensor loss = Tensor::scalar(0.0);
    for (const auto& m : maps) loss = loss + mean(square(m));
    tape.backward(loss);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  RecordProperty("seconds", std::to_string(seconds));
  std::printf("desk swin forward+backward at 224: %.3f s\n", seconds);
  EXPECT_LT(seconds, 10.0);
}
