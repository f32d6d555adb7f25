#include <cmath>

#include "pycat/nn.hpp"
#include "test_util.hpp"

using namespace pycat;
using namespace pycat::nn;
using pycat::testing::expect_gradients;
using pycat::testing::max_abs_diff;
using pycat::testing::probe_loss;
using pycat::testing::random_tensor;

namespace {

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

}  // namespace

TEST(Conv2d, IdentityPointwiseKernel) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({2, 3, 5, 4}, rng, 1.0, false);
  std::vector<double> k(9, 0.0);
  k[0] = k[4] = k[8] = 1.0;
  Tensor y = conv2d(x, Tensor({3, 3, 1, 1}, k), Tensor(), {});
  EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(Conv2d, DilatedKernelExtent) {
  Conv2dOptions o{1, 0, 2};
  EXPECT_EQ(conv_output_size(9, 3, o), 5);  // effective extent 5
  Tensor y = conv2d(Tensor::ones({1, 1, 5, 5}), Tensor::ones({1, 1, 3, 3}), Tensor(), o);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 9.0);
  EXPECT_THROW(conv2d(Tensor::ones({1, 1, 4, 4}), Tensor::ones({1, 1, 3, 3}), Tensor(), o), DimensionError);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(Tensor::ones({1, 2, 4, 4}), Tensor::ones({1, 3, 3, 3}), Tensor(), {}), DimensionError);
}

TEST(Conv2d, MatchesDirectSummation) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({2, 3, 7, 6}, rng, 1.0, false);
  Tensor w = random_tensor({4, 3, 3, 3}, rng, 1.0, false);
  Tensor b = random_tensor({4}, rng, 1.0, false);
  Conv2dOptions o{2, 2, 2};
  Tensor y = conv2d(x, w, b, o);
  const int64_t oh = conv_output_size(7, 3, o);
  const int64_t ow = conv_output_size(6, 3, o);
  ASSERT_EQ(y.shape(), (Shape{2, 4, oh, ow}));
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t co = 0; co < 4; ++co)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double s = b.values()[co];
          for (int64_t ci = 0; ci < 3; ++ci)
            for (int64_t ki = 0; ki < 3; ++ki)
              for (int64_t kj = 0; kj < 3; ++kj) {
                const int64_t yi = i * 2 - 2 + ki * 2;
                const int64_t xj = j * 2 - 2 + kj * 2;
                if (yi < 0 || yi >= 7 || xj < 0 || xj >= 6) continue;
                s += w.at({co, ci, ki, kj}) * x.at({n, ci, yi, xj});
              }
          EXPECT_NEAR(y.at({n, co, i, j}), s, 1e-12);
        }
}

TEST(Conv2d, GradientChecks) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(10 + seed);
    Tensor x = random_tensor({2, 3, 6, 5}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor w1 = random_tensor({2, 3, 1, 1}, rng);
    Conv2dOptions o{static_cast<int>(1 + seed % 2), static_cast<int>(seed % 3), static_cast<int>(1 + seed % 2)};
    auto loss = [&] { return probe_loss(conv2d(x, w, b, o)) + probe_loss(conv2d(x, w1, Tensor(), {}), 3); };
    expect_gradients(loss, {{"x", x}, {"w", w}, {"b", b}, {"w1", w1}}, 1e-5);
  }
}

TEST(TransposedConv2d, DoublesSpatialSize) {
  std::mt19937_64 rng(3);
  Conv2dOptions o{2, 1, 1};
  Tensor x = random_tensor({1, 4, 7, 7}, rng, 1.0, false);
  Tensor w1 = random_tensor({4, 4, 4, 4}, rng, 1.0, false);
  Tensor y = transposed_conv2d(x, w1, Tensor(), o);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 14, 14}));
  y = transposed_conv2d(transposed_conv2d(y, w1, Tensor(), o), w1, Tensor(), o);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 56, 56}));
}

TEST(TransposedConv2d, AdjointOfConv) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(20 + seed);
    Conv2dOptions o{2, 1, 1};
    Tensor w = random_tensor({3, 5, 4, 4}, rng, 1.0, false);  // conv: 5 -> 3; transposed: 3 -> 5
    Tensor x = random_tensor({2, 5, 14, 14}, rng, 1.0, false);
    Tensor y = random_tensor({2, 3, 7, 7}, rng, 1.0, false);
    const double lhs = inner(conv2d(x, w, Tensor(), o), y);
    const double rhs = inner(x, transposed_conv2d(y, w, Tensor(), o));
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(TransposedConv2d, GradientChecks) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(30 + seed);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 4, 4}, rng);
    Tensor b = random_tensor({2}, rng);
    expect_gradients([&] { return probe_loss(transposed_conv2d(x, w, b, {2, 1, 1})); },
                     {{"x", x}, {"w", w}, {"b", b}}, 1e-5);
  }
}

TEST(LayerNorm, ConstantSliceGivesBias) {
  Tensor b({4}, {1, 2, 3, 4});
  Tensor y = layer_norm(Tensor::full({2, 4}, 3.5), Tensor::ones({4}), b);
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t c = 0; c < 4; ++c) EXPECT_EQ(y.at({r, c}), b.values()[c]);
}

TEST(LayerNorm, StandardizesBeforeAffine) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({3, 5, 16}, rng, 4.0, false);
  for (int axis : {-1, 1}) {
    const int64_t n = x.size(axis);
    Tensor y = layer_norm(x, Tensor::ones({n}), Tensor::zeros({n}), axis);
    Tensor m = mean(y, axis);
    Tensor v = mean(square(y), axis);
    for (double e : m.values()) EXPECT_NEAR(e, 0.0, 1e-12);
    for (double e : v.values()) EXPECT_NEAR(e, 1.0, 1e-3);
  }
}

TEST(LayerNorm, GradientChecks) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(40 + seed);
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    Tensor g = random_tensor({3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor g2 = random_tensor({5}, rng);
    Tensor b2 = random_tensor({5}, rng);
    auto loss = [&] { return probe_loss(layer_norm(x, g, b, 1)) + probe_loss(layer_norm(x, g2, b2), 5); };
    expect_gradients(loss, {{"x", x}, {"g", g}, {"b", b}, {"g2", g2}, {"b2", b2}}, 1e-5);
  }
}

TEST(GlobalAvgPool, ShapeAndValues) {
  EXPECT_EQ(global_avg_pool(Tensor::zeros({1, 2048, 7, 7})).shape(), (Shape{1, 2048}));
  Tensor c = global_avg_pool(Tensor::full({2, 3, 4, 5}, 1.25));
  for (double v : c.values()) EXPECT_EQ(v, 1.25);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 3, 4, 5}, rng, 1.0, false);
  Tensor p = global_avg_pool(x);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t ch = 0; ch < 3; ++ch) {
      double s = 0.0;
      for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 5; ++j) s += x.at({b, ch, i, j});
      EXPECT_NEAR(p.at({b, ch}), s / 20.0, 1e-14);
    }
}

TEST(BilinearResize, ConstantStaysConstant) {
  for (auto [h, w] : std::vector<std::pair<int64_t, int64_t>>{{1, 1}, {3, 9}, {14, 14}, {20, 7}}) {
    Tensor y = bilinear_resize(Tensor::full({1, 2, 7, 5}, -2.5), h, w);
    EXPECT_EQ(y.shape(), (Shape{1, 2, h, w}));
    for (double v : y.values()) EXPECT_NEAR(v, -2.5, 1e-14);
  }
}

TEST(BilinearResize, UpsampledRampStaysLinearInInterior) {
  std::vector<double> ramp(8 * 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) ramp[i * 8 + j] = 0.5 * i + 2.0 * j;
  Tensor y = bilinear_resize(Tensor({1, 1, 8, 8}, ramp), 16, 16);
  // Half-pixel centers: output pixel o samples source coordinate (o + 0.5) / 2 - 0.5.
  for (int oi = 1; oi < 15; ++oi)
    for (int oj = 1; oj < 15; ++oj) {
      const double si = (oi + 0.5) / 2.0 - 0.5;
      const double sj = (oj + 0.5) / 2.0 - 0.5;
      EXPECT_NEAR(y.at({0, 0, oi, oj}), 0.5 * si + 2.0 * sj, 1e-12);
    }
}

TEST(BilinearResize, GradientChecks) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(50 + seed);
    Tensor x = random_tensor({2, 2, 5, 4}, rng);
    expect_gradients([&] { return probe_loss(bilinear_resize(x, 9, 11)) + probe_loss(bilinear_resize(x, 3, 2), 4); },
                     {{"x", x}}, 1e-5);
  }
}

TEST(GridSample, CornerPointHitsCornerTexel) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({1, 3, 4, 5}, rng, 1.0, false);
  Tensor y = grid_sample_bilinear(x, Tensor({1, 2, 2}, {-1, -1, 1, 1}));
  ASSERT_EQ(y.shape(), (Shape{1, 3, 2}));
  for (int64_t c = 0; c < 3; ++c) {
    EXPECT_EQ(y.at({0, c, 0}), x.at({0, c, 0, 0}));
    EXPECT_EQ(y.at({0, c, 1}), x.at({0, c, 3, 4}));
  }
}

TEST(GridSample, ConstantMapAnyPoints) {
  std::mt19937_64 rng(7);
  Tensor pts = random_tensor({2, 6, 2}, rng, 1.5, false);
  Tensor y = grid_sample_bilinear(Tensor::full({2, 3, 4, 4}, 0.75), pts);
  for (double v : y.values()) EXPECT_NEAR(v, 0.75, 1e-15);
}

TEST(GridSample, GradientChecks) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(60 + seed);
    Tensor x = random_tensor({2, 3, 6, 7}, rng);
    Tensor pts = random_tensor({2, 5, 2}, rng, 0.5);
    // Keep probes away from texel centers where the interpolant has kinks.
    for (double& v : pts.mutable_values()) v = std::clamp(v, -0.9, 0.9);
    for (auto& v : pts.mutable_values()) {
      const double pix = ((v + 1.0) * 6.0 - 1.0) * 0.5;
      if (std::abs(pix - std::round(pix)) < 1e-3) v += 0.01;
    }
    expect_gradients([&] { return probe_loss(grid_sample_bilinear(x, pts)); }, {{"x", x}, {"pts", pts}}, 1e-4);
  }
}

TEST(Mha, SingleTokenIsValueThenOutputProjection) {
  std::mt19937_64 rng(8);
  ParamStore store;
  Rng prng(8);
  MHAParams p = create_mha(store, "attn", 8, 2, prng);
  Tensor x = random_tensor({3, 1, 8}, rng, 1.0, false);
  Tensor y = mha_core(x, p);
  Tensor v = narrow(linear(x, p.qkv_weight, p.qkv_bias), 2, 16, 8);
  Tensor expected = linear(v, p.out_weight, p.out_bias);
  EXPECT_LT(max_abs_diff(y, expected), 1e-12);
}

TEST(Mha, FullyMaskedRowAttendsToSelf) {
  std::mt19937_64 rng(9);
  ParamStore store;
  Rng prng(9);
  MHAParams p = create_mha(store, "attn", 6, 3, prng);
  const int64_t n = 5;
  std::vector<double> mask(n * n, 0.0);
  for (int64_t j = 0; j < n; ++j)
    if (j != 2) mask[2 * n + j] = -1e9;
  Tensor x = random_tensor({2, n, 6}, rng, 1.0, false);
  AttentionProbe probe;
  Tensor y = mha_core(x, p, Tensor(), Tensor({n, n}, mask), &probe);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t h = 0; h < 3; ++h) {
      EXPECT_NEAR(probe.weights.at({b, h, 2, 2}), 1.0, 1e-12);
      for (int64_t j = 0; j < n; ++j)
        if (j != 2) EXPECT_LT(probe.weights.at({b, h, 2, j}), 1e-8);
    }
  // Row 2 output equals the direct value-then-projection of token 2.
  Tensor v = narrow(linear(narrow(x, 1, 2, 1), p.qkv_weight, p.qkv_bias), 2, 12, 6);
  Tensor expected = linear(v, p.out_weight, p.out_bias);
  EXPECT_LT(max_abs_diff(narrow(y, 1, 2, 1), expected), 1e-12);
}

TEST(Mha, AttentionRowsSumToOne) {
  std::mt19937_64 rng(10);
  ParamStore store;
  Rng prng(10);
  MHAParams p = create_mha(store, "attn", 8, 4, prng);
  AttentionProbe probe;
  mha_core(random_tensor({2, 7, 8}, rng, 2.0, false), p, random_tensor({4, 7, 7}, rng, 1.0, false), Tensor(), &probe);
  Tensor rows = sum(probe.weights, -1);
  for (double v : rows.values()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Mha, WidthMismatchThrows) {
  ParamStore store;
  Rng prng(11);
  MHAParams p = create_mha(store, "attn", 8, 2, prng);
  EXPECT_THROW(mha_core(Tensor::ones({1, 3, 6}), p), DimensionError);
  p.heads = 3;
  EXPECT_THROW(mha_core(Tensor::ones({1, 3, 8}), p), DimensionError);
}

TEST(Mha, GradientChecks) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(70 + seed);
    ParamStore store;
    Rng prng(seed);
    MHAParams p = create_mha(store, "attn", 8, 2, prng);
    Tensor x = random_tensor({4, 5, 8}, rng);
    Tensor bias = random_tensor({2, 5, 5}, rng);
    std::vector<double> m(2 * 25, 0.0);
    m[3] = m[27] = m[40] = -1e9;
    Tensor mask({2, 5, 5}, m);
    auto loss = [&] { return probe_loss(mha_core(x, p, bias, mask)); };
    std::vector<std::pair<std::string, Tensor>> probes{{"x", x}, {"bias", bias}};
    for (const auto& [name, t] : store.named()) probes.emplace_back(name, t);
    expect_gradients(loss, probes, 1e-5);
  }
}
