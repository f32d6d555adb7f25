#include "pycat/swin.hpp"

#include <cmath>

namespace pycat {

namespace {

using IndexPtr = std::shared_ptr<const std::vector<int64_t>>;

void check_grid(const Tensor& x, const char* what) {
  if (x.rank() != 4) throw DimensionError(std::string(what) + " expects [B,H,W,D], got " + shape_str(x.shape()));
}

}  // namespace

WindowSpec stage_window(int64_t resolution, int window, int block_index) {
  if (resolution <= window) return {static_cast<int>(resolution), 0};
  return {window, (block_index % 2 == 1) ? window / 2 : 0};
}

PatchEmbed PatchEmbed::create(ParamStore& store, const std::string& name, int64_t in_channels, int64_t width,
                              int patch, Rng& rng) {
  PatchEmbed e;
  e.patch = patch;
  e.proj = nn::Conv2d::create(store, name + ".proj", in_channels, width, patch, {patch, 0, 1}, rng);
  e.norm = nn::LayerNorm::create(store, name + ".norm", width);
  return e;
}

Tensor patch_embed(const Tensor& image, const PatchEmbed& p) {
  if (image.rank() != 4) throw DimensionError("patch_embed expects [B,C,H,W], got " + shape_str(image.shape()));
  if (image.size(2) % p.patch != 0 || image.size(3) % p.patch != 0) {
    throw DimensionError("patch size " + std::to_string(p.patch) + " does not divide image " +
                         shape_str(image.shape()));
  }
  Tensor y = channels_last(p.proj(image));  // [B,H',W',D]
  y = reshape(y, {y.size(0), y.size(1) * y.size(2), y.size(3)});
  return p.norm(y);
}

Tensor window_partition(const Tensor& x, int window) {
  check_grid(x, "window_partition");
  const int64_t B = x.size(0);
  const int64_t H = x.size(1);
  const int64_t W = x.size(2);
  const int64_t D = x.size(3);
  const int64_t M = window;
  if (M < 1 || H % M != 0 || W % M != 0) {
    throw DimensionError("window " + std::to_string(window) + " does not tile grid " + shape_str(x.shape()));
  }
  const int64_t nh = H / M;
  const int64_t nw = W / M;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(x.numel());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t wy = 0; wy < nh; ++wy)
      for (int64_t wx = 0; wx < nw; ++wx)
        for (int64_t iy = 0; iy < M; ++iy)
          for (int64_t ix = 0; ix < M; ++ix) {
            const int64_t src = ((b * H + wy * M + iy) * W + wx * M + ix) * D;
            for (int64_t d = 0; d < D; ++d) idx->push_back(src + d);
          }
  return gather(x, idx, {B * nh * nw, M * M, D});
}

Tensor window_reverse(const Tensor& windows, int window, int64_t height, int64_t width) {
  if (windows.rank() != 3) throw DimensionError("window_reverse expects [nW,N,D], got " + shape_str(windows.shape()));
  const int64_t M = window;
  if (M < 1 || height % M != 0 || width % M != 0 || windows.size(1) != M * M) {
    throw DimensionError("window_reverse: windows " + shape_str(windows.shape()) + " do not tile " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const int64_t nh = height / M;
  const int64_t nw = width / M;
  if (windows.size(0) % (nh * nw) != 0) throw DimensionError("window_reverse: window count mismatch");
  const int64_t B = windows.size(0) / (nh * nw);
  const int64_t D = windows.size(2);
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(windows.numel());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t y = 0; y < height; ++y)
      for (int64_t x = 0; x < width; ++x) {
        const int64_t w = (b * nh + y / M) * nw + x / M;
        const int64_t src = (w * M * M + (y % M) * M + x % M) * D;
        for (int64_t d = 0; d < D; ++d) idx->push_back(src + d);
      }
  return gather(windows, idx, {B, height, width, D});
}

Tensor roll2d(const Tensor& x, int64_t dy, int64_t dx) {
  check_grid(x, "roll2d");
  const int64_t B = x.size(0);
  const int64_t H = x.size(1);
  const int64_t W = x.size(2);
  const int64_t D = x.size(3);
  if ((dy % H) == 0 && (dx % W) == 0) return x;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(x.numel());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) {
        const int64_t sy = ((y - dy) % H + H) % H;
        const int64_t sx = ((xx - dx) % W + W) % W;
        const int64_t src = ((b * H + sy) * W + sx) * D;
        for (int64_t d = 0; d < D; ++d) idx->push_back(src + d);
      }
  return gather(x, idx, x.shape());
}

Tensor shift_mask(int64_t height, int64_t width, int window, int shift) {
  const int64_t M = window;
  if (M < 1 || height % M != 0 || width % M != 0) {
    throw DimensionError("shift_mask: window " + std::to_string(window) + " does not tile " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const int64_t nh = height / M;
  const int64_t nw = width / M;
  const int64_t N = M * M;
  std::vector<double> mask(nh * nw * N * N, 0.0);
  if (shift == 0) return Tensor({nh * nw, N, N}, std::move(mask));
  auto region = [&](int64_t p, int64_t extent) -> int {
    if (p < extent - M) return 0;
    if (p < extent - shift) return 1;
    return 2;
  };
  std::vector<int> ids(N);
  for (int64_t wy = 0; wy < nh; ++wy)
    for (int64_t wx = 0; wx < nw; ++wx) {
      for (int64_t i = 0; i < N; ++i) {
        ids[i] = region(wy * M + i / M, height) * 3 + region(wx * M + i % M, width);
      }
      double* m = mask.data() + (wy * nw + wx) * N * N;
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < N; ++j)
          if (ids[i] != ids[j]) m[i * N + j] = kMaskValue;
    }
  return Tensor({nh * nw, N, N}, std::move(mask));
}

Tensor relative_position_bias(const Tensor& table, int table_window, int window) {
  const int64_t T = table_window;
  const int64_t L = (2 * T - 1) * (2 * T - 1);
  if (table.rank() != 2 || table.size(1) != L) {
    throw DimensionError("relative bias table " + shape_str(table.shape()) + " for window " +
                         std::to_string(table_window));
  }
  if (window > table_window) throw DimensionError("relative bias: window exceeds table window");
  const int64_t heads = table.size(0);
  const int64_t M = window;
  const int64_t N = M * M;
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(heads * N * N);
  for (int64_t h = 0; h < heads; ++h)
    for (int64_t i = 0; i < N; ++i)
      for (int64_t j = 0; j < N; ++j) {
        const int64_t dy = i / M - j / M + T - 1;
        const int64_t dx = i % M - j % M + T - 1;
        idx->push_back(h * L + dy * (2 * T - 1) + dx);
      }
  return gather(table, idx, {heads, N, N});
}

SwinBlockParams SwinBlockParams::create(ParamStore& store, const std::string& name, int64_t width, int heads,
                                        int window, double mlp_ratio, Rng& rng, bool zero_out) {
  SwinBlockParams p;
  p.table_window = window;
  p.norm1 = nn::LayerNorm::create(store, name + ".norm1", width);
  p.attn = nn::create_mha(store, name + ".attn", width, heads, rng, zero_out);
  p.bias_table = store.create(name + ".attn.relative_bias", {heads, (2 * window - 1) * (2 * window - 1)},
                              InitSpec::normal(0.02), rng);
  p.norm2 = nn::LayerNorm::create(store, name + ".norm2", width);
  p.mlp = nn::Mlp::create(store, name + ".mlp", width, static_cast<int64_t>(std::lround(width * mlp_ratio)), rng,
                          zero_out);
  return p;
}

Tensor swin_block(const Tensor& x, const WindowSpec& spec, const SwinBlockParams& p, nn::AttentionProbe* probe) {
  check_grid(x, "swin_block");
  const int64_t H = x.size(1);
  const int64_t W = x.size(2);
  const int64_t D = x.size(3);
  const int M = spec.window;
  if (M < 1 || H % M != 0 || W % M != 0) {
    throw DimensionError("swin_block: window " + std::to_string(M) + " does not tile grid " + shape_str(x.shape()));
  }
  if (spec.shift < 0 || spec.shift >= M) throw DimensionError("swin_block: shift must lie in [0, window)");
  Tensor h = p.norm1(x);
  if (spec.shift > 0) h = roll2d(h, -spec.shift, -spec.shift);
  Tensor windows = window_partition(h, M);
  Tensor bias = relative_position_bias(p.bias_table, p.table_window, M);
  Tensor mask = spec.shift > 0 ? shift_mask(H, W, M, spec.shift) : Tensor();
  Tensor attended = nn::mha_core(windows, p.attn, bias, mask, probe);
  h = window_reverse(reshape(attended, {-1, static_cast<int64_t>(M) * M, D}), M, H, W);
  if (spec.shift > 0) h = roll2d(h, spec.shift, spec.shift);
  Tensor y = x + h;
  return y + p.mlp(p.norm2(y));
}

PatchMergingParams PatchMergingParams::create(ParamStore& store, const std::string& name, int64_t width, Rng& rng) {
  PatchMergingParams p;
  p.norm = nn::LayerNorm::create(store, name + ".norm", 4 * width);
  p.reduction = nn::Linear::create(store, name + ".reduction", 4 * width, 2 * width, rng, false, false);
  return p;
}

Tensor patch_merging(const Tensor& x, const PatchMergingParams& p, bool pad_odd) {
  check_grid(x, "patch_merging");
  Tensor g = x;
  if (g.size(1) % 2 != 0 || g.size(2) % 2 != 0) {
    if (!pad_odd) throw DimensionError("patch_merging needs even extents, got " + shape_str(x.shape()));
    if (g.size(1) % 2 != 0) g = concat({g, Tensor::zeros({g.size(0), 1, g.size(2), g.size(3)})}, 1);
    if (g.size(2) % 2 != 0) g = concat({g, Tensor::zeros({g.size(0), g.size(1), 1, g.size(3)})}, 2);
  }
  const int64_t B = g.size(0);
  const int64_t H = g.size(1);
  const int64_t W = g.size(2);
  const int64_t D = g.size(3);
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(g.numel());
  // Neighbourhood order (0,0), (1,0), (0,1), (1,1) as (dy, dx).
  const int64_t offsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < H / 2; ++i)
      for (int64_t j = 0; j < W / 2; ++j)
        for (const auto& o : offsets) {
          const int64_t src = ((b * H + 2 * i + o[0]) * W + 2 * j + o[1]) * D;
          for (int64_t d = 0; d < D; ++d) idx->push_back(src + d);
        }
  Tensor merged = gather(g, idx, {B, H / 2, W / 2, 4 * D});
  return p.reduction(p.norm(merged));
}

SwinBackbone SwinBackbone::create(ParamStore& store, const std::string& name, const SwinConfig& cfg, Rng& rng) {
  if (cfg.depths.size() != 4 || cfg.heads.size() != 4) {
    throw ContractError("swin backbone needs exactly four stages");
  }
  SwinBackbone s;
  s.cfg_ = cfg;
  s.embed_ = PatchEmbed::create(store, name + ".embed", cfg.in_channels, cfg.width, cfg.patch, rng);
  int64_t width = cfg.width;
  for (std::size_t st = 0; st < 4; ++st) {
    if (st > 0) {
      s.merges_.push_back(PatchMergingParams::create(store, name + ".merge" + std::to_string(st), width, rng));
      width *= 2;
    }
    std::vector<SwinBlockParams> blocks;
    for (int b = 0; b < cfg.depths[st]; ++b) {
      blocks.push_back(SwinBlockParams::create(store, name + ".stage" + std::to_string(st) + ".block" + std::to_string(b),
                                               width, cfg.heads[st], cfg.window, cfg.mlp_ratio, rng));
    }
    s.blocks_.push_back(std::move(blocks));
    s.norms_.push_back(nn::LayerNorm::create(store, name + ".norm" + std::to_string(st), width));
  }
  return s;
}

std::vector<int64_t> SwinBackbone::stage_widths() const {
  return {cfg_.width, 2 * cfg_.width, 4 * cfg_.width, 8 * cfg_.width};
}

std::vector<Tensor> SwinBackbone::forward(const Tensor& image) const {
  if (image.rank() != 4 || image.size(1) != cfg_.in_channels) {
    throw DimensionError("swin backbone expects [B," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                         shape_str(image.shape()));
  }
  if (image.size(2) != image.size(3)) throw DimensionError("swin backbone expects square images");
  const int64_t B = image.size(0);
  const int64_t side = image.size(2) / cfg_.patch;
  Tensor x = reshape(patch_embed(image, embed_), {B, side, side, cfg_.width});
  std::vector<Tensor> outputs;
  for (std::size_t st = 0; st < 4; ++st) {
    if (st > 0) x = patch_merging(x, merges_[st - 1], cfg_.pad_odd);
    for (std::size_t b = 0; b < blocks_[st].size(); ++b) {
      x = swin_block(x, stage_window(x.size(1), cfg_.window, static_cast<int>(b)), blocks_[st][b]);
    }
    outputs.push_back(channels_first(norms_[st](x)));
  }
  return outputs;
}

Tensor channels_last(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("channels_last expects rank 4, got " + shape_str(x.shape()));
  return permute(x, {0, 2, 3, 1});
}

Tensor channels_first(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("channels_first expects rank 4, got " + shape_str(x.shape()));
  return permute(x, {0, 3, 1, 2});
}

}  // namespace pycat
