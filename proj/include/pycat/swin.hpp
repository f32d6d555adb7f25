#pragma once

#include <vector>

#include "pycat/nn.hpp"

namespace pycat {

constexpr double kMaskValue = -1e9;

struct WindowSpec {
  int window = 7;
  int shift = 0;
};

/// Window and shift for block `block_index` of a stage at `resolution`: when
/// the stage fits in one window the window shrinks to it and shifting stops.
WindowSpec stage_window(int64_t resolution, int window, int block_index);

struct PatchEmbed {
  nn::Conv2d proj;  // kernel = stride = patch
  nn::LayerNorm norm;
  int patch = 4;

  static PatchEmbed create(ParamStore& store, const std::string& name, int64_t in_channels, int64_t width,
                           int patch, Rng& rng);
};

/// image [B,C,H,W] -> tokens [B, (H/p)(W/p), width].
Tensor patch_embed(const Tensor& image, const PatchEmbed& p);

/// x [B,H,W,D] -> [B * (H/M)(W/M), M*M, D], windows in row-major order per image.
Tensor window_partition(const Tensor& x, int window);
/// Inverse of window_partition for a [B,H,W,D] grid.
Tensor window_reverse(const Tensor& windows, int window, int64_t height, int64_t width);
/// Cyclic roll of x [B,H,W,D] by (dy, dx) along H and W.
Tensor roll2d(const Tensor& x, int64_t dy, int64_t dx);

/// Additive attention mask [nW, M*M, M*M] for a grid rolled by -shift: 0 where
/// both tokens come from the same pre-shift region, kMaskValue otherwise.
Tensor shift_mask(int64_t height, int64_t width, int window, int shift);

/// Table [heads, (2T-1)^2] for table window T, gathered into [heads, M*M, M*M]
/// for window M <= T.
Tensor relative_position_bias(const Tensor& table, int table_window, int window);

struct SwinBlockParams {
  nn::LayerNorm norm1;
  nn::MHAParams attn;
  Tensor bias_table;  // [heads, (2M-1)^2]
  nn::LayerNorm norm2;
  nn::Mlp mlp;
  int table_window = 7;

  // `zero_out` zero-initializes both residual branch outputs.
  static SwinBlockParams create(ParamStore& store, const std::string& name, int64_t width, int heads, int window,
                                double mlp_ratio, Rng& rng, bool zero_out = false);
};

/// x [B,H,W,D] -> [B,H,W,D]: LN, (S)W-MSA with relative bias, residual, LN,
/// MLP, residual.
Tensor swin_block(const Tensor& x, const WindowSpec& spec, const SwinBlockParams& p,
                  nn::AttentionProbe* probe = nullptr);

struct PatchMergingParams {
  nn::LayerNorm norm;   // over 4D
  nn::Linear reduction;  // 4D -> 2D, no bias

  static PatchMergingParams create(ParamStore& store, const std::string& name, int64_t width, Rng& rng);
};

/// x [B,H,W,D] -> [B,ceil(H/2),ceil(W/2),2D]. Odd extents are zero padded
/// only when `pad_odd` is set; otherwise they are a dimension error.
Tensor patch_merging(const Tensor& x, const PatchMergingParams& p, bool pad_odd = false);

struct SwinConfig {
  int64_t in_channels = 3;
  int patch = 4;
  int64_t width = 32;
  std::vector<int> depths{2, 2, 2, 2};
  std::vector<int> heads{1, 2, 4, 8};
  int window = 7;
  double mlp_ratio = 4.0;
  bool pad_odd = false;
};

class SwinBackbone {
 public:
  static SwinBackbone create(ParamStore& store, const std::string& name, const SwinConfig& cfg, Rng& rng);

  /// Stage maps [B, D*2^i, H/(p*2^i), W/(p*2^i)] for i = 0..3.
  std::vector<Tensor> forward(const Tensor& image) const;
  const SwinConfig& config() const { return cfg_; }
  std::vector<int64_t> stage_widths() const;

 private:
  SwinConfig cfg_;
  PatchEmbed embed_;
  std::vector<std::vector<SwinBlockParams>> blocks_;
  std::vector<PatchMergingParams> merges_;
  std::vector<nn::LayerNorm> norms_;
};

// [B,H,W,D] <-> [B,D,H,W]
Tensor channels_last(const Tensor& x);
Tensor channels_first(const Tensor& x);

}  // namespace pycat
