#pragma once

#include <vector>

#include "pycat/fusion.hpp"
#include "pycat/nn.hpp"

namespace pycat {

// Pre-norm transformer encoder block.
struct TransformerBlockParams {
  nn::LayerNorm norm1;
  nn::MHAParams attn;
  nn::LayerNorm norm2;
  nn::Mlp mlp;

  static TransformerBlockParams create(ParamStore& store, const std::string& name, int64_t width, int heads,
                                       double mlp_ratio, Rng& rng, bool zero_out = false);
};

Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p, const Tensor& mask = {},
                         nn::AttentionProbe* probe = nullptr);

struct TemporalConfig {
  int64_t width = 64;  // token width D_t
  int heads = 4;
  int spatial_depth = 2;
  int temporal_depth = 2;
  int max_frames = 9;
  double mlp_ratio = 2.0;
};

struct TemporalParams {
  TemporalConfig cfg;
  std::vector<nn::Linear> level_proj;  // per pyramid level, C_f -> D_t
  nn::Linear global_proj;              // C_g -> D_t
  Tensor spatial_pos;                  // [4, D_t]
  std::vector<TransformerBlockParams> spatial;
  Tensor temporal_pos;  // [T_max, D_t]
  std::vector<TransformerBlockParams> temporal;
  nn::Linear output;  // D_t -> C_g

  // `zero_output` zero-initializes the final projection so fusion starts as a bypass.
  static TemporalParams create(ParamStore& store, const std::string& name, int64_t level_width, int64_t global_width,
                               const TemporalConfig& cfg, Rng& rng, bool zero_output = true);
};

/// Causal window of T pyramids, oldest first, current frame last. `valid`
/// holds B*T flags (row-major per sample); an empty vector marks all valid.
struct FrameWindow {
  std::vector<FeaturePyramid> frames;
  std::vector<uint8_t> valid;
};

/// Pooled level tokens plus the global token, [B, 4, D_t].
Tensor frame_tokens(const FeaturePyramid& pyramid, const TemporalParams& p);

/// tokens [B,N,D_t] -> [B,N,D_t]: spatial positions then spatial blocks.
Tensor spatial_encode(const Tensor& tokens, const TemporalParams& p);

/// Per-frame embeddings [B,T,D_t] with validity flags -> [B,T,D_t]. Invalid
/// frames are masked as keys. Throws ContractError for a window whose
/// current frame is invalid.
Tensor temporal_encode(const Tensor& embeddings, const std::vector<uint8_t>& valid, const TemporalParams& p,
                       std::vector<nn::AttentionProbe>* probes = nullptr);

/// Fuses the window into the current frame's global vector; spatial levels
/// of the current frame pass through unchanged.
FeaturePyramid temporal_fuse(const FrameWindow& window, const TemporalParams& p);

}  // namespace pycat
