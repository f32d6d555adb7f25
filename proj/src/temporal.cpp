#include "pycat/temporal.hpp"

#include <cmath>

#include "pycat/swin.hpp"

namespace pycat {

TransformerBlockParams TransformerBlockParams::create(ParamStore& store, const std::string& name, int64_t width,
                                                      int heads, double mlp_ratio, Rng& rng, bool zero_out) {
  TransformerBlockParams p;
  p.norm1 = nn::LayerNorm::create(store, name + ".norm1", width);
  p.attn = nn::create_mha(store, name + ".attn", width, heads, rng, zero_out);
  p.norm2 = nn::LayerNorm::create(store, name + ".norm2", width);
  p.mlp = nn::Mlp::create(store, name + ".mlp", width, static_cast<int64_t>(std::lround(width * mlp_ratio)), rng,
                          zero_out);
  return p;
}

Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p, const Tensor& mask,
                         nn::AttentionProbe* probe) {
  Tensor y = x + nn::mha_core(p.norm1(x), p.attn, Tensor(), mask, probe);
  return y + p.mlp(p.norm2(y));
}

TemporalParams TemporalParams::create(ParamStore& store, const std::string& name, int64_t level_width,
                                      int64_t global_width, const TemporalConfig& cfg, Rng& rng, bool zero_output) {
  if (cfg.max_frames < 1) throw ContractError("temporal window must hold at least one frame");
  TemporalParams p;
  p.cfg = cfg;
  for (int i = 0; i < 3; ++i) {
    p.level_proj.push_back(
        nn::Linear::create(store, name + ".level_proj" + std::to_string(i), level_width, cfg.width, rng));
  }
  p.global_proj = nn::Linear::create(store, name + ".global_proj", global_width, cfg.width, rng);
  p.spatial_pos = store.create(name + ".spatial_pos", {4, cfg.width}, InitSpec::normal(0.02), rng);
  for (int i = 0; i < cfg.spatial_depth; ++i) {
    p.spatial.push_back(TransformerBlockParams::create(store, name + ".spatial" + std::to_string(i), cfg.width,
                                                       cfg.heads, cfg.mlp_ratio, rng));
  }
  p.temporal_pos = store.create(name + ".temporal_pos", {cfg.max_frames, cfg.width}, InitSpec::normal(0.02), rng);
  for (int i = 0; i < cfg.temporal_depth; ++i) {
    p.temporal.push_back(TransformerBlockParams::create(store, name + ".temporal" + std::to_string(i), cfg.width,
                                                        cfg.heads, cfg.mlp_ratio, rng));
  }
  p.output = nn::Linear::create(store, name + ".output", cfg.width, global_width, rng, zero_output);
  return p;
}

Tensor frame_tokens(const FeaturePyramid& pyramid, const TemporalParams& p) {
  if (pyramid.levels.size() != 3) throw DimensionError("frame tokens need a three-level pyramid");
  const int64_t B = pyramid.global.size(0);
  const int64_t D = p.cfg.width;
  std::vector<Tensor> tokens;
  for (std::size_t i = 0; i < 3; ++i) {
    tokens.push_back(reshape(p.level_proj[i](nn::global_avg_pool(pyramid.levels[i])), {B, 1, D}));
  }
  tokens.push_back(reshape(p.global_proj(pyramid.global), {B, 1, D}));
  return concat(tokens, 1);
}

Tensor spatial_encode(const Tensor& tokens, const TemporalParams& p) {
  if (tokens.rank() != 3 || tokens.size(2) != p.cfg.width || tokens.size(1) != p.spatial_pos.size(0)) {
    throw DimensionError("spatial_encode expects [B," + std::to_string(p.spatial_pos.size(0)) + "," +
                         std::to_string(p.cfg.width) + "], got " + shape_str(tokens.shape()));
  }
  Tensor x = tokens + p.spatial_pos;
  for (const auto& blk : p.spatial) x = transformer_block(x, blk);
  return x;
}

Tensor temporal_encode(const Tensor& embeddings, const std::vector<uint8_t>& valid, const TemporalParams& p,
                       std::vector<nn::AttentionProbe>* probes) {
  if (embeddings.rank() != 3 || embeddings.size(2) != p.cfg.width) {
    throw DimensionError("temporal_encode expects [B,T," + std::to_string(p.cfg.width) + "], got " +
                         shape_str(embeddings.shape()));
  }
  const int64_t B = embeddings.size(0);
  const int64_t T = embeddings.size(1);
  if (T > p.cfg.max_frames) {
    throw ContractError("window of " + std::to_string(T) + " frames exceeds maximum " +
                        std::to_string(p.cfg.max_frames));
  }
  if (!valid.empty() && static_cast<int64_t>(valid.size()) != B * T) {
    throw DimensionError("validity flags must number B*T");
  }
  std::vector<double> mask(B * T * T, 0.0);
  for (int64_t b = 0; b < B; ++b) {
    int64_t count = 0;
    for (int64_t t = 0; t < T; ++t) {
      const bool ok = valid.empty() || valid[b * T + t];
      count += ok;
      if (!ok)
        for (int64_t q = 0; q < T; ++q) mask[(b * T + q) * T + t] = kMaskValue;
    }
    if (count == 0) throw ContractError("temporal window has no valid frame");
    if (!(valid.empty() || valid[b * T + T - 1])) throw ContractError("current frame of the window is invalid");
  }
  // Current frame always takes the last positional slot.
  Tensor x = embeddings + narrow(p.temporal_pos, 0, p.cfg.max_frames - T, T);
  Tensor m({B, T, T}, std::move(mask));
  if (probes) probes->assign(p.temporal.size(), {});
  for (std::size_t i = 0; i < p.temporal.size(); ++i) {
    x = transformer_block(x, p.temporal[i], m, probes ? &(*probes)[i] : nullptr);
  }
  return x;
}

FeaturePyramid temporal_fuse(const FrameWindow& window, const TemporalParams& p) {
  if (window.frames.empty()) throw ContractError("temporal window is empty");
  const int64_t T = static_cast<int64_t>(window.frames.size());
  const FeaturePyramid& current = window.frames.back();
  const int64_t B = current.global.size(0);
  std::vector<Tensor> embeddings;
  for (const auto& frame : window.frames) {
    Tensor enc = spatial_encode(frame_tokens(frame, p), p);
    embeddings.push_back(reshape(mean(enc, 1), {B, 1, p.cfg.width}));
  }
  Tensor fused = temporal_encode(concat(embeddings, 1), window.valid, p);
  Tensor last = reshape(narrow(fused, 1, T - 1, 1), {B, p.cfg.width});
  FeaturePyramid out;
  out.levels = current.levels;
  out.global = current.global + p.output(last);
  return out;
}

}  // namespace pycat
