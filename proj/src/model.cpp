#include "pycat/model.hpp"

#include <algorithm>

namespace pycat {

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::baseline, Variant::ca, Variant::ca_transformer,
                                         Variant::ca_fpn_transformer, Variant::pycat4};
  return v;
}

std::string variant_id(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::ca: return "ca";
    case Variant::ca_transformer: return "ca_transformer";
    case Variant::ca_fpn_transformer: return "ca_fpn_transformer";
    case Variant::pycat4: return "pycat4";
  }
  return {};
}

std::string display_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "Baseline";
    case Variant::ca: return "CA";
    case Variant::ca_transformer: return "CA_Transformer";
    case Variant::ca_fpn_transformer: return "CA_FPN_Transformer";
    case Variant::pycat4: return "PyCAT4";
  }
  return {};
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants())
    if (variant_id(v) == name || display_name(v) == name) return v;
  throw ParseError("unknown variant '" + name +
                   "' (expected baseline, ca, ca_transformer, ca_fpn_transformer or pycat4)");
}

bool uses_swin(Variant v) { return v != Variant::baseline && v != Variant::ca; }
bool uses_ca(Variant v) { return v != Variant::baseline; }
bool uses_fpn(Variant v) { return v == Variant::ca_fpn_transformer || v == Variant::pycat4; }
bool uses_temporal(Variant v) { return v == Variant::pycat4; }

ModelConfig tiny_model_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.image_size = 32;
  c.width = 8;
  c.depths = {2, 2, 1, 1};
  c.heads = {1, 2, 2, 2};
  c.window = 4;
  c.fusion_channels = 8;
  c.ca_reduction = 4;
  c.regressor.samples = 8;
  c.regressor.hidden = 16;
  c.temporal.width = 8;
  c.temporal.heads = 2;
  c.temporal.spatial_depth = 1;
  c.temporal.temporal_depth = 1;
  c.temporal.max_frames = 4;
  return c;
}

std::unique_ptr<Model> Model::create(const ModelConfig& cfg, uint64_t seed) {
  if (cfg.image_size <= 0 || cfg.image_size % 16 != 0) {
    throw ContractError("image size must be a positive multiple of 16, got " + std::to_string(cfg.image_size));
  }
  auto m = std::unique_ptr<Model>(new Model());
  m->cfg_ = cfg;
  m->mesh_ = build_toy_mesh();
  Rng rng(seed);
  std::vector<int64_t> widths;
  if (uses_swin(cfg.variant)) {
    SwinConfig sc;
    sc.width = cfg.width;
    sc.depths = cfg.depths;
    sc.heads = cfg.heads;
    sc.window = cfg.window;
    sc.pad_odd = true;
    m->swin_ = SwinBackbone::create(m->store_, "backbone", sc, rng);
    widths = m->swin_->stage_widths();
  } else {
    ConvBackboneConfig cc;
    cc.width = cfg.width;
    m->conv_ = ConvBackbone::create(m->store_, "backbone", cc, rng);
    widths = m->conv_->stage_widths();
  }
  if (uses_ca(cfg.variant)) {
    for (std::size_t i = 0; i < widths.size(); ++i) {
      m->ca_.push_back(CoordAttention::create(m->store_, "ca" + std::to_string(i), widths[i],
                                              std::min<int64_t>(cfg.ca_reduction, widths[i]), rng));
    }
  }
  if (uses_fpn(cfg.variant)) {
    FusionConfig fc;
    fc.channels = cfg.fusion_channels;
    fc.use_aspp = cfg.aspp;
    m->fusion_ = FusionParams::create(m->store_, "fusion", widths, fc, rng);
  } else {
    m->deconv_ = DeconvPyramidParams::create(m->store_, "deconv", widths.back(), cfg.fusion_channels, rng);
  }
  const int64_t global_width = widths.back();
  if (uses_temporal(cfg.variant)) {
    m->temporal_ = TemporalParams::create(m->store_, "temporal", cfg.fusion_channels, global_width, cfg.temporal, rng);
  }
  m->regressor_ = RegressorParams::create(m->store_, "regressor", m->mesh_, cfg.fusion_channels, global_width,
                                          cfg.regressor, rng);
  return m;
}

std::vector<Tensor> Model::features(const Tensor& images) const {
  if (images.rank() != 4 || images.size(1) != 3 || images.size(2) != cfg_.image_size ||
      images.size(3) != cfg_.image_size) {
    throw DimensionError("model expects images [B,3," + std::to_string(cfg_.image_size) + "," +
                         std::to_string(cfg_.image_size) + "], got " + shape_str(images.shape()));
  }
  std::vector<Tensor> stages = swin_ ? swin_->forward(images) : conv_->forward(images);
  for (std::size_t i = 0; i < ca_.size(); ++i) stages[i] = ca_forward(stages[i], ca_[i]);
  return stages;
}

FeaturePyramid Model::pyramid(const Tensor& images) const {
  const auto stages = features(images);
  return fusion_ ? fuse_pyramid(stages, *fusion_) : deconv_pyramid(stages, *deconv_);
}

ModelOutput Model::head(FeaturePyramid pyramid) const {
  ModelOutput out;
  out.ief = ief_loop(pyramid, mesh_, regressor_);
  out.dense = aux_dense_head(pyramid, regressor_.dense);
  out.pyramid = std::move(pyramid);
  return out;
}

ModelOutput Model::forward(const Tensor& images) const { return forward_window({images}, {}); }

ModelOutput Model::forward_window(const std::vector<Tensor>& frames, const std::vector<uint8_t>& valid) const {
  if (frames.empty()) throw ContractError("forward needs at least one frame");
  if (!temporal_) return head(pyramid(frames.back()));
  std::vector<FeaturePyramid> pyramids;
  {
    NoGradScope no_grad;
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) pyramids.push_back(pyramid(frames[t]));
  }
  pyramids.push_back(pyramid(frames.back()));
  return forward_pyramids(std::move(pyramids), valid);
}

ModelOutput Model::forward_pyramids(std::vector<FeaturePyramid> pyramids, const std::vector<uint8_t>& valid) const {
  if (pyramids.empty()) throw ContractError("forward needs at least one frame");
  if (!temporal_) return head(std::move(pyramids.back()));
  return head(temporal_fuse({std::move(pyramids), valid}, *temporal_));
}

std::vector<int64_t> Model::level_sizes() const {
  const int64_t s = cfg_.image_size / 4;
  return {s / 4, s / 2, s};
}

}  // namespace pycat
