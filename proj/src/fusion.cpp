#include "pycat/fusion.hpp"

namespace pycat {

namespace {

void check_stages(const std::vector<Tensor>& stages) {
  if (stages.size() != 4) throw DimensionError("expected four backbone stages, got " + std::to_string(stages.size()));
  for (const auto& s : stages) {
    if (s.rank() != 4) throw DimensionError("stage map must be [B,C,H,W], got " + shape_str(s.shape()));
  }
}

Tensor resize_to(const Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return nn::bilinear_resize(x, h, w);
}

}  // namespace

void validate_pyramid(const FeaturePyramid& p, const std::vector<int64_t>& sizes) {
  if (p.levels.size() != 3 || sizes.size() != 3) throw DimensionError("feature pyramid must have three levels");
  const int64_t c = p.levels[0].size(1);
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor& l = p.levels[i];
    if (l.rank() != 4 || l.size(1) != c || l.size(2) != sizes[i] || l.size(3) != sizes[i]) {
      throw DimensionError("pyramid level " + std::to_string(i) + " has shape " + shape_str(l.shape()) +
                           ", expected size " + std::to_string(sizes[i]) + " and width " + std::to_string(c));
    }
  }
  if (!p.global.defined() || p.global.rank() != 2 || p.global.size(0) != p.levels[0].size(0)) {
    throw DimensionError("pyramid global vector must be [B,C_g]");
  }
}

std::vector<int64_t> pyramid_sizes(const std::vector<Tensor>& stages) {
  check_stages(stages);
  return {stages[2].size(2), stages[1].size(2), stages[0].size(2)};
}

AsppParams AsppParams::create(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                              const std::vector<int>& rates, Rng& rng) {
  AsppParams p;
  p.pointwise = nn::Conv2d::create(store, name + ".pointwise", in, out, 1, {}, rng);
  for (int r : rates) {
    p.dilated.push_back(
        nn::Conv2d::create(store, name + ".rate" + std::to_string(r), in, out, 3, {1, r, r}, rng));
  }
  p.pooled = nn::Conv2d::create(store, name + ".pooled", in, out, 1, {}, rng);
  p.fuse = nn::Conv2d::create(store, name + ".fuse", out * static_cast<int64_t>(rates.size() + 2), out, 1, {}, rng);
  return p;
}

Tensor aspp(const Tensor& x, const AsppParams& p) {
  if (x.rank() != 4) throw DimensionError("aspp expects [B,C,H,W], got " + shape_str(x.shape()));
  const int64_t B = x.size(0);
  const int64_t H = x.size(2);
  const int64_t W = x.size(3);
  std::vector<Tensor> branches{relu(p.pointwise(x))};
  for (const auto& conv : p.dilated) branches.push_back(relu(conv(x)));
  Tensor g = reshape(nn::global_avg_pool(x), {B, x.size(1), 1, 1});
  Tensor pooled = relu(p.pooled(g));
  branches.push_back(pooled * Tensor::ones({1, 1, H, W}));
  return p.fuse(concat(branches, 1));
}

FpnParams FpnParams::create(ParamStore& store, const std::string& name, const std::vector<int64_t>& stage_widths,
                            int64_t channels, Rng& rng) {
  if (stage_widths.size() != 4) throw DimensionError("fpn needs four stage widths");
  FpnParams p;
  for (std::size_t i = 0; i < 4; ++i) {
    p.laterals.push_back(
        nn::Conv2d::create(store, name + ".lateral" + std::to_string(i), stage_widths[i], channels, 1, {}, rng));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    p.smooth.push_back(
        nn::Conv2d::create(store, name + ".smooth" + std::to_string(i), channels, channels, 3, {1, 1, 1}, rng));
  }
  return p;
}

std::vector<Tensor> fpn(const std::vector<Tensor>& stages, const FpnParams& p, const std::vector<Tensor>& replaced) {
  check_stages(stages);
  auto lateral = [&](std::size_t i) {
    if (i < replaced.size() && replaced[i].defined()) return replaced[i];
    return p.laterals[i](stages[i]);
  };
  Tensor top = lateral(3);
  std::vector<Tensor> outputs;
  for (int i = 2; i >= 0; --i) {
    Tensor lat = lateral(i);
    top = lat + resize_to(top, lat.size(2), lat.size(3));
    outputs.push_back(p.smooth[i](top));
  }
  return outputs;
}

FusionParams FusionParams::create(ParamStore& store, const std::string& name, const std::vector<int64_t>& stage_widths,
                                  const FusionConfig& cfg, Rng& rng) {
  FusionParams p;
  p.cfg = cfg;
  p.fpn = FpnParams::create(store, name + ".fpn", stage_widths, cfg.channels, rng);
  if (cfg.aspp_all_levels) {
    for (std::size_t i = 0; i < 4; ++i) {
      p.aspp.push_back(AsppParams::create(store, name + ".aspp" + std::to_string(i), stage_widths[i], cfg.channels,
                                          cfg.rates, rng));
    }
  } else {
    p.aspp.push_back(AsppParams::create(store, name + ".aspp", stage_widths[3], cfg.channels, cfg.rates, rng));
  }
  return p;
}

FeaturePyramid fuse_pyramid(const std::vector<Tensor>& stages, const FusionParams& p) {
  check_stages(stages);
  std::vector<Tensor> replaced(4);
  if (p.cfg.use_aspp) {
    if (p.cfg.aspp_all_levels) {
      for (std::size_t i = 0; i < 4; ++i) replaced[i] = aspp(stages[i], p.aspp[i]);
    } else {
      replaced[3] = aspp(stages[3], p.aspp[0]);
    }
  }
  FeaturePyramid out;
  out.levels = fpn(stages, p.fpn, replaced);
  out.global = nn::global_avg_pool(stages[3]);
  return out;
}

DeconvPyramidParams DeconvPyramidParams::create(ParamStore& store, const std::string& name, int64_t in,
                                                int64_t channels, Rng& rng) {
  DeconvPyramidParams p;
  for (int i = 0; i < 3; ++i) {
    p.deconv.push_back(nn::TransposedConv2d::create(store, name + ".deconv" + std::to_string(i), i == 0 ? in : channels,
                                                    channels, 4, {2, 1, 1}, rng));
    p.norms.push_back(nn::LayerNorm::create(store, name + ".norm" + std::to_string(i), channels, 1));
  }
  return p;
}

FeaturePyramid deconv_pyramid(const std::vector<Tensor>& stages, const DeconvPyramidParams& p) {
  const auto sizes = pyramid_sizes(stages);
  FeaturePyramid out;
  Tensor x = stages[3];
  for (std::size_t i = 0; i < 3; ++i) {
    x = relu(p.norms[i](p.deconv[i](x)));
    x = resize_to(x, sizes[i], sizes[i]);
    out.levels.push_back(x);
  }
  out.global = nn::global_avg_pool(stages[3]);
  return out;
}

}  // namespace pycat
