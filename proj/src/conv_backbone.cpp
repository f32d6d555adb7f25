#include "pycat/conv_backbone.hpp"

namespace pycat {

ResidualBlock ResidualBlock::create(ParamStore& store, const std::string& name, int64_t in, int64_t out, int stride,
                                    Rng& rng) {
  ResidualBlock b;
  b.conv1 = nn::Conv2d::create(store, name + ".conv1", in, out, 3, {stride, 1, 1}, rng);
  b.norm1 = nn::LayerNorm::create(store, name + ".norm1", out, 1);
  b.conv2 = nn::Conv2d::create(store, name + ".conv2", out, out, 3, {1, 1, 1}, rng);
  b.norm2 = nn::LayerNorm::create(store, name + ".norm2", out, 1);
  b.shortcut = nn::Conv2d::create(store, name + ".shortcut", in, out, 1, {stride, 0, 1}, rng);
  return b;
}

Tensor ResidualBlock::operator()(const Tensor& x) const {
  Tensor h = relu(norm1(conv1(x)));
  h = norm2(conv2(h));
  return relu(h + shortcut(x));
}

ConvBackbone ConvBackbone::create(ParamStore& store, const std::string& name, const ConvBackboneConfig& cfg,
                                  Rng& rng) {
  ConvBackbone b;
  b.cfg_ = cfg;
  b.stem_ = nn::Conv2d::create(store, name + ".stem", cfg.in_channels, cfg.width, 3, {2, 1, 1}, rng);
  b.stem_norm_ = nn::LayerNorm::create(store, name + ".stem_norm", cfg.width, 1);
  int64_t in = cfg.width;
  for (int s = 0; s < 4; ++s) {
    const int64_t out = cfg.width << s;
    b.stages_.push_back(ResidualBlock::create(store, name + ".stage" + std::to_string(s), in, out, 2, rng));
    in = out;
  }
  return b;
}

std::vector<Tensor> ConvBackbone::forward(const Tensor& image) const {
  if (image.rank() != 4 || image.size(1) != cfg_.in_channels) {
    throw DimensionError("conv backbone expects [B," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                         shape_str(image.shape()));
  }
  Tensor x = relu(stem_norm_(stem_(image)));
  std::vector<Tensor> outputs;
  for (const auto& stage : stages_) {
    x = stage(x);
    outputs.push_back(x);
  }
  return outputs;
}

std::vector<int64_t> ConvBackbone::stage_widths() const {
  return {cfg_.width, 2 * cfg_.width, 4 * cfg_.width, 8 * cfg_.width};
}

}  // namespace pycat
