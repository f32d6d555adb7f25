#pragma once

#include <vector>

#include "pycat/nn.hpp"

namespace pycat {

struct ConvBackboneConfig {
  int64_t in_channels = 3;
  int64_t width = 32;  // stage widths are width * {1, 2, 4, 8}
};

// conv3x3 -> LN -> ReLU -> conv3x3 -> LN, plus a projected shortcut, then ReLU.
struct ResidualBlock {
  nn::Conv2d conv1;
  nn::LayerNorm norm1;
  nn::Conv2d conv2;
  nn::LayerNorm norm2;
  nn::Conv2d shortcut;

  static ResidualBlock create(ParamStore& store, const std::string& name, int64_t in, int64_t out, int stride,
                              Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Residual convolutional backbone: a stride-2 stem followed by four stride-2
/// stages, so the deepest map is 1/32 of the input. Channel-wise layer norm
/// stands in for batch statistics.
class ConvBackbone {
 public:
  static ConvBackbone create(ParamStore& store, const std::string& name, const ConvBackboneConfig& cfg, Rng& rng);

  std::vector<Tensor> forward(const Tensor& image) const;
  std::vector<int64_t> stage_widths() const;

 private:
  ConvBackboneConfig cfg_;
  nn::Conv2d stem_;
  nn::LayerNorm stem_norm_;
  std::vector<ResidualBlock> stages_;
};

}  // namespace pycat
