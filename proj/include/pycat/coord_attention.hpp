#pragma once

#include <utility>

#include "pycat/nn.hpp"

namespace pycat {

/// Mean over width -> [B,C,H,1] and mean over height -> [B,C,1,W].
std::pair<Tensor, Tensor> directional_pool(const Tensor& x);

struct CoordAttention {
  nn::Conv2d shared;  // C -> C/r, shared by both directions
  nn::Conv2d conv_h;  // C/r -> C
  nn::Conv2d conv_w;  // C/r -> C
  int64_t channels = 0;
  int64_t reduction = 8;

  // `zero_gates` zero-initializes the directional convs so every gate starts at 0.5.
  static CoordAttention create(ParamStore& store, const std::string& name, int64_t channels, int64_t reduction,
                               Rng& rng, bool zero_gates = false);
};

struct CoordGates {
  Tensor height;  // [B,C,H,1]
  Tensor width;   // [B,C,1,W]
};

CoordGates ca_gates(const Tensor& x, const CoordAttention& p);

/// x * g_h * g_w; output shape equals input shape.
Tensor ca_forward(const Tensor& x, const CoordAttention& p);

}  // namespace pycat
