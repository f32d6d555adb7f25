#include "pycat/coord_attention.hpp"

namespace pycat {

std::pair<Tensor, Tensor> directional_pool(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("directional_pool expects [B,C,H,W], got " + shape_str(x.shape()));
  return {mean(x, 3, true), mean(x, 2, true)};
}

CoordAttention CoordAttention::create(ParamStore& store, const std::string& name, int64_t channels,
                                      int64_t reduction, Rng& rng, bool zero_gates) {
  if (reduction < 1 || channels % reduction != 0) {
    throw DimensionError("coordinate attention: reduction " + std::to_string(reduction) + " does not divide " +
                         std::to_string(channels) + " channels");
  }
  const int64_t mid = channels / reduction;
  CoordAttention ca;
  ca.channels = channels;
  ca.reduction = reduction;
  ca.shared = nn::Conv2d::create(store, name + ".shared", channels, mid, 1, {}, rng);
  ca.conv_h = nn::Conv2d::create(store, name + ".conv_h", mid, channels, 1, {}, rng, zero_gates);
  ca.conv_w = nn::Conv2d::create(store, name + ".conv_w", mid, channels, 1, {}, rng, zero_gates);
  return ca;
}

CoordGates ca_gates(const Tensor& x, const CoordAttention& p) {
  if (x.rank() != 4 || x.size(1) != p.channels) {
    throw DimensionError("coordinate attention for " + std::to_string(p.channels) + " channels got " +
                         shape_str(x.shape()));
  }
  const int64_t B = x.size(0);
  const int64_t C = x.size(1);
  const int64_t H = x.size(2);
  const int64_t W = x.size(3);
  auto [ph, pw] = directional_pool(x);
  // Both profiles laid out along one spatial axis: [B,C,H+W,1].
  Tensor joint = concat({ph, reshape(pw, {B, C, W, 1})}, 2);
  Tensor y = relu(p.shared(joint));
  Tensor yh = narrow(y, 2, 0, H);
  Tensor yw = narrow(y, 2, H, W);
  return {sigmoid(p.conv_h(yh)), reshape(sigmoid(p.conv_w(yw)), {B, C, 1, W})};
}

Tensor ca_forward(const Tensor& x, const CoordAttention& p) {
  CoordGates g = ca_gates(x, p);
  return x * g.height * g.width;
}

}  // namespace pycat
