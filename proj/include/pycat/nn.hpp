#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pycat/params.hpp"
#include "pycat/tensor.hpp"

namespace pycat::nn {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

// floor((in + 2 pad - dilation (k - 1) - 1) / stride) + 1
int64_t conv_output_size(int64_t in, int64_t kernel, const Conv2dOptions& o);
// (in - 1) stride - 2 pad + dilation (k - 1) + 1
int64_t transposed_conv_output_size(int64_t in, int64_t kernel, const Conv2dOptions& o);

/// x [B,C,H,W], weight [O,C,kh,kw], bias [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opts);

/// x [B,Ci,H,W], weight [Ci,Co,kh,kw] (the adjoint of conv2d with the same
/// kernel), bias [Co] or undefined.
Tensor transposed_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opts);

/// Normalizes over `axis` (zero mean, unit variance, eps 1e-5) then applies
/// gain and bias, both shaped [x.size(axis)].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, int axis = -1, double eps = 1e-5);

Tensor global_avg_pool(const Tensor& x);  // [B,C,H,W] -> [B,C]

/// Bilinear interpolation with half-pixel centers (align-corners off).
Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w);

/// Samples x [B,C,H,W] at points [B,N,2] given as (x, y) in [-1,1] with
/// half-pixel centers; out-of-range coordinates clamp to the border.
/// Returns [B,C,N].
Tensor grid_sample_bilinear(const Tensor& x, const Tensor& points);

/// x [...,in] * weight [in,out] + bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct MHAParams {
  Tensor qkv_weight;  // [D, 3D], columns ordered (q | k | v), heads contiguous
  Tensor qkv_bias;    // [3D]
  Tensor out_weight;  // [D, D]
  Tensor out_bias;    // [D]
  int heads = 1;
};

// Receives the post-softmax attention weights [B,h,N,N] when passed to mha_core.
struct AttentionProbe {
  Tensor weights;
};

/// Multi-head self-attention: softmax(Q K^T / sqrt(d) + bias + mask) V per
/// head, heads concatenated and projected. `bias` is [h,N,N]; `mask` is
/// additive, either [N,N] or [nW,N,N] for a batch laid out as B' x nW windows.
Tensor mha_core(const Tensor& tokens, const MHAParams& p, const Tensor& bias = {}, const Tensor& mask = {},
                AttentionProbe* probe = nullptr);

// ---------------------------------------------------------------------------
// Parameterized layers over a ParamStore.

struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear create(ParamStore& store, const std::string& name, int64_t in, int64_t out, Rng& rng,
                       bool zero_init = false, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct Conv2d {
  Tensor weight;
  Tensor bias;
  Conv2dOptions opts;

  static Conv2d create(ParamStore& store, const std::string& name, int64_t in, int64_t out, int kernel,
                       Conv2dOptions opts, Rng& rng, bool zero_init = false);
  Tensor operator()(const Tensor& x) const;
};

struct TransposedConv2d {
  Tensor weight;
  Tensor bias;
  Conv2dOptions opts;

  static TransposedConv2d create(ParamStore& store, const std::string& name, int64_t in, int64_t out, int kernel,
                                 Conv2dOptions opts, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  int axis = -1;

  static LayerNorm create(ParamStore& store, const std::string& name, int64_t width, int axis = -1);
  Tensor operator()(const Tensor& x) const;
};

MHAParams create_mha(ParamStore& store, const std::string& name, int64_t width, int heads, Rng& rng,
                     bool zero_out = false);

// Two-layer GELU MLP used inside transformer blocks.
struct Mlp {
  Linear fc1;
  Linear fc2;

  static Mlp create(ParamStore& store, const std::string& name, int64_t width, int64_t hidden, Rng& rng,
                    bool zero_out = false);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace pycat::nn
