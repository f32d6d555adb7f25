#include "pycat/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace pycat::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

struct ConvGeometry {
  int64_t channels;
  int64_t h, w;      // spatial extent of the "image" side
  int64_t oh, ow;    // spatial extent of the "column" side
  int64_t kh, kw;
  int64_t stride, pad, dil;

  int64_t rows() const { return channels * kh * kw; }
  int64_t cols() const { return oh * ow; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0 && oh == h && ow == w; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (int64_t oy = 0; oy < g.oh; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + i * g.dil;
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.ow; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + j * g.dil;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (int64_t oy = 0; oy < g.oh; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + i * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.ow;
          double* dst = x + (c * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.ow; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + j * g.dil;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// Half-pixel bilinear taps along one axis.
struct Taps {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;
};

Taps resize_taps(int64_t in, int64_t out) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = std::min(i0 + 1, in - 1);
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.w1[o] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

int64_t conv_output_size(int64_t in, int64_t kernel, const Conv2dOptions& o) {
  const int64_t span = in + 2 * o.padding - o.dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / o.stride + 1;
}

int64_t transposed_conv_output_size(int64_t in, int64_t kernel, const Conv2dOptions& o) {
  return (in - 1) * o.stride - 2 * o.padding + o.dilation * (kernel - 1) + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opts) {
  check_rank(x, 4, "conv2d input");
  check_rank(weight, 4, "conv2d kernel");
  if (opts.stride < 1 || opts.dilation < 1 || opts.padding < 0) throw DimensionError("conv2d: invalid options");
  const int64_t B = x.size(0);
  const int64_t C = x.size(1);
  const int64_t O = weight.size(0);
  if (weight.size(1) != C) {
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) + " does not match input channels of " +
                         shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.size(0) != O)) throw DimensionError("conv2d: bias shape");
  ConvGeometry g{C, x.size(2), x.size(3), 0, 0, weight.size(2), weight.size(3), opts.stride, opts.padding, opts.dilation};
  g.oh = conv_output_size(g.h, g.kh, opts);
  g.ow = conv_output_size(g.w, g.kw, opts);
  if (g.oh < 1 || g.ow < 1) {
    throw DimensionError("conv2d: degenerate output for input " + shape_str(x.shape()) + " and kernel " +
                         shape_str(weight.shape()));
  }
  const int64_t K = g.rows();
  const int64_t P = g.cols();
  std::vector<double> out(B * O * P);
  std::vector<double> col(g.is_pointwise() ? 0 : K * P);
  const auto xv = x.values();
  const auto wv = weight.values();
  ConstMatMap Wm(wv.data(), O, K);
  for (int64_t b = 0; b < B; ++b) {
    const double* xb = xv.data() + b * C * g.h * g.w;
    const double* cb = xb;
    if (!g.is_pointwise()) {
      im2col(xb, g, col.data());
      cb = col.data();
    }
    MatMap Ob(out.data() + b * O * P, O, P);
    Ob.noalias() = Wm * ConstMatMap(cb, K, P);
    if (bias.defined()) {
      const auto bv = bias.values();
      for (int64_t o = 0; o < O; ++o) Ob.row(o).array() += bv[o];
    }
  }
  Tensor xin = x;
  Tensor win = weight;
  const bool has_bias = bias.defined();
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(Shape{B, O, g.oh, g.ow}, std::move(out), inputs,
                     [xin, win, g, B, O, K, P, has_bias](std::span<const double> gout, std::span<double* const> gin) {
                       const auto xv2 = xin.values();
                       ConstMatMap Wm2(win.values().data(), O, K);
                       std::vector<double> col2(g.is_pointwise() ? 0 : K * P);
                       std::vector<double> dcol(K * P);
                       for (int64_t b = 0; b < B; ++b) {
                         ConstMatMap G(gout.data() + b * O * P, O, P);
                         const double* xb = xv2.data() + b * g.channels * g.h * g.w;
                         if (gin[1]) {
                           const double* cb = xb;
                           if (!g.is_pointwise()) {
                             im2col(xb, g, col2.data());
                             cb = col2.data();
                           }
                           MatMap(gin[1], O, K).noalias() += G * ConstMatMap(cb, K, P).transpose();
                         }
                         if (gin[0]) {
                           double* dxb = gin[0] + b * g.channels * g.h * g.w;
                           if (g.is_pointwise()) {
                             MatMap(dxb, K, P).noalias() += Wm2.transpose() * G;
                           } else {
                             MatMap(dcol.data(), K, P).noalias() = Wm2.transpose() * G;
                             col2im_add(dcol.data(), g, dxb);
                           }
                         }
                         if (has_bias && gin[2]) {
                           for (int64_t o = 0; o < O; ++o) gin[2][o] += G.row(o).sum();
                         }
                       }
                     });
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opts) {
  check_rank(x, 4, "transposed_conv2d input");
  check_rank(weight, 4, "transposed_conv2d kernel");
  const int64_t B = x.size(0);
  const int64_t Ci = x.size(1);
  const int64_t H = x.size(2);
  const int64_t W = x.size(3);
  if (weight.size(0) != Ci) {
    throw DimensionError("transposed_conv2d: kernel " + shape_str(weight.shape()) +
                         " does not match input channels of " + shape_str(x.shape()));
  }
  const int64_t Co = weight.size(1);
  if (bias.defined() && (bias.rank() != 1 || bias.size(0) != Co)) {
    throw DimensionError("transposed_conv2d: bias shape");
  }
  const int64_t Ho = transposed_conv_output_size(H, weight.size(2), opts);
  const int64_t Wo = transposed_conv_output_size(W, weight.size(3), opts);
  if (Ho < 1 || Wo < 1) throw DimensionError("transposed_conv2d: degenerate output size");
  // Geometry of the forward convolution this op is the adjoint of.
  ConvGeometry g{Co, Ho, Wo, H, W, weight.size(2), weight.size(3), opts.stride, opts.padding, opts.dilation};
  if (conv_output_size(Ho, g.kh, opts) != H || conv_output_size(Wo, g.kw, opts) != W) {
    throw DimensionError("transposed_conv2d: inconsistent geometry");
  }
  const int64_t K = g.rows();
  const int64_t P = g.cols();
  const auto xv = x.values();
  const auto wv = weight.values();
  ConstMatMap Wm(wv.data(), Ci, K);
  std::vector<double> out(B * Co * Ho * Wo, 0.0);
  std::vector<double> col(K * P);
  for (int64_t b = 0; b < B; ++b) {
    MatMap(col.data(), K, P).noalias() = Wm.transpose() * ConstMatMap(xv.data() + b * Ci * P, Ci, P);
    double* ob = out.data() + b * Co * Ho * Wo;
    col2im_add(col.data(), g, ob);
    if (bias.defined()) {
      const auto bv = bias.values();
      for (int64_t c = 0; c < Co; ++c) {
        for (int64_t i = 0; i < Ho * Wo; ++i) ob[c * Ho * Wo + i] += bv[c];
      }
    }
  }
  Tensor xin = x;
  Tensor win = weight;
  const bool has_bias = bias.defined();
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(Shape{B, Co, Ho, Wo}, std::move(out), inputs,
                     [xin, win, g, B, Ci, Co, K, P, has_bias](std::span<const double> gout,
                                                             std::span<double* const> gin) {
                       const auto xv2 = xin.values();
                       ConstMatMap Wm2(win.values().data(), Ci, K);
                       std::vector<double> colg(K * P);
                       const int64_t plane = g.h * g.w;
                       for (int64_t b = 0; b < B; ++b) {
                         const double* gb = gout.data() + b * Co * plane;
                         im2col(gb, g, colg.data());
                         ConstMatMap Cg(colg.data(), K, P);
                         if (gin[0]) MatMap(gin[0] + b * Ci * P, Ci, P).noalias() += Wm2 * Cg;
                         if (gin[1]) {
                           MatMap(gin[1], Ci, K).noalias() += ConstMatMap(xv2.data() + b * Ci * P, Ci, P) * Cg.transpose();
                         }
                         if (has_bias && gin[2]) {
                           for (int64_t c = 0; c < Co; ++c) {
                             double s = 0.0;
                             for (int64_t i = 0; i < plane; ++i) s += gb[c * plane + i];
                             gin[2][c] += s;
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, int axis, double eps) {
  const int ax = normalize_axis(axis, x.rank());
  const int64_t n = x.size(ax);
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias of " + std::to_string(gain.numel()) + " for extent " +
                         std::to_string(n));
  }
  int64_t outer = 1;
  int64_t inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.size(i);
  for (int i = ax + 1; i < x.rank(); ++i) inner *= x.size(i);
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> out(xv.size());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(outer * inner);
  std::vector<double> mu(inner);
  std::vector<double> var(inner);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t o = 0; o < outer; ++o) {
    const double* xo = xv.data() + o * n * inner;
    std::fill(mu.begin(), mu.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    for (int64_t k = 0; k < n; ++k) {
      for (int64_t i = 0; i < inner; ++i) mu[i] += xo[k * inner + i];
    }
    for (int64_t i = 0; i < inner; ++i) mu[i] *= inv_n;
    for (int64_t k = 0; k < n; ++k) {
      for (int64_t i = 0; i < inner; ++i) {
        const double d = xo[k * inner + i] - mu[i];
        var[i] += d * d;
      }
    }
    double* rs = rstd->data() + o * inner;
    for (int64_t i = 0; i < inner; ++i) rs[i] = 1.0 / std::sqrt(var[i] * inv_n + eps);
    for (int64_t k = 0; k < n; ++k) {
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t j = o * n * inner + k * inner + i;
        const double h = (xo[k * inner + i] - mu[i]) * rs[i];
        (*xhat)[j] = h;
        out[j] = h * gv[k] + bv[k];
      }
    }
  }
  Tensor gin_t = gain;
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [xhat, rstd, gin_t, outer, n, inner, inv_n](std::span<const double> g,
                                                                   std::span<double* const> gin) {
                       const auto gv2 = gin_t.values();
                       const auto& xh = *xhat;
                       std::vector<double> m1(inner);
                       std::vector<double> m2(inner);
                       for (int64_t o = 0; o < outer; ++o) {
                         const int64_t base = o * n * inner;
                         if (gin[1] || gin[2]) {
                           for (int64_t k = 0; k < n; ++k) {
                             double sg = 0.0;
                             double sgx = 0.0;
                             for (int64_t i = 0; i < inner; ++i) {
                               const int64_t j = base + k * inner + i;
                               sg += g[j];
                               sgx += g[j] * xh[j];
                             }
                             if (gin[1]) gin[1][k] += sgx;
                             if (gin[2]) gin[2][k] += sg;
                           }
                         }
                         if (!gin[0]) continue;
                         std::fill(m1.begin(), m1.end(), 0.0);
                         std::fill(m2.begin(), m2.end(), 0.0);
                         for (int64_t k = 0; k < n; ++k) {
                           for (int64_t i = 0; i < inner; ++i) {
                             const int64_t j = base + k * inner + i;
                             const double dh = g[j] * gv2[k];
                             m1[i] += dh;
                             m2[i] += dh * xh[j];
                           }
                         }
                         const double* rs = rstd->data() + o * inner;
                         for (int64_t k = 0; k < n; ++k) {
                           for (int64_t i = 0; i < inner; ++i) {
                             const int64_t j = base + k * inner + i;
                             const double dh = g[j] * gv2[k];
                             gin[0][j] += rs[i] * (dh - m1[i] * inv_n - xh[j] * m2[i] * inv_n);
                           }
                         }
                       }
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  check_rank(x, 4, "global_avg_pool");
  return mean(reshape(x, {x.size(0), x.size(1), x.size(2) * x.size(3)}), 2);
}

Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w) {
  check_rank(x, 4, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw DimensionError("bilinear_resize: output size must be positive");
  const int64_t planes = x.size(0) * x.size(1);
  const int64_t H = x.size(2);
  const int64_t W = x.size(3);
  auto ty = std::make_shared<Taps>(resize_taps(H, out_h));
  auto tx = std::make_shared<Taps>(resize_taps(W, out_w));
  const auto xv = x.values();
  std::vector<double> out(planes * out_h * out_w);
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * H * W;
    double* dst = out.data() + p * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const double wy = ty->w1[oy];
      const double* r0 = src + ty->i0[oy] * W;
      const double* r1 = src + ty->i1[oy] * W;
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const double wx = tx->w1[ox];
        const int64_t a = tx->i0[ox];
        const int64_t b = tx->i1[ox];
        const double top = r0[a] * (1 - wx) + r0[b] * wx;
        const double bot = r1[a] * (1 - wx) + r1[b] * wx;
        dst[oy * out_w + ox] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return make_result(Shape{x.size(0), x.size(1), out_h, out_w}, std::move(out), {x},
                     [ty, tx, planes, H, W, out_h, out_w](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       for (int64_t p = 0; p < planes; ++p) {
                         const double* gp = g.data() + p * out_h * out_w;
                         double* dst = gin[0] + p * H * W;
                         for (int64_t oy = 0; oy < out_h; ++oy) {
                           const double wy = ty->w1[oy];
                           double* r0 = dst + ty->i0[oy] * W;
                           double* r1 = dst + ty->i1[oy] * W;
                           for (int64_t ox = 0; ox < out_w; ++ox) {
                             const double wx = tx->w1[ox];
                             const double v = gp[oy * out_w + ox];
                             r0[tx->i0[ox]] += v * (1 - wy) * (1 - wx);
                             r0[tx->i1[ox]] += v * (1 - wy) * wx;
                             r1[tx->i0[ox]] += v * wy * (1 - wx);
                             r1[tx->i1[ox]] += v * wy * wx;
                           }
                         }
                       }
                     });
}

Tensor grid_sample_bilinear(const Tensor& x, const Tensor& points) {
  check_rank(x, 4, "grid_sample_bilinear input");
  check_rank(points, 3, "grid_sample_bilinear points");
  const int64_t B = x.size(0);
  const int64_t C = x.size(1);
  const int64_t H = x.size(2);
  const int64_t W = x.size(3);
  if (points.size(0) != B || points.size(2) != 2) {
    throw DimensionError("grid_sample_bilinear: points " + shape_str(points.shape()) + " for input " +
                         shape_str(x.shape()));
  }
  const int64_t N = points.size(1);

  // Per-point taps: pixel coordinate, clamp flags, neighbor indices, weights.
  struct Tap {
    int64_t x0, x1, y0, y1;
    double fx, fy;
    bool cx, cy;  // clamped, derivative w.r.t. the coordinate is zero
  };
  auto taps = std::make_shared<std::vector<Tap>>(B * N);
  const auto pv = points.values();
  for (int64_t i = 0; i < B * N; ++i) {
    Tap t{};
    auto axis_tap = [](double norm, int64_t extent, int64_t& i0, int64_t& i1, double& f, bool& clamped) {
      double pix = ((norm + 1.0) * static_cast<double>(extent) - 1.0) * 0.5;
      clamped = false;
      if (pix <= 0.0) {
        pix = 0.0;
        clamped = true;
      } else if (pix >= static_cast<double>(extent - 1)) {
        pix = static_cast<double>(extent - 1);
        clamped = true;
      }
      i0 = static_cast<int64_t>(std::floor(pix));
      i1 = std::min(i0 + 1, extent - 1);
      f = pix - static_cast<double>(i0);
    };
    axis_tap(pv[2 * i], W, t.x0, t.x1, t.fx, t.cx);
    axis_tap(pv[2 * i + 1], H, t.y0, t.y1, t.fy, t.cy);
    (*taps)[i] = t;
  }
  const auto xv = x.values();
  std::vector<double> out(B * C * N);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const double* plane = xv.data() + (b * C + c) * H * W;
      for (int64_t n = 0; n < N; ++n) {
        const Tap& t = (*taps)[b * N + n];
        const double v00 = plane[t.y0 * W + t.x0];
        const double v01 = plane[t.y0 * W + t.x1];
        const double v10 = plane[t.y1 * W + t.x0];
        const double v11 = plane[t.y1 * W + t.x1];
        out[(b * C + c) * N + n] =
            (v00 * (1 - t.fx) + v01 * t.fx) * (1 - t.fy) + (v10 * (1 - t.fx) + v11 * t.fx) * t.fy;
      }
    }
  }
  Tensor xin = x;
  return make_result(Shape{B, C, N}, std::move(out), {x, points},
                     [xin, taps, B, C, H, W, N](std::span<const double> g, std::span<double* const> gin) {
                       const auto xv2 = xin.values();
                       const double sx = 0.5 * static_cast<double>(W);
                       const double sy = 0.5 * static_cast<double>(H);
                       for (int64_t b = 0; b < B; ++b) {
                         for (int64_t c = 0; c < C; ++c) {
                           const double* plane = xv2.data() + (b * C + c) * H * W;
                           for (int64_t n = 0; n < N; ++n) {
                             const Tap& t = (*taps)[b * N + n];
                             const double gv = g[(b * C + c) * N + n];
                             if (gin[0]) {
                               double* dp = gin[0] + (b * C + c) * H * W;
                               dp[t.y0 * W + t.x0] += gv * (1 - t.fx) * (1 - t.fy);
                               dp[t.y0 * W + t.x1] += gv * t.fx * (1 - t.fy);
                               dp[t.y1 * W + t.x0] += gv * (1 - t.fx) * t.fy;
                               dp[t.y1 * W + t.x1] += gv * t.fx * t.fy;
                             }
                             if (gin[1]) {
                               const double v00 = plane[t.y0 * W + t.x0];
                               const double v01 = plane[t.y0 * W + t.x1];
                               const double v10 = plane[t.y1 * W + t.x0];
                               const double v11 = plane[t.y1 * W + t.x1];
                               if (!t.cx) {
                                 const double dfx = (v01 - v00) * (1 - t.fy) + (v11 - v10) * t.fy;
                                 gin[1][2 * (b * N + n)] += gv * dfx * sx;
                               }
                               if (!t.cy) {
                                 const double dfy = (v10 * (1 - t.fx) + v11 * t.fx) - (v00 * (1 - t.fx) + v01 * t.fx);
                                 gin[1][2 * (b * N + n) + 1] += gv * dfy * sy;
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.size(-1) != weight.size(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  Tensor y = matmul(x.rank() == 1 ? reshape(x, {1, x.size(0)}) : x, weight);
  if (x.rank() == 1) y = reshape(y, {weight.size(1)});
  return bias.defined() ? y + bias : y;
}

Tensor mha_core(const Tensor& tokens, const MHAParams& p, const Tensor& bias, const Tensor& mask,
                AttentionProbe* probe) {
  check_rank(tokens, 3, "mha_core tokens");
  const int64_t B = tokens.size(0);
  const int64_t N = tokens.size(1);
  const int64_t D = tokens.size(2);
  const int64_t h = p.heads;
  if (h < 1 || D % h != 0) throw DimensionError("mha_core: width " + std::to_string(D) + " not divisible by heads");
  if (p.qkv_weight.rank() != 2 || p.qkv_weight.size(0) != D || p.qkv_weight.size(1) != 3 * D) {
    throw DimensionError("mha_core: qkv projection " + shape_str(p.qkv_weight.shape()) + " for width " +
                         std::to_string(D));
  }
  const int64_t d = D / h;
  Tensor qkv = reshape(linear(tokens, p.qkv_weight, p.qkv_bias), {B, N, 3, h, d});
  qkv = permute(qkv, {2, 0, 3, 1, 4});  // [3,B,h,N,d]
  Tensor q = reshape(narrow(qkv, 0, 0, 1), {B, h, N, d});
  Tensor k = reshape(narrow(qkv, 0, 1, 1), {B, h, N, d});
  Tensor v = reshape(narrow(qkv, 0, 2, 1), {B, h, N, d});
  Tensor attn = matmul(q * (1.0 / std::sqrt(static_cast<double>(d))), transpose(k, -1, -2));
  if (bias.defined()) {
    if (bias.shape() != Shape{h, N, N}) throw DimensionError("mha_core: bias shape " + shape_str(bias.shape()));
    attn = attn + bias;
  }
  if (mask.defined()) {
    if (mask.rank() == 2) {
      if (mask.shape() != Shape{N, N}) throw DimensionError("mha_core: mask shape " + shape_str(mask.shape()));
      attn = attn + mask;
    } else {
      const int64_t nw = mask.size(0);
      if (mask.shape() != Shape{nw, N, N} || B % nw != 0) {
        throw DimensionError("mha_core: window mask " + shape_str(mask.shape()) + " for batch " + std::to_string(B));
      }
      attn = reshape(reshape(attn, {B / nw, nw, h, N, N}) + reshape(mask, {nw, 1, N, N}), {B, h, N, N});
    }
  }
  attn = softmax(attn, -1);
  if (probe) probe->weights = attn;
  Tensor out = permute(matmul(attn, v), {0, 2, 1, 3});  // [B,N,h,d]
  return linear(reshape(out, {B, N, D}), p.out_weight, p.out_bias);
}

// ---------------------------------------------------------------------------

Linear Linear::create(ParamStore& store, const std::string& name, int64_t in, int64_t out, Rng& rng,
                      bool zero_init, bool with_bias) {
  Linear l;
  l.weight = store.create(name + ".weight", {in, out}, zero_init ? InitSpec::zeros() : InitSpec::xavier(in, out), rng);
  if (with_bias) l.bias = store.create(name + ".bias", {out}, InitSpec::zeros(), rng);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

Conv2d Conv2d::create(ParamStore& store, const std::string& name, int64_t in, int64_t out, int kernel,
                      Conv2dOptions opts, Rng& rng, bool zero_init) {
  Conv2d c;
  c.opts = opts;
  c.weight = store.create(name + ".weight", {out, in, kernel, kernel},
                          zero_init ? InitSpec::zeros() : InitSpec::he(in * kernel * kernel), rng);
  c.bias = store.create(name + ".bias", {out}, InitSpec::zeros(), rng);
  return c;
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, opts); }

TransposedConv2d TransposedConv2d::create(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                                          int kernel, Conv2dOptions opts, Rng& rng) {
  TransposedConv2d c;
  c.opts = opts;
  c.weight = store.create(name + ".weight", {in, out, kernel, kernel}, InitSpec::he(in * kernel * kernel / 4), rng);
  c.bias = store.create(name + ".bias", {out}, InitSpec::zeros(), rng);
  return c;
}

Tensor TransposedConv2d::operator()(const Tensor& x) const { return transposed_conv2d(x, weight, bias, opts); }

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, int64_t width, int axis) {
  Rng unused;
  LayerNorm n;
  n.axis = axis;
  n.gain = store.create(name + ".gain", {width}, InitSpec::ones(), unused);
  n.bias = store.create(name + ".bias", {width}, InitSpec::zeros(), unused);
  return n;
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias, axis); }

MHAParams create_mha(ParamStore& store, const std::string& name, int64_t width, int heads, Rng& rng,
                     bool zero_out) {
  MHAParams p;
  p.heads = heads;
  p.qkv_weight = store.create(name + ".qkv.weight", {width, 3 * width}, InitSpec::xavier(width, width), rng);
  p.qkv_bias = store.create(name + ".qkv.bias", {3 * width}, InitSpec::zeros(), rng);
  p.out_weight = store.create(name + ".proj.weight", {width, width},
                              zero_out ? InitSpec::zeros() : InitSpec::xavier(width, width), rng);
  p.out_bias = store.create(name + ".proj.bias", {width}, InitSpec::zeros(), rng);
  return p;
}

Mlp Mlp::create(ParamStore& store, const std::string& name, int64_t width, int64_t hidden, Rng& rng,
                bool zero_out) {
  return Mlp{Linear::create(store, name + ".fc1", width, hidden, rng),
             Linear::create(store, name + ".fc2", hidden, width, rng, zero_out)};
}

Tensor Mlp::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

}  // namespace pycat::nn
