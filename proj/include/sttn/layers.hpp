// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Parameterized layers: 2D/3D convolution (cross-correlation semantics,
// lowered to GEMM through im2col), bilinear upsampling, spectral
// normalization and the residual block.

#pragma once

#include <array>
#include <cmath>

#include "sttn/tensor.hpp"

namespace sttn {

inline Index conv_out_extent(Index in, Index k, Index stride, Index pad,
                             Index dil) {
  const Index out = (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  require_shape(out > 0, "conv: non-positive output extent");
  return out;
}

template <typename S>
struct Conv2dLayer {
  Tensor<S> weight;  // [out_ch, in_ch, kh, kw]
  Tensor<S> bias;    // [out_ch]
  Index stride = 1;
  Index dilation = 1;
  Index padding = 0;

  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }

  /// Weights ~ uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)), zero bias.
  static Conv2dLayer make(Index in_ch, Index out_ch, Index k, Index stride,
                          Index padding, Rng& rng, Index dilation = 1) {
    Conv2dLayer l;
    const double bound = std::sqrt(1.0 / double(in_ch * k * k));
    l.weight = Tensor<S>::uniform({out_ch, in_ch, k, k}, rng, -bound, bound);
    l.bias = Tensor<S>::zeros({out_ch});
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    l.stride = stride;
    l.padding = padding;
    l.dilation = dilation;
    return l;
  }
};

template <typename S>
struct Conv3dLayer {
  Tensor<S> weight;  // [out_ch, in_ch, kt, kh, kw]
  Tensor<S> bias;    // [out_ch]
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> padding{0, 0, 0};

  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }

  static Conv3dLayer make(Index in_ch, Index out_ch, std::array<Index, 3> k,
                          std::array<Index, 3> stride, std::array<Index, 3> pad,
                          Rng& rng) {
    Conv3dLayer l;
    const double fan_in = double(in_ch * k[0] * k[1] * k[2]);
    const double bound = std::sqrt(1.0 / fan_in);
    l.weight =
        Tensor<S>::uniform({out_ch, in_ch, k[0], k[1], k[2]}, rng, -bound, bound);
    l.bias = Tensor<S>::zeros({out_ch});
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    l.stride = stride;
    l.padding = pad;
    return l;
  }
};

namespace detail {

// cols is [C*kh*kw, Ho*Wo]; out-of-image taps are zero (zero padding).
template <typename S>
void im2col(const S* x, Index C, Index H, Index W, Index kh, Index kw,
            Index stride, Index pad, Index dil, Index Ho, Index Wo, S* cols) {
  for (Index c = 0; c < C; ++c) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        S* row = cols + ((c * kh + ky) * kw + kx) * (Ho * Wo);
        const S* plane = x + c * H * W;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ky * dil;
          S* dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, S(0));
            continue;
          }
          const S* src = plane + iy * W;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kx * dil;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* cols, Index C, Index H, Index W, Index kh, Index kw,
                Index stride, Index pad, Index dil, Index Ho, Index Wo, S* x) {
  for (Index c = 0; c < C; ++c) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        const S* row = cols + ((c * kh + ky) * kw + kx) * (Ho * Wo);
        S* plane = x + c * H * W;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= H) continue;
          S* dst = plane + iy * W;
          const S* src = row + oy * Wo;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kx * dil;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// 3-D variants; cols is [C*kt*kh*kw, To*Ho*Wo].
template <typename S>
void vol2col(const S* x, Index C, Index T, Index H, Index W, Index kt, Index kh,
             Index kw, std::array<Index, 3> stride, std::array<Index, 3> pad,
             Index To, Index Ho, Index Wo, S* cols) {
  const Index spatial = To * Ho * Wo;
  for (Index c = 0; c < C; ++c) {
    for (Index tz = 0; tz < kt; ++tz) {
      for (Index ky = 0; ky < kh; ++ky) {
        for (Index kx = 0; kx < kw; ++kx) {
          S* row = cols + (((c * kt + tz) * kh + ky) * kw + kx) * spatial;
          for (Index ot = 0; ot < To; ++ot) {
            const Index it = ot * stride[0] - pad[0] + tz;
            for (Index oy = 0; oy < Ho; ++oy) {
              const Index iy = oy * stride[1] - pad[1] + ky;
              S* dst = row + (ot * Ho + oy) * Wo;
              if (it < 0 || it >= T || iy < 0 || iy >= H) {
                std::fill(dst, dst + Wo, S(0));
                continue;
              }
              const S* src = x + ((c * T + it) * H + iy) * W;
              for (Index ox = 0; ox < Wo; ++ox) {
                const Index ix = ox * stride[2] - pad[2] + kx;
                dst[ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename S>
void col2vol_add(const S* cols, Index C, Index T, Index H, Index W, Index kt,
                 Index kh, Index kw, std::array<Index, 3> stride,
                 std::array<Index, 3> pad, Index To, Index Ho, Index Wo, S* x) {
  const Index spatial = To * Ho * Wo;
  for (Index c = 0; c < C; ++c) {
    for (Index tz = 0; tz < kt; ++tz) {
      for (Index ky = 0; ky < kh; ++ky) {
        for (Index kx = 0; kx < kw; ++kx) {
          const S* row = cols + (((c * kt + tz) * kh + ky) * kw + kx) * spatial;
          for (Index ot = 0; ot < To; ++ot) {
            const Index it = ot * stride[0] - pad[0] + tz;
            if (it < 0 || it >= T) continue;
            for (Index oy = 0; oy < Ho; ++oy) {
              const Index iy = oy * stride[1] - pad[1] + ky;
              if (iy < 0 || iy >= H) continue;
              S* dst = x + ((c * T + it) * H + iy) * W;
              const S* src = row + (ot * Ho + oy) * Wo;
              for (Index ox = 0; ox < Wo; ++ox) {
                const Index ix = ox * stride[2] - pad[2] + kx;
                if (ix >= 0 && ix < W) dst[ix] += src[ox];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Conv2dLayer<S>& layer) {
  require_shape(x.rank() == 4, "conv2d: input must be [B,C,H,W]");
  require_shape(x.dim(1) == layer.in_channels(),
                "conv2d: channel mismatch, input has " + std::to_string(x.dim(1)) +
                    ", layer expects " + std::to_string(layer.in_channels()));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Co = layer.out_channels();
  const Index kh = layer.weight.dim(2), kw = layer.weight.dim(3);
  const Index s = layer.stride, p = layer.padding, d = layer.dilation;
  const Index Ho = conv_out_extent(H, kh, s, p, d);
  const Index Wo = conv_out_extent(W, kw, s, p, d);
  const Index ckk = C * kh * kw, hw = Ho * Wo;

  Tensor<S> out(Shape{B, Co, Ho, Wo});
  std::vector<S> cols(std::size_t(ckk * hw));
  detail::CMatMap<S> wm(layer.weight.data(), Co, ckk);
  for (Index b = 0; b < B; ++b) {
    detail::im2col(x.data() + b * C * H * W, C, H, W, kh, kw, s, p, d, Ho, Wo,
                   cols.data());
    detail::MatMap<S> om(out.data() + b * Co * hw, Co, hw);
    om.noalias() = wm * detail::CMatMap<S>(cols.data(), ckk, hw);
    for (Index co = 0; co < Co; ++co)
      om.row(co).array() += layer.bias.values()[std::size_t(co)];
  }
  STTN_DEBUG_FINITE(out, "conv2d");

  Tape<S>* tp = Tape<S>::current();
  const bool nx = tp && detail::tracked(x, tp);
  const bool nw = tp && detail::tracked(layer.weight, tp);
  const bool nb = tp && detail::tracked(layer.bias, tp);
  if (tp && (nx || nw || nb)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [nx, nw, nb, B, C, H, W, Co, kh, kw, s, p, d, Ho, Wo,
                           ckk, hw, xd = x.ptr(), wd = layer.weight.ptr(),
                           bd = layer.bias.ptr(), od = out.ptr()]() {
      std::vector<S> cols(std::size_t(ckk * hw));
      std::vector<S> dcols(nx ? std::size_t(ckk * hw) : 0);
      if (nx) xd->ensure_grad();
      if (nw) wd->ensure_grad();
      if (nb) bd->ensure_grad();
      detail::CMatMap<S> wm(wd->values.data(), Co, ckk);
      for (Index b = 0; b < B; ++b) {
        detail::CMatMap<S> g(od->grad.data() + b * Co * hw, Co, hw);
        if (nb)
          for (Index co = 0; co < Co; ++co)
            bd->grad[std::size_t(co)] += g.row(co).sum();
        if (nw) {
          detail::im2col(xd->values.data() + b * C * H * W, C, H, W, kh, kw, s,
                         p, d, Ho, Wo, cols.data());
          detail::MatMap<S>(wd->grad.data(), Co, ckk).noalias() +=
              g * detail::CMatMap<S>(cols.data(), ckk, hw).transpose();
        }
        if (nx) {
          detail::MatMap<S>(dcols.data(), ckk, hw).noalias() = wm.transpose() * g;
          detail::col2im_add(dcols.data(), C, H, W, kh, kw, s, p, d, Ho, Wo,
                             xd->grad.data() + b * C * H * W);
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Conv3dLayer<S>& layer) {
  require_shape(x.rank() == 5, "conv3d: input must be [B,C,T,H,W]");
  require_shape(x.dim(1) == layer.in_channels(), "conv3d: channel mismatch");
  const Index B = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3),
              W = x.dim(4);
  const Index Co = layer.out_channels();
  const Index kt = layer.weight.dim(2), kh = layer.weight.dim(3),
              kw = layer.weight.dim(4);
  const auto st = layer.stride;
  const auto pd = layer.padding;
  const Index To = conv_out_extent(T, kt, st[0], pd[0], 1);
  const Index Ho = conv_out_extent(H, kh, st[1], pd[1], 1);
  const Index Wo = conv_out_extent(W, kw, st[2], pd[2], 1);
  const Index ckk = C * kt * kh * kw, thw = To * Ho * Wo;

  Tensor<S> out(Shape{B, Co, To, Ho, Wo});
  std::vector<S> cols(std::size_t(ckk * thw));
  detail::CMatMap<S> wm(layer.weight.data(), Co, ckk);
  for (Index b = 0; b < B; ++b) {
    detail::vol2col(x.data() + b * C * T * H * W, C, T, H, W, kt, kh, kw, st, pd,
                    To, Ho, Wo, cols.data());
    detail::MatMap<S> om(out.data() + b * Co * thw, Co, thw);
    om.noalias() = wm * detail::CMatMap<S>(cols.data(), ckk, thw);
    for (Index co = 0; co < Co; ++co)
      om.row(co).array() += layer.bias.values()[std::size_t(co)];
  }
  STTN_DEBUG_FINITE(out, "conv3d");

  Tape<S>* tp = Tape<S>::current();
  const bool nx = tp && detail::tracked(x, tp);
  const bool nw = tp && detail::tracked(layer.weight, tp);
  const bool nb = tp && detail::tracked(layer.bias, tp);
  if (tp && (nx || nw || nb)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [nx, nw, nb, B, C, T, H, W, Co, kt, kh, kw, st, pd, To,
                           Ho, Wo, ckk, thw, xd = x.ptr(), wd = layer.weight.ptr(),
                           bd = layer.bias.ptr(), od = out.ptr()]() {
      std::vector<S> cols(std::size_t(ckk * thw));
      std::vector<S> dcols(nx ? std::size_t(ckk * thw) : 0);
      if (nx) xd->ensure_grad();
      if (nw) wd->ensure_grad();
      if (nb) bd->ensure_grad();
      detail::CMatMap<S> wm(wd->values.data(), Co, ckk);
      for (Index b = 0; b < B; ++b) {
        detail::CMatMap<S> g(od->grad.data() + b * Co * thw, Co, thw);
        if (nb)
          for (Index co = 0; co < Co; ++co)
            bd->grad[std::size_t(co)] += g.row(co).sum();
        if (nw) {
          detail::vol2col(xd->values.data() + b * C * T * H * W, C, T, H, W, kt,
                          kh, kw, st, pd, To, Ho, Wo, cols.data());
          detail::MatMap<S>(wd->grad.data(), Co, ckk).noalias() +=
              g * detail::CMatMap<S>(cols.data(), ckk, thw).transpose();
        }
        if (nx) {
          detail::MatMap<S>(dcols.data(), ckk, thw).noalias() =
              wm.transpose() * g;
          detail::col2vol_add(dcols.data(), C, T, H, W, kt, kh, kw, st, pd, To,
                              Ho, Wo, xd->grad.data() + b * C * T * H * W);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (align-corners OFF: sample points sit at pixel centers,
// so constant images stay constant).

namespace detail {

struct LerpTap {
  Index i0, i1;
  double w1;  // weight of i1; i0 gets 1-w1
};

inline std::vector<LerpTap> lerp_taps(Index in, Index out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = double(in) / double(out);
  for (Index o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > double(in - 1)) src = double(in - 1);
    const Index i0 = Index(std::floor(src));
    const Index i1 = std::min(i0 + 1, in - 1);
    taps[std::size_t(o)] = {i0, i1, src - double(i0)};
  }
  return taps;
}

}  // namespace detail

template <typename S>
Tensor<S> bilinear_upsample(const Tensor<S>& x, Index factor = 2) {
  require_shape(x.rank() == 4, "bilinear_upsample: input must be [B,C,H,W]");
  require(factor >= 1, "bilinear_upsample: factor must be >= 1");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Ho = H * factor, Wo = W * factor;
  const auto ty = detail::lerp_taps(H, Ho);
  const auto tx = detail::lerp_taps(W, Wo);

  Tensor<S> out(Shape{B, C, Ho, Wo});
  const S* xp = x.data();
  S* op = out.data();
  for (Index bc = 0; bc < B * C; ++bc) {
    const S* plane = xp + bc * H * W;
    S* oplane = op + bc * Ho * Wo;
    for (Index oy = 0; oy < Ho; ++oy) {
      const auto& yt = ty[std::size_t(oy)];
      const S wy1 = S(yt.w1), wy0 = S(1) - wy1;
      const S* r0 = plane + yt.i0 * W;
      const S* r1 = plane + yt.i1 * W;
      S* dst = oplane + oy * Wo;
      for (Index ox = 0; ox < Wo; ++ox) {
        const auto& xt = tx[std::size_t(ox)];
        const S wx1 = S(xt.w1), wx0 = S(1) - wx1;
        dst[ox] = wy0 * (wx0 * r0[xt.i0] + wx1 * r0[xt.i1]) +
                  wy1 * (wx0 * r1[xt.i0] + wx1 * r1[xt.i1]);
      }
    }
  }
  STTN_DEBUG_FINITE(out, "bilinear_upsample");

  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [B, C, H, W, Ho, Wo, ty, tx, xd = x.ptr(),
                           od = out.ptr()]() {
      xd->ensure_grad();
      for (Index bc = 0; bc < B * C; ++bc) {
        S* dplane = xd->grad.data() + bc * H * W;
        const S* gplane = od->grad.data() + bc * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy) {
          const auto& yt = ty[std::size_t(oy)];
          const S wy1 = S(yt.w1), wy0 = S(1) - wy1;
          const S* g = gplane + oy * Wo;
          for (Index ox = 0; ox < Wo; ++ox) {
            const auto& xt = tx[std::size_t(ox)];
            const S wx1 = S(xt.w1), wx0 = S(1) - wx1;
            dplane[yt.i0 * W + xt.i0] += wy0 * wx0 * g[ox];
            dplane[yt.i0 * W + xt.i1] += wy0 * wx1 * g[ox];
            dplane[yt.i1 * W + xt.i0] += wy1 * wx0 * g[ox];
            dplane[yt.i1 * W + xt.i1] += wy1 * wx1 * g[ox];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral normalization

template <typename S>
struct SpectralNormState {
  std::vector<S> u;  // left singular vector estimate, unit norm
  std::vector<S> v;
  Index iterations = 0;

  void init(Index rows, Index cols, Rng& rng) {
    u.resize(std::size_t(rows));
    v.assign(std::size_t(cols), S(0));
    double norm2 = 0;
    for (auto& e : u) {
      e = S(rng.normal());
      norm2 += double(e) * double(e);
    }
    const S inv = S(1.0 / std::sqrt(std::max(norm2, 1e-24)));
    for (auto& e : u) e *= inv;
    iterations = 0;
  }
};

namespace detail {

template <typename S>
void normalize_or_keep(std::vector<S>& x, const std::vector<S>& fallback) {
  double n2 = 0;
  for (S e : x) n2 += double(e) * double(e);
  if (n2 < 1e-24) {
    x = fallback;
    return;
  }
  const S inv = S(1.0 / std::sqrt(n2));
  for (auto& e : x) e *= inv;
}

}  // namespace detail

/// Weight divided by its largest singular value, estimated by one power
/// iteration per call (update=true). The u/v estimates are held constant for
/// differentiation; gradients flow through the bilinear form u^T W v.
template <typename S>
Tensor<S> spectral_normalize(const Tensor<S>& weight, SpectralNormState<S>& state,
                             bool update = true) {
  require_shape(weight.rank() >= 2, "spectral_normalize: weight rank must be >= 2");
  const Index rows = weight.dim(0);
  const Index cols = weight.size() / rows;
  require(Index(state.u.size()) == rows && Index(state.v.size()) == cols,
          "spectral_normalize: state not initialized for this weight");

  if (update) {
    // v = normalize(W^T u); u = normalize(W v), on raw values (off-tape).
    detail::CMatMap<S> wm(weight.data(), rows, cols);
    Eigen::Matrix<S, Eigen::Dynamic, 1> u =
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(state.u.data(), rows);
    Eigen::Matrix<S, Eigen::Dynamic, 1> v = wm.transpose() * u;
    std::vector<S> vv(v.data(), v.data() + cols);
    detail::normalize_or_keep(vv, state.v);
    Eigen::Matrix<S, Eigen::Dynamic, 1> vn =
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(vv.data(), cols);
    Eigen::Matrix<S, Eigen::Dynamic, 1> un = wm * vn;
    std::vector<S> uu(un.data(), un.data() + rows);
    detail::normalize_or_keep(uu, state.u);
    state.u = uu;
    state.v = vv;
    state.iterations++;
  }

  Tensor<S> w2d = reshape(weight, {rows, cols});
  Tensor<S> u_row(Shape{1, rows}, state.u);
  Tensor<S> v_col(Shape{cols, 1}, state.v);
  Tensor<S> sigma = matmul(matmul(u_row, w2d), v_col);  // [1,1]
  if (std::abs(double(sigma.item())) < 1e-12) return weight;  // zero-weight guard
  return reshape(div(w2d, sigma), weight.shape());
}

// ---------------------------------------------------------------------------
// Residual block: x + conv2(leaky_relu(conv1(x))).

template <typename S>
Tensor<S> residual_block(const Tensor<S>& x, const Conv2dLayer<S>& c1,
                         const Conv2dLayer<S>& c2, S slope = S(0.2)) {
  require_shape(c1.in_channels() == x.dim(1) && c2.out_channels() == x.dim(1),
                "residual_block: channel-preserving layers required");
  Tensor<S> f = conv2d(relu_leaky(conv2d(x, c1), slope), c2);
  require_shape(f.shape() == x.shape(),
                "residual_block: inner convs must preserve the spatial size");
  return add(x, f);
}

}  // namespace sttn
