// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Brute-force reference implementations used as test oracles. These stay
// loop-based on purpose and never share code with the library paths they
// verify.

#pragma once

#include "sttn/layers.hpp"

namespace oracles {

using sttn::Index;
using sttn::Shape;
using sttn::Tensor;

inline Tensor<double> conv2d_naive(const Tensor<double>& x,
                                   const sttn::Conv2dLayer<double>& l) {
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Co = l.weight.dim(0), kh = l.weight.dim(2), kw = l.weight.dim(3);
  const Index s = l.stride, p = l.padding, d = l.dilation;
  const Index Ho = (H + 2 * p - d * (kh - 1) - 1) / s + 1;
  const Index Wo = (W + 2 * p - d * (kw - 1) - 1) / s + 1;
  Tensor<double> out(Shape{B, Co, Ho, Wo});
  auto ov = out.mutable_values();
  for (Index b = 0; b < B; ++b)
    for (Index co = 0; co < Co; ++co)
      for (Index oy = 0; oy < Ho; ++oy)
        for (Index ox = 0; ox < Wo; ++ox) {
          double acc = l.bias.values()[std::size_t(co)];
          for (Index ci = 0; ci < C; ++ci)
            for (Index ky = 0; ky < kh; ++ky)
              for (Index kx = 0; kx < kw; ++kx) {
                const Index iy = oy * s - p + ky * d;
                const Index ix = ox * s - p + kx * d;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.at({b, ci, iy, ix}) * l.weight.at({co, ci, ky, kx});
              }
          ov[std::size_t(((b * Co + co) * Ho + oy) * Wo + ox)] = acc;
        }
  return out;
}

inline Tensor<double> conv3d_naive(const Tensor<double>& x,
                                   const sttn::Conv3dLayer<double>& l) {
  const Index B = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3),
              W = x.dim(4);
  const Index Co = l.weight.dim(0), kt = l.weight.dim(2), kh = l.weight.dim(3),
              kw = l.weight.dim(4);
  const auto s = l.stride;
  const auto p = l.padding;
  const Index To = (T + 2 * p[0] - (kt - 1) - 1) / s[0] + 1;
  const Index Ho = (H + 2 * p[1] - (kh - 1) - 1) / s[1] + 1;
  const Index Wo = (W + 2 * p[2] - (kw - 1) - 1) / s[2] + 1;
  Tensor<double> out(Shape{B, Co, To, Ho, Wo});
  auto ov = out.mutable_values();
  Index flat = 0;
  for (Index b = 0; b < B; ++b)
    for (Index co = 0; co < Co; ++co)
      for (Index ot = 0; ot < To; ++ot)
        for (Index oy = 0; oy < Ho; ++oy)
          for (Index ox = 0; ox < Wo; ++ox) {
            double acc = l.bias.values()[std::size_t(co)];
            for (Index ci = 0; ci < C; ++ci)
              for (Index tz = 0; tz < kt; ++tz)
                for (Index ky = 0; ky < kh; ++ky)
                  for (Index kx = 0; kx < kw; ++kx) {
                    const Index it = ot * s[0] - p[0] + tz;
                    const Index iy = oy * s[1] - p[1] + ky;
                    const Index ix = ox * s[2] - p[2] + kx;
                    if (it < 0 || it >= T || iy < 0 || iy >= H || ix < 0 ||
                        ix >= W)
                      continue;
                    acc += x.at({b, ci, it, iy, ix}) *
                           l.weight.at({co, ci, tz, ky, kx});
                  }
            ov[std::size_t(flat++)] = acc;
          }
  return out;
}

/// Masked softmax over one row, exponentiating only visible entries.
inline void masked_softmax_row_naive(const double* s, Index n,
                                     const std::vector<std::uint8_t>& vis,
                                     double* out) {
  double m = -1e300;
  for (Index j = 0; j < n; ++j)
    if (vis[std::size_t(j)] && s[j] > m) m = s[j];
  double denom = 0;
  for (Index j = 0; j < n; ++j)
    if (vis[std::size_t(j)]) denom += std::exp(s[j] - m);
  for (Index j = 0; j < n; ++j)
    out[j] = vis[std::size_t(j)] ? std::exp(s[j] - m) / denom : 0.0;
}

}  // namespace oracles
