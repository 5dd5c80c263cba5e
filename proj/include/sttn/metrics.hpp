// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Quantitative evaluation: PSNR (capped at 100 dB), windowed SSIM on
// luminance, and the optical-flow warping error for temporal stability.
//
// Flow convention: flows[t] lives on frame t's pixel grid and carries the
// forward displacement of the content at each pixel, so frame_t(p) should
// photometrically match frame_{t+1}(p + flow[t](p)) wherever the flow is
// valid (no occlusion, destination in bounds).

#pragma once

#include <cmath>

#include "sttn/tensor.hpp"

namespace sttn {

/// Peak signal-to-noise ratio in dB for videos/images in [0,1].
/// Identical inputs return the 100 dB cap.
template <typename S>
double psnr(const Tensor<S>& a, const Tensor<S>& b) {
  require_shape(a.shape() == b.shape(), "psnr: shape mismatch");
  double mse = 0;
  const Index n = a.size();
  for (Index i = 0; i < n; ++i) {
    const double d = double(a.values()[std::size_t(i)]) -
                     double(b.values()[std::size_t(i)]);
    mse += d * d;
  }
  mse /= double(n);
  if (mse <= 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

/// PSNR restricted to pixels where region == 1 (all channels). The region
/// mask is [T,1,H,W] against [T,C,H,W] frames.
template <typename S>
double psnr_region(const Tensor<S>& a, const Tensor<S>& b,
                   const Tensor<S>& region) {
  require_shape(a.shape() == b.shape(), "psnr_region: shape mismatch");
  const Index T = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  double mse = 0;
  Index count = 0;
  for (Index t = 0; t < T; ++t)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        if (region.at({t, 0, y, x}) != S(1)) continue;
        for (Index c = 0; c < C; ++c) {
          const double d = double(a.at({t, c, y, x})) - double(b.at({t, c, y, x}));
          mse += d * d;
          ++count;
        }
      }
  require(count > 0, "psnr_region: empty region");
  mse /= double(count);
  if (mse <= 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> gaussian_window(Index size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = double(size - 1) / 2.0;
  double sum = 0;
  for (Index i = 0; i < size; ++i) {
    w[std::size_t(i)] = std::exp(-(double(i) - c) * (double(i) - c) /
                                 (2.0 * sigma * sigma));
    sum += w[std::size_t(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

/// [T,C,H,W] -> per-frame luminance planes (Rec. 601 weights for RGB).
template <typename S>
std::vector<std::vector<double>> luminance_planes(const Tensor<S>& v) {
  const Index T = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  std::vector<std::vector<double>> planes(
      std::size_t(T), std::vector<double>(std::size_t(H * W)));
  for (Index t = 0; t < T; ++t)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double lum;
        if (C == 3)
          lum = 0.299 * double(v.at({t, 0, y, x})) +
                0.587 * double(v.at({t, 1, y, x})) +
                0.114 * double(v.at({t, 2, y, x}));
        else
          lum = double(v.at({t, 0, y, x}));
        planes[std::size_t(t)][std::size_t(y * W + x)] = lum;
      }
  return planes;
}

}  // namespace detail

/// Mean local SSIM over all frames, computed on luminance with an 11x11
/// Gaussian window (sigma 1.5) over fully contained window positions.
template <typename S>
double ssim(const Tensor<S>& a, const Tensor<S>& b, Index window = 11,
            double k1 = 0.01, double k2 = 0.03, double sigma = 1.5) {
  require_shape(a.shape() == b.shape(), "ssim: shape mismatch");
  require_shape(a.rank() == 4, "ssim: expected [T,C,H,W] input");
  const Index T = a.dim(0), H = a.dim(2), W = a.dim(3);
  require_shape(H >= window && W >= window,
                "ssim: image smaller than the window");
  const auto wa = detail::luminance_planes(a);
  const auto wb = detail::luminance_planes(b);
  const auto win = detail::gaussian_window(window, sigma);
  const double c1 = k1 * k1, c2 = k2 * k2;  // dynamic range L = 1

  double total = 0;
  Index count = 0;
  for (Index t = 0; t < T; ++t) {
    const auto& pa = wa[std::size_t(t)];
    const auto& pb = wb[std::size_t(t)];
    for (Index y = 0; y + window <= H; ++y) {
      for (Index x = 0; x + window <= W; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (Index wy = 0; wy < window; ++wy)
          for (Index wx = 0; wx < window; ++wx) {
            const double wgt = win[std::size_t(wy)] * win[std::size_t(wx)];
            const double va = pa[std::size_t((y + wy) * W + x + wx)];
            const double vb = pb[std::size_t((y + wy) * W + x + wx)];
            mx += wgt * va;
            my += wgt * vb;
            sxx += wgt * va * va;
            syy += wgt * vb * vb;
            sxy += wgt * va * vb;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my;
        const double cxy = sxy - mx * my;
        const double val = ((2 * mx * my + c1) * (2 * cxy + c2)) /
                           ((mx * mx + my * my + c1) * (vx + vy + c2));
        total += val;
        ++count;
      }
    }
  }
  return total / double(count);
}

/// Ground-truth displacement maps for consecutive frame pairs, with
/// occlusion-aware validity.
template <typename S>
struct FlowField {
  std::vector<Tensor<S>> flow;                    // T-1 maps, each [H,W,2] (dx,dy)
  std::vector<std::vector<std::uint8_t>> valid;   // T-1 masks, each H*W

  void check(Index T, Index H, Index W) const {
    require(Index(flow.size()) == T - 1 && valid.size() == flow.size(),
            "flow field: need one map per consecutive frame pair");
    for (const auto& f : flow) {
      require_shape(f.shape() == Shape{H, W, 2}, "flow field: map shape");
      for (S v : f.values())
        require(std::isfinite(double(v)), "flow field: non-finite displacement");
    }
  }
};

/// Mean absolute photometric error between each frame and its successor
/// pulled back along the flow, over valid in-bounds pixels, with bilinear
/// sampling of the successor frame.
template <typename S>
double warping_error(const Tensor<S>& video, const FlowField<S>& flows) {
  require_shape(video.rank() == 4, "warping_error: expected [T,C,H,W]");
  const Index T = video.dim(0), C = video.dim(1), H = video.dim(2),
              W = video.dim(3);
  require(T >= 2, "warping_error: need at least two frames");
  flows.check(T, H, W);

  auto sample = [&](Index t, Index c, double y, double x) {
    const Index x0 = Index(std::floor(x)), y0 = Index(std::floor(y));
    const Index x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    const double fx = x - double(x0), fy = y - double(y0);
    const double v00 = double(video.at({t, c, y0, x0}));
    const double v01 = double(video.at({t, c, y0, x1}));
    const double v10 = double(video.at({t, c, y1, x0}));
    const double v11 = double(video.at({t, c, y1, x1}));
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) +
           fy * ((1 - fx) * v10 + fx * v11);
  };

  double total = 0;
  Index count = 0;
  for (Index t = 0; t + 1 < T; ++t) {
    const auto& fl = flows.flow[std::size_t(t)];
    const auto& va = flows.valid[std::size_t(t)];
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        if (!va[std::size_t(y * W + x)]) continue;
        const double dx = double(fl.at({y, x, 0}));
        const double dy = double(fl.at({y, x, 1}));
        const double sx = double(x) + dx, sy = double(y) + dy;
        if (sx < 0 || sx > double(W - 1) || sy < 0 || sy > double(H - 1))
          continue;
        for (Index c = 0; c < C; ++c) {
          total += std::abs(double(video.at({t, c, y, x})) -
                            sample(t + 1, c, sy, sx));
          ++count;
        }
      }
  }
  require(count > 0, "warping_error: no valid pixels");
  return total / double(count);
}

}  // namespace sttn
