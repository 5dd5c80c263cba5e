// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Non-overlapping patch extraction/reassembly over per-frame feature maps,
// and patch-level visibility derived from hole masks.

#pragma once

#include <cstdint>

#include "sttn/tensor.hpp"

namespace sttn {

/// Flattened spatial patches of a [T,c,h,w] feature volume. Rows are ordered
/// frame-major, then grid row-major; within a row the layout is channel-major
/// (ch, py, px). Extraction is a bijection, so reassemble(extract(f)) == f
/// bit for bit.
template <typename S>
struct PatchGrid {
  Tensor<S> patches;  // [N, L], N = t*gh*gw, L = c*r1*r2
  Index r1 = 0, r2 = 0, c = 0;
  Index t = 0, gh = 0, gw = 0;
  std::vector<std::uint8_t> visibility;  // 1 = patch in the visible set

  Index count() const { return t * gh * gw; }
  Index patch_len() const { return c * r1 * r2; }
};

namespace detail {

/// patch-flat index -> tensor-flat index; a permutation of [0, T*c*h*w).
inline std::shared_ptr<std::vector<Index>> patch_index_map(Index T, Index c,
                                                           Index h, Index w,
                                                           Index r1, Index r2) {
  const Index gh = h / r1, gw = w / r2;
  auto map = std::make_shared<std::vector<Index>>(std::size_t(T * c * h * w));
  Index flat = 0;
  for (Index t = 0; t < T; ++t)
    for (Index gy = 0; gy < gh; ++gy)
      for (Index gx = 0; gx < gw; ++gx)
        for (Index ch = 0; ch < c; ++ch)
          for (Index py = 0; py < r1; ++py)
            for (Index px = 0; px < r2; ++px)
              (*map)[std::size_t(flat++)] =
                  ((t * c + ch) * h + gy * r1 + py) * w + gx * r2 + px;
  return map;
}

}  // namespace detail

template <typename S>
PatchGrid<S> extract_patches(const Tensor<S>& features, Index r1, Index r2) {
  require_shape(features.rank() == 4, "extract_patches: input must be [T,c,h,w]");
  const Index T = features.dim(0), c = features.dim(1), h = features.dim(2),
              w = features.dim(3);
  require_shape(r1 > 0 && r2 > 0 && h % r1 == 0 && w % r2 == 0,
                "extract_patches: patch shape " + std::to_string(r1) + "x" +
                    std::to_string(r2) + " does not divide " + std::to_string(h) +
                    "x" + std::to_string(w));
  PatchGrid<S> grid;
  grid.r1 = r1;
  grid.r2 = r2;
  grid.c = c;
  grid.t = T;
  grid.gh = h / r1;
  grid.gw = w / r2;
  grid.visibility.assign(std::size_t(grid.count()), 1);

  auto map = detail::patch_index_map(T, c, h, w, r1, r2);
  Tensor<S> out(Shape{grid.count(), grid.patch_len()});
  const S* xp = features.data();
  S* op = out.data();
  const Index n = features.size();
  for (Index i = 0; i < n; ++i) op[i] = xp[(*map)[std::size_t(i)]];

  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(features, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [map, xd = features.ptr(), od = out.ptr()]() {
      xd->ensure_grad();
      const Index n = xd->size();
      for (Index i = 0; i < n; ++i)
        xd->grad[std::size_t((*map)[std::size_t(i)])] += od->grad[std::size_t(i)];
    });
  }
  grid.patches = out;
  return grid;
}

/// Exact inverse of extract_patches.
template <typename S>
Tensor<S> reassemble(const PatchGrid<S>& grid) {
  require_shape(grid.patches.defined() && grid.patches.rank() == 2,
                "reassemble: grid has no patch matrix");
  require_shape(grid.patches.dim(0) == grid.count() &&
                    grid.patches.dim(1) == grid.patch_len(),
                "reassemble: patch matrix does not match grid metadata");
  const Index h = grid.gh * grid.r1, w = grid.gw * grid.r2;
  auto map = detail::patch_index_map(grid.t, grid.c, h, w, grid.r1, grid.r2);
  Tensor<S> out(Shape{grid.t, grid.c, h, w});
  const S* pp = grid.patches.data();
  S* op = out.data();
  const Index n = out.size();
  for (Index i = 0; i < n; ++i) op[(*map)[std::size_t(i)]] = pp[i];

  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(grid.patches, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [map, pd = grid.patches.ptr(), od = out.ptr()]() {
      pd->ensure_grad();
      const Index n = pd->size();
      for (Index i = 0; i < n; ++i)
        pd->grad[std::size_t(i)] += od->grad[std::size_t((*map)[std::size_t(i)])];
    });
  }
  return out;
}

/// A patch is visible iff its masked-pixel fraction is <= threshold.
/// threshold 0 excludes any patch touching the hole.
template <typename S>
std::vector<std::uint8_t> patch_visibility(const Tensor<S>& mask, Index r1,
                                           Index r2, double threshold) {
  require_shape(mask.rank() == 4 && mask.dim(1) == 1,
                "patch_visibility: mask must be [T,1,h,w]");
  const Index T = mask.dim(0), h = mask.dim(2), w = mask.dim(3);
  require_shape(h % r1 == 0 && w % r2 == 0,
                "patch_visibility: patch shape does not divide the mask");
  for (S v : mask.values())
    require(v == S(0) || v == S(1), "patch_visibility: mask must be binary");
  const Index gh = h / r1, gw = w / r2;
  std::vector<std::uint8_t> vis(std::size_t(T * gh * gw));
  const S* mp = mask.data();
  const double total = double(r1 * r2);
  for (Index t = 0; t < T; ++t) {
    for (Index gy = 0; gy < gh; ++gy) {
      for (Index gx = 0; gx < gw; ++gx) {
        Index masked = 0;
        for (Index py = 0; py < r1; ++py)
          for (Index px = 0; px < r2; ++px)
            masked += Index(mp[(t * h + gy * r1 + py) * w + gx * r2 + px]);
        vis[std::size_t((t * gh + gy) * gw + gx)] =
            double(masked) <= threshold * total ? 1 : 0;
      }
    }
  }
  return vis;
}

/// Max-pool a [T,1,H,W] binary mask down by an integer factor: a feature
/// pixel counts as masked if any covered input pixel is masked.
template <typename S>
Tensor<S> downsample_mask_max(const Tensor<S>& mask, Index factor) {
  require_shape(mask.rank() == 4 && mask.dim(1) == 1,
                "downsample_mask_max: mask must be [T,1,H,W]");
  const Index T = mask.dim(0), H = mask.dim(2), W = mask.dim(3);
  require_shape(H % factor == 0 && W % factor == 0,
                "downsample_mask_max: factor must divide the mask size");
  const Index h = H / factor, w = W / factor;
  Tensor<S> out(Shape{T, 1, h, w});
  const S* mp = mask.data();
  S* op = out.data();
  for (Index t = 0; t < T; ++t) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        S m = S(0);
        for (Index dy = 0; dy < factor && m == S(0); ++dy)
          for (Index dx = 0; dx < factor; ++dx)
            m = std::max(m, mp[(t * H + y * factor + dy) * W + x * factor + dx]);
        op[(t * h + y) * w + x] = m;
      }
    }
  }
  return out;
}

}  // namespace sttn
