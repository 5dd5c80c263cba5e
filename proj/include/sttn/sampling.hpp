// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Frame selection for inference windows: a neighborhood around the target
// frame plus distant frames sampled at a fixed stride across the whole video.

#pragma once

#include "sttn/tensor.hpp"

namespace sttn {

struct SamplingPlan {
  Index target = 0;      // 0-based target frame
  Index radius = 2;      // neighborhood half-width n
  Index rate = 10;       // distant-frame stride s
  bool use_distant = true;

  void validate(Index video_len) const {
    require(video_len > 0, "sampling: empty video");
    require(target >= 0 && target < video_len, "sampling: target out of range");
    require(radius >= 0, "sampling: radius must be nonnegative");
    require(rate >= 1, "sampling: rate must be positive");
  }
};

/// Selected indices: neighbors [target-n, target+n] clipped to the video,
/// then distant frames {0, s, 2s, ...} that fall outside the neighborhood.
/// Never duplicates an index; always contains the target. When the rate
/// exceeds the video length only frame 0 remains a distant candidate.
inline std::vector<Index> plan_indices(Index video_len, const SamplingPlan& plan) {
  plan.validate(video_len);
  std::vector<Index> out;
  const Index lo = std::max<Index>(0, plan.target - plan.radius);
  const Index hi = std::min<Index>(video_len - 1, plan.target + plan.radius);
  for (Index i = lo; i <= hi; ++i) out.push_back(i);
  if (plan.use_distant)
    for (Index i = 0; i < video_len; i += plan.rate)
      if (i < lo || i > hi) out.push_back(i);
  return out;
}

/// Gather the planned frames (and masks) into model-input order:
/// neighbors first, then distant frames.
template <typename S>
struct BatchSelection {
  Tensor<S> frames;            // [K,3,H,W]
  Tensor<S> masks;             // [K,1,H,W]
  std::vector<Index> indices;  // source index per batch row
};

template <typename S>
BatchSelection<S> build_batch(const Tensor<S>& frames, const Tensor<S>& masks,
                              const SamplingPlan& plan) {
  require_shape(frames.rank() == 4 && masks.rank() == 4 &&
                    frames.dim(0) == masks.dim(0),
                "build_batch: frames/masks disagree");
  const std::vector<Index> idx = plan_indices(frames.dim(0), plan);
  require(!idx.empty(), "build_batch: empty selection");
  const Index K = Index(idx.size());
  const Index fstride = frames.size() / frames.dim(0);
  const Index mstride = masks.size() / masks.dim(0);
  Shape fs = frames.shape();
  fs[0] = K;
  Shape ms = masks.shape();
  ms[0] = K;
  BatchSelection<S> sel;
  sel.frames = Tensor<S>(fs);
  sel.masks = Tensor<S>(ms);
  sel.indices = idx;
  for (Index k = 0; k < K; ++k) {
    std::copy_n(frames.data() + idx[std::size_t(k)] * fstride, fstride,
                sel.frames.data() + k * fstride);
    std::copy_n(masks.data() + idx[std::size_t(k)] * mstride, mstride,
                sel.masks.data() + k * mstride);
  }
  return sel;
}

}  // namespace sttn
