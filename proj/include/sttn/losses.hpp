// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Optimization objectives: region-normalized L1 terms for hole and valid
// pixels, the hinge pair for the discriminator, and the weighted total.

#pragma once

#include "sttn/tensor.hpp"

namespace sttn {

template <typename S>
struct LossWeights {
  S hole = S(1);
  S valid = S(1);
  S adv = S(0.01);
};

namespace detail {

template <typename S>
S mask_sum(const Tensor<S>& m) {
  S acc = 0;
  for (S v : m.values()) {
    require(v == S(0) || v == S(1), "loss: mask must be binary");
    acc += v;
  }
  return acc;
}

/// |region . (a - b)|_1 / |region|_1, with the single-channel region mask
/// broadcast over the color channels of both numerator and denominator, so
/// the result is a mean absolute error per masked color value.
template <typename S>
Tensor<S> l1_region(const Tensor<S>& truth, const Tensor<S>& pred,
                    const Tensor<S>& region, S region_sum, const char* what) {
  require_shape(truth.shape() == pred.shape(), "loss: frame shapes differ");
  require_shape(region.rank() == 4 && region.dim(1) == 1 &&
                    region.dim(0) == truth.dim(0) &&
                    region.dim(2) == truth.dim(2) &&
                    region.dim(3) == truth.dim(3),
                "loss: region mask must be [T,1,H,W] matching the frames");
  const S denom = region_sum * S(truth.dim(1));
  require(denom > S(0), std::string("loss: ") + what + " region is empty");
  return scale(abs_sum(mul(sub(truth, pred), region)), S(1) / denom);
}

}  // namespace detail

/// L1 over hole pixels, normalized by the hole size.
template <typename S>
Tensor<S> l1_hole(const Tensor<S>& truth, const Tensor<S>& pred,
                  const Tensor<S>& masks) {
  return detail::l1_region(truth, pred, masks, detail::mask_sum(masks), "hole");
}

/// L1 over valid pixels, normalized by the valid-region size.
template <typename S>
Tensor<S> l1_valid(const Tensor<S>& truth, const Tensor<S>& pred,
                   const Tensor<S>& masks) {
  const S ones = S(shape_numel(masks.shape()));
  const S inv_sum = ones - detail::mask_sum(masks);
  Tensor<S> inv = affine(masks, S(-1), S(1));
  return detail::l1_region(truth, pred, inv, inv_sum, "valid");
}

/// Hinge objective for the discriminator:
/// mean(relu(1 - D(real))) + mean(relu(1 + D(fake))).
template <typename S>
Tensor<S> d_loss(const Tensor<S>& real_scores, const Tensor<S>& fake_scores) {
  require_shape(real_scores.shape() == fake_scores.shape(),
                "d_loss: score maps differ in shape");
  return add(mean(relu(affine(real_scores, S(-1), S(1)))),
             mean(relu(affine(fake_scores, S(1), S(1)))));
}

/// Generator-side adversarial term: -mean(D(fake)).
template <typename S>
Tensor<S> g_adv_loss(const Tensor<S>& fake_scores) {
  return scale(mean(fake_scores), S(-1));
}

/// lambda_hole * L_hole + lambda_valid * L_valid + lambda_adv * L_adv.
template <typename S>
Tensor<S> total_loss(const Tensor<S>& hole, const Tensor<S>& valid,
                     const Tensor<S>& adv, const LossWeights<S>& w) {
  return add(add(scale(hole, w.hole), scale(valid, w.valid)), scale(adv, w.adv));
}

}  // namespace sttn
