// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Multi-head, multi-scale spatial-temporal attention over flattened frame
// patches: embed to query/key/value, match by scaled dot products, weight by
// a visibility-masked softmax, and attend by a weighted sum of value patches.
// Row reductions over attention supports run in a canonical (value-sorted)
// order, so jointly permuting key/value patches leaves the output bit-equal.

#pragma once

#include <cstdint>
#include <limits>

#include "sttn/layers.hpp"
#include "sttn/patches.hpp"

namespace sttn {

/// Multiply-add count of the two attention matrix products (match + attend).
/// Grows with the square of the patch count, i.e. quadratically in T.
struct AttentionFlops {
  std::uint64_t flops = 0;
  void reset() { flops = 0; }
};

inline AttentionFlops& attention_flops() {
  thread_local AttentionFlops counter;
  return counter;
}

template <typename S>
struct TransformerLayer {
  struct Head {
    Conv2dLayer<S> embed_q, embed_k, embed_v;  // 1x1, c -> c/num_heads
    Index r1 = 0, r2 = 0;                      // patch shape at feature scale
  };
  std::vector<Head> heads;
  Conv2dLayer<S> fusion;        // 1x1, c -> c
  Conv2dLayer<S> res1, res2;    // 3x3 residual pair

  static TransformerLayer make(Index channels,
                               const std::vector<std::array<Index, 2>>& patches,
                               Rng& rng) {
    require(!patches.empty(), "transformer: at least one head required");
    require_shape(channels % Index(patches.size()) == 0,
                  "transformer: channels must split evenly across heads");
    const Index c_head = channels / Index(patches.size());
    TransformerLayer layer;
    for (const auto& p : patches) {
      Head h;
      h.embed_q = Conv2dLayer<S>::make(channels, c_head, 1, 1, 0, rng);
      h.embed_k = Conv2dLayer<S>::make(channels, c_head, 1, 1, 0, rng);
      h.embed_v = Conv2dLayer<S>::make(channels, c_head, 1, 1, 0, rng);
      h.r1 = p[0];
      h.r2 = p[1];
      layer.heads.push_back(std::move(h));
    }
    layer.fusion = Conv2dLayer<S>::make(channels, channels, 1, 1, 0, rng);
    layer.res1 = Conv2dLayer<S>::make(channels, channels, 3, 1, 1, rng);
    layer.res2 = Conv2dLayer<S>::make(channels, channels, 3, 1, 1, rng);
    return layer;
  }
};

/// Per-head attention matrices kept for inspection / heatmap dumps. Rows over
/// visible keys sum to 1; columns of invisible keys are exactly zero.
template <typename S>
struct AttentionTrace {
  struct HeadTrace {
    Tensor<S> alpha;  // [N, N], detached copy
    Index r1 = 0, r2 = 0, t = 0, gh = 0, gw = 0;
    std::vector<std::uint8_t> visibility;
  };
  std::vector<HeadTrace> heads;
};

template <typename S>
struct HeadEmbedding {
  Tensor<S> q, k, v;  // [T, c_head, h, w]
};

/// Embedding step: three 1x1 convolutions per head, spatial size preserved.
template <typename S>
std::vector<HeadEmbedding<S>> embed(const Tensor<S>& f,
                                    const TransformerLayer<S>& layer) {
  require_shape(f.rank() == 4, "embed: features must be [T,c,h,w]");
  require_shape(f.dim(1) % Index(layer.heads.size()) == 0,
                "embed: channels do not split across heads");
  std::vector<HeadEmbedding<S>> out;
  out.reserve(layer.heads.size());
  for (const auto& head : layer.heads)
    out.push_back({conv2d(f, head.embed_q), conv2d(f, head.embed_k),
                   conv2d(f, head.embed_v)});
  return out;
}

/// Matching step: s[i,j] = <q_i, k_j> / sqrt(r1*r2*c_head), one matrix product.
template <typename S>
Tensor<S> match(const PatchGrid<S>& q, const PatchGrid<S>& k) {
  require_shape(q.count() == k.count() && q.patch_len() == k.patch_len(),
                "match: query/key grids disagree");
  const Index n = q.count(), len = q.patch_len();
  attention_flops().flops += std::uint64_t(2) * std::uint64_t(n) *
                             std::uint64_t(n) * std::uint64_t(len);
  const S norm = S(1.0 / std::sqrt(double(len)));
  return scale(matmul_nt(q.patches, k.patches), norm);
}

/// Masked softmax over each row's visible keys. Invisible keys get an exact
/// zero; visible weights of a row sum to 1.
template <typename S>
Tensor<S> attention_weights(const Tensor<S>& sim,
                            const std::vector<std::uint8_t>& visibility) {
  require_shape(sim.rank() == 2 && sim.dim(0) == sim.dim(1),
                "attention_weights: similarity matrix must be square");
  const Index n = sim.dim(0);
  require_shape(Index(visibility.size()) == n,
                "attention_weights: visibility size mismatch");
  Index visible = 0;
  for (auto v : visibility) visible += v ? 1 : 0;
  require(visible > 0, "attention_weights: no visible keys (empty support)");

  Tensor<S> out(Shape{n, n});
  const S* sp = sim.data();
  S* op = out.data();
  std::vector<S> buf(static_cast<std::size_t>(visible));
  for (Index i = 0; i < n; ++i) {
    const S* row = sp + i * n;
    S* orow = op + i * n;
    S m = -std::numeric_limits<S>::infinity();
    for (Index j = 0; j < n; ++j)
      if (visibility[std::size_t(j)] && row[j] > m) m = row[j];
    Index b = 0;
    for (Index j = 0; j < n; ++j) {
      if (visibility[std::size_t(j)]) {
        const S e = std::exp(row[j] - m);
        orow[j] = e;
        buf[std::size_t(b++)] = e;
      } else {
        orow[j] = S(0);
      }
    }
    const S denom = detail::canonical_sum(buf);
    for (Index j = 0; j < n; ++j)
      if (visibility[std::size_t(j)]) orow[j] /= denom;
  }
  STTN_DEBUG_FINITE(out, "attention_weights");

  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(sim, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [n, visibility, sd = sim.ptr(), od = out.ptr()]() {
      sd->ensure_grad();
      for (Index i = 0; i < n; ++i) {
        const S* a = od->values.data() + i * n;
        const S* g = od->grad.data() + i * n;
        S dot = 0;
        for (Index j = 0; j < n; ++j)
          if (visibility[std::size_t(j)]) dot += g[j] * a[j];
        S* ds = sd->grad.data() + i * n;
        for (Index j = 0; j < n; ++j)
          if (visibility[std::size_t(j)]) ds[j] += a[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

/// Attending step: o_i = sum_j alpha[i,j] * v_j over the visible support.
/// Accumulation order is sorted by weight, not by storage index.
template <typename S>
PatchGrid<S> attend(const Tensor<S>& alpha, const PatchGrid<S>& values) {
  const Index n = values.count(), len = values.patch_len();
  require_shape(alpha.rank() == 2 && alpha.dim(0) == n && alpha.dim(1) == n,
                "attend: weight matrix does not match the value grid");
  attention_flops().flops += std::uint64_t(2) * std::uint64_t(n) *
                             std::uint64_t(n) * std::uint64_t(len);

  Tensor<S> out(Shape{n, len});
  const S* ap = alpha.data();
  const S* vp = values.patches.data();
  S* op = out.data();
  std::vector<std::pair<S, Index>> order;
  order.reserve(std::size_t(n));
  for (Index i = 0; i < n; ++i) {
    const S* arow = ap + i * n;
    order.clear();
    for (Index j = 0; j < n; ++j)
      if (values.visibility[std::size_t(j)]) order.emplace_back(arow[j], j);
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    detail::ArrMap<S> orow(op + i * len, len);
    orow.setZero();
    for (const auto& [w, j] : order)
      orow += w * detail::CArrMap<S>(vp + j * len, len);
  }
  STTN_DEBUG_FINITE(out, "attend");

  Tape<S>* tp = Tape<S>::current();
  const bool na = tp && detail::tracked(alpha, tp);
  const bool nv = tp && detail::tracked(values.patches, tp);
  if (tp && (na || nv)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [na, nv, n, len, ad = alpha.ptr(),
                           vd = values.patches.ptr(), od = out.ptr()]() {
      detail::CMatMap<S> g(od->grad.data(), n, len);
      if (na) {
        ad->ensure_grad();
        detail::MatMap<S>(ad->grad.data(), n, n).noalias() +=
            g * detail::CMatMap<S>(vd->values.data(), n, len).transpose();
      }
      if (nv) {
        vd->ensure_grad();
        detail::MatMap<S>(vd->grad.data(), n, len).noalias() +=
            detail::CMatMap<S>(ad->values.data(), n, n).transpose() * g;
      }
    });
  }

  PatchGrid<S> result;
  result.patches = out;
  result.r1 = values.r1;
  result.r2 = values.r2;
  result.c = values.c;
  result.t = values.t;
  result.gh = values.gh;
  result.gw = values.gw;
  result.visibility.assign(std::size_t(n), 1);
  return result;
}

/// One full transformer layer: per-head embed/match/attend, head concat,
/// 1x1 fusion, then the 3x3 residual block. Output shape equals input shape.
template <typename S>
Tensor<S> layer_forward(const Tensor<S>& f, const Tensor<S>& mask_feat,
                        const TransformerLayer<S>& layer,
                        double visibility_threshold = 0.0,
                        AttentionTrace<S>* trace = nullptr) {
  require_shape(f.rank() == 4, "layer_forward: features must be [T,c,h,w]");
  std::vector<HeadEmbedding<S>> emb = embed(f, layer);
  std::vector<Tensor<S>> head_outputs;
  head_outputs.reserve(layer.heads.size());
  for (std::size_t hi = 0; hi < layer.heads.size(); ++hi) {
    const auto& head = layer.heads[hi];
    PatchGrid<S> qg = extract_patches(emb[hi].q, head.r1, head.r2);
    PatchGrid<S> kg = extract_patches(emb[hi].k, head.r1, head.r2);
    PatchGrid<S> vg = extract_patches(emb[hi].v, head.r1, head.r2);
    kg.visibility =
        patch_visibility(mask_feat, head.r1, head.r2, visibility_threshold);
    vg.visibility = kg.visibility;
    Tensor<S> sim = match(qg, kg);
    Tensor<S> alpha = attention_weights(sim, kg.visibility);
    if (trace) {
      typename AttentionTrace<S>::HeadTrace ht;
      ht.alpha = detach(alpha);
      ht.r1 = head.r1;
      ht.r2 = head.r2;
      ht.t = kg.t;
      ht.gh = kg.gh;
      ht.gw = kg.gw;
      ht.visibility = kg.visibility;
      trace->heads.push_back(std::move(ht));
    }
    head_outputs.push_back(reassemble(attend(alpha, vg)));
  }
  Tensor<S> fused = conv2d(concat(head_outputs, 1), layer.fusion);
  return residual_block(fused, layer.res1, layer.res2);
}

/// Stacked layers; visibility stays fixed to the input mask across the stack.
template <typename S>
Tensor<S> stack_forward(const Tensor<S>& f, const Tensor<S>& mask_feat,
                        const std::vector<TransformerLayer<S>>& layers,
                        double visibility_threshold = 0.0,
                        std::vector<AttentionTrace<S>>* traces = nullptr) {
  require(!layers.empty(), "stack_forward: at least one layer required");
  Tensor<S> x = f;
  for (const auto& layer : layers) {
    AttentionTrace<S> trace;
    x = layer_forward(x, mask_feat, layer, visibility_threshold,
                      traces ? &trace : nullptr);
    if (traces) traces->push_back(std::move(trace));
  }
  return x;
}

}  // namespace sttn
