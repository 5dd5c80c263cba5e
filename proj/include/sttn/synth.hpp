// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Synthetic moving-sprite videos with exact ground truth. Sprites translate
// by whole pixels per frame, so the per-pair flow fields are integer-valued
// and bilinear warping reproduces frames exactly on valid pixels.

#pragma once

#include "sttn/metrics.hpp"
#include "sttn/rng.hpp"

namespace sttn {

struct SyntheticSceneSpec {
  Index width = 64;
  Index height = 36;
  Index frames = 20;
  Index sprites = 3;
  Index max_speed = 3;  // px/frame per axis, <= 4
  enum class Background { Gradient, Texture };
  Background background = Background::Gradient;
  bool static_sprites = false;  // zero velocity everywhere (test hook)
  std::uint64_t seed = 0;

  void validate() const {
    require(width >= 16 && height >= 16, "scene: canvas too small");
    require(frames >= 1, "scene: at least one frame");
    require(sprites >= 0, "scene: sprite count");
    require(max_speed >= 0 && max_speed <= 4, "scene: speed must be <= 4 px/frame");
  }
};

template <typename S>
struct Clip {
  Tensor<S> frames;                              // [T,3,H,W] in [0,1]
  FlowField<S> flows;                            // T-1 ground-truth maps
  std::vector<std::vector<Index>> id_maps;       // per frame, H*W owner ids
  std::uint64_t seed = 0;
};

namespace synthdetail {

enum class SpriteShape { Rect, Disc, Diamond };

struct Sprite {
  SpriteShape shape;
  Index size;
  double color[3];
  // trajectory: whole-pixel positions per frame (top-left corner)
  std::vector<Index> xs, ys;

  bool covers(Index dy, Index dx) const {
    const double c = double(size - 1) / 2.0;
    switch (shape) {
      case SpriteShape::Rect:
        return true;
      case SpriteShape::Disc:
        return (double(dy) - c) * (double(dy) - c) +
                   (double(dx) - c) * (double(dx) - c) <=
               c * c + 0.25;
      case SpriteShape::Diamond:
        return std::abs(double(dy) - c) + std::abs(double(dx) - c) <= c + 0.25;
    }
    return false;
  }
};

/// Linear motion with reflection at the walls; positions stay in [0, limit].
inline std::vector<Index> bounce_track(Index start, Index vel, Index limit,
                                       Index frames) {
  std::vector<Index> xs(static_cast<std::size_t>(frames));
  Index p = start, v = vel;
  for (Index t = 0; t < frames; ++t) {
    xs[std::size_t(t)] = p;
    p += v;
    if (p < 0) {
      p = -p;
      v = -v;
    }
    if (p > limit) {
      p = 2 * limit - p;
      v = -v;
    }
  }
  return xs;
}

/// Whole-pixel sinusoidal sweep around a feasible center.
inline std::vector<Index> sine_track(Index limit, double amp, double omega,
                                     double phase, Index center, Index frames) {
  std::vector<Index> xs(static_cast<std::size_t>(frames));
  for (Index t = 0; t < frames; ++t) {
    const Index p =
        center + Index(std::lround(amp * std::sin(omega * double(t) + phase)));
    xs[std::size_t(t)] = std::clamp<Index>(p, 0, limit);
  }
  return xs;
}

}  // namespace synthdetail

/// Deterministic scene render: background plus K moving sprites, topmost
/// drawn last. Per-pair flows carry each pixel's owner displacement; a pixel
/// is valid when its owner is unchanged at the destination (occlusions and
/// uncovered background are masked out).
template <typename S>
Clip<S> generate_clip(const SyntheticSceneSpec& spec) {
  using synthdetail::Sprite;
  using synthdetail::SpriteShape;
  spec.validate();
  Rng rng(spec.seed);
  const Index W = spec.width, H = spec.height, T = spec.frames;

  // background
  std::vector<double> bg(std::size_t(3 * H * W));
  if (spec.background == SyntheticSceneSpec::Background::Gradient) {
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
      c0[c] = rng.uniform(0.1, 0.9);
      c1[c] = rng.uniform(0.1, 0.9);
    }
    const double th = rng.uniform(0, 6.283185307179586);
    const double nx = std::cos(th), ny = std::sin(th);
    const double span = std::abs(nx) * double(W - 1) + std::abs(ny) * double(H - 1);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double t = (nx * double(x) + ny * double(y)) / std::max(span, 1.0);
        t = 0.5 + t * 0.5;
        for (int c = 0; c < 3; ++c)
          bg[std::size_t((c * H + y) * W + x)] = c0[c] + (c1[c] - c0[c]) * t;
      }
  } else {
    for (int c = 0; c < 3; ++c) {
      const double base = rng.uniform(0.25, 0.75);
      const double ax = rng.uniform(0.05, 0.2), ay = rng.uniform(0.05, 0.2);
      const double fx = rng.uniform(1, 3), fy = rng.uniform(1, 3);
      const double px = rng.uniform(0, 6.28), py = rng.uniform(0, 6.28);
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x) {
          const double v =
              base + ax * std::sin(6.283185307179586 * fx * double(x) / double(W) + px) +
              ay * std::sin(6.283185307179586 * fy * double(y) / double(H) + py);
          bg[std::size_t((c * H + y) * W + x)] = std::clamp(v, 0.02, 0.98);
        }
    }
  }

  // sprites
  std::vector<Sprite> sprites;
  for (Index k = 0; k < spec.sprites; ++k) {
    Sprite s;
    s.shape = static_cast<SpriteShape>(rng.uniform_int(3));
    const Index max_size = std::max<Index>(6, std::min({H, W}) / 3);
    s.size = rng.uniform_index(5, max_size);
    for (int c = 0; c < 3; ++c) s.color[c] = rng.uniform(0.05, 0.95);
    const Index lx = W - s.size, ly = H - s.size;

    if (spec.static_sprites || spec.max_speed == 0) {
      s.xs.assign(std::size_t(T), rng.uniform_index(0, lx));
      s.ys.assign(std::size_t(T), rng.uniform_index(0, ly));
    } else if (spec.max_speed < 2 || rng.coin()) {
      Index vx = 0, vy = 0;
      while (vx == 0 && vy == 0) {
        vx = rng.uniform_index(-spec.max_speed, spec.max_speed);
        vy = rng.uniform_index(-spec.max_speed, spec.max_speed);
      }
      s.xs = synthdetail::bounce_track(rng.uniform_index(0, lx), vx, lx, T);
      s.ys = synthdetail::bounce_track(rng.uniform_index(0, ly), vy, ly, T);
    } else {
      // amplitude capped so |frame-to-frame step| <= amp*omega + rounding
      // stays within max_speed
      const double wx = rng.uniform(0.2, 0.9), wy = rng.uniform(0.2, 0.9);
      const double cap_x = double(spec.max_speed - 1) / wx;
      const double cap_y = double(spec.max_speed - 1) / wy;
      const double ax = rng.uniform(1, std::max(1.1, std::min(cap_x, double(lx) / 2.0)));
      const double ay = rng.uniform(1, std::max(1.1, std::min(cap_y, double(ly) / 2.0)));
      const Index cx = rng.uniform_index(Index(ax), std::max<Index>(Index(ax), lx - Index(ax)));
      const Index cy = rng.uniform_index(Index(ay), std::max<Index>(Index(ay), ly - Index(ay)));
      s.xs = synthdetail::sine_track(lx, ax, wx, rng.uniform(0, 6.28), cx, T);
      s.ys = synthdetail::sine_track(ly, ay, wy, rng.uniform(0, 6.28), cy, T);
    }
    sprites.push_back(std::move(s));
  }

  // render
  Clip<S> clip;
  clip.seed = spec.seed;
  clip.frames = Tensor<S>(Shape{T, 3, H, W});
  clip.id_maps.assign(std::size_t(T), std::vector<Index>(std::size_t(H * W), 0));
  auto fv = clip.frames.mutable_values();
  for (Index t = 0; t < T; ++t) {
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < H * W; ++i)
        fv[std::size_t(((t * 3 + c) * H * W) + i)] = S(bg[std::size_t(c * H * W + i)]);
    for (Index k = 0; k < Index(sprites.size()); ++k) {
      const Sprite& s = sprites[std::size_t(k)];
      const Index ox = s.xs[std::size_t(t)], oy = s.ys[std::size_t(t)];
      for (Index dy = 0; dy < s.size; ++dy)
        for (Index dx = 0; dx < s.size; ++dx) {
          if (!s.covers(dy, dx)) continue;
          const Index y = oy + dy, x = ox + dx;
          clip.id_maps[std::size_t(t)][std::size_t(y * W + x)] = k + 1;
          for (Index c = 0; c < 3; ++c)
            fv[std::size_t(((t * 3 + c) * H + y) * W + x)] = S(s.color[c]);
        }
    }
  }

  // exact flows + occlusion-aware validity
  for (Index t = 0; t + 1 < T; ++t) {
    Tensor<S> fl(Shape{H, W, 2});
    std::vector<std::uint8_t> valid(std::size_t(H * W), 0);
    auto flv = fl.mutable_values();
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const Index owner = clip.id_maps[std::size_t(t)][std::size_t(y * W + x)];
        Index dx = 0, dy = 0;
        if (owner > 0) {
          const Sprite& s = sprites[std::size_t(owner - 1)];
          dx = s.xs[std::size_t(t + 1)] - s.xs[std::size_t(t)];
          dy = s.ys[std::size_t(t + 1)] - s.ys[std::size_t(t)];
        }
        flv[std::size_t((y * W + x) * 2 + 0)] = S(dx);
        flv[std::size_t((y * W + x) * 2 + 1)] = S(dy);
        const Index tx = x + dx, ty = y + dy;
        if (tx >= 0 && tx < W && ty >= 0 && ty < H &&
            clip.id_maps[std::size_t(t + 1)][std::size_t(ty * W + tx)] == owner)
          valid[std::size_t(y * W + x)] = 1;
      }
    clip.flows.flow.push_back(std::move(fl));
    clip.flows.valid.push_back(std::move(valid));
  }
  return clip;
}

}  // namespace sttn
