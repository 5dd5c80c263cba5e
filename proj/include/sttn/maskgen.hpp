// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Stationary free-form mask synthesis: random control points on a circle,
// cubic Bezier segments closed into a cyclic contour, flattened at 1-pixel
// tolerance and filled with an even-odd scanline pass. Plus loading of
// per-frame (moving) masks from PGM files.

#pragma once

#include <algorithm>
#include <filesystem>

#include "sttn/image.hpp"
#include "sttn/rng.hpp"
#include "sttn/tensor.hpp"

namespace sttn {

struct MaskSpec {
  Index height = 240;
  Index width = 432;
  Index max_points = 12;          // >= 3
  double max_length_frac = 0.4;   // maxLength = frac * min(H, W), frac < 1
  std::uint64_t seed = 0;

  double max_length() const {
    return max_length_frac * double(std::min(height, width));
  }
  void validate() const {
    require(max_points >= 3, "mask spec: at least 3 control points");
    require(max_length_frac > 0.0 && max_length_frac < 1.0,
            "mask spec: max length must stay below min(H, W)");
    require(height > 4 && width > 4, "mask spec: image too small");
  }
};

namespace maskdetail {

struct P2 {
  double x, y;
};

inline double dist_to_segment(P2 p, P2 a, P2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 < 1e-12) return std::hypot(p.x - a.x, p.y - a.y);
  double t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

/// Adaptive de Casteljau flattening at the given tolerance.
inline void flatten_cubic(P2 b0, P2 b1, P2 b2, P2 b3, double tol,
                          std::vector<P2>* out, int depth = 0) {
  if (depth >= 16 || (dist_to_segment(b1, b0, b3) < tol &&
                      dist_to_segment(b2, b0, b3) < tol)) {
    out->push_back(b3);
    return;
  }
  auto mid = [](P2 a, P2 b) { return P2{(a.x + b.x) / 2, (a.y + b.y) / 2}; };
  const P2 ab = mid(b0, b1), bc = mid(b1, b2), cd = mid(b2, b3);
  const P2 abc = mid(ab, bc), bcd = mid(bc, cd);
  const P2 m = mid(abc, bcd);
  flatten_cubic(b0, ab, abc, m, tol, out, depth + 1);
  flatten_cubic(m, bcd, cd, b3, tol, out, depth + 1);
}

/// Cubic segment between a and b: interior control points sit at 1/3 and 2/3
/// of the chord, nudged perpendicular by up to 0.2 of the chord length.
inline void append_bezier_segment(P2 a, P2 b, Rng& rng, std::vector<P2>* out) {
  const double cx = b.x - a.x, cy = b.y - a.y;
  const double len = std::hypot(cx, cy);
  P2 perp{0, 0};
  if (len > 1e-9) perp = {-cy / len, cx / len};
  const double j1 = rng.uniform(-0.2, 0.2) * len;
  const double j2 = rng.uniform(-0.2, 0.2) * len;
  const P2 c1{a.x + cx / 3 + perp.x * j1, a.y + cy / 3 + perp.y * j1};
  const P2 c2{a.x + 2 * cx / 3 + perp.x * j2, a.y + 2 * cy / 3 + perp.y * j2};
  flatten_cubic(a, c1, c2, b, 1.0, out);
}

/// Supercover rasterization: marks every cell the continuous segment passes
/// through (Amanatides-Woo traversal). Unlike a plain Bresenham line this
/// leaves no sub-pixel gaps, so a 4-connected flood cannot cross the contour.
inline void supercover_line(double x0, double y0, double x1, double y1, Index w,
                            Index h, std::vector<std::uint8_t>* img) {
  auto mark = [&](Index x, Index y) {
    if (x >= 0 && x < w && y >= 0 && y < h) (*img)[std::size_t(y * w + x)] = 1;
  };
  Index ix = Index(std::floor(x0)), iy = Index(std::floor(y0));
  const Index ex = Index(std::floor(x1)), ey = Index(std::floor(y1));
  mark(ix, iy);
  const double dx = x1 - x0, dy = y1 - y0;
  const Index sx = dx > 0 ? 1 : -1, sy = dy > 0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  double tmax_x = inf, tmax_y = inf, tdx = inf, tdy = inf;
  if (dx != 0) {
    const double next = dx > 0 ? std::floor(x0) + 1 : std::floor(x0);
    tmax_x = (next - x0) / dx;
    tdx = double(sx) / dx;
  }
  if (dy != 0) {
    const double next = dy > 0 ? std::floor(y0) + 1 : std::floor(y0);
    tmax_y = (next - y0) / dy;
    tdy = double(sy) / dy;
  }
  Index guard = std::abs(ex - ix) + std::abs(ey - iy) + 8;
  while ((ix != ex || iy != ey) && guard-- > 0) {
    if (tmax_x <= tmax_y) {
      ix += sx;
      tmax_x += tdx;
    } else {
      iy += sy;
      tmax_y += tdy;
    }
    mark(ix, iy);
  }
  mark(ex, ey);
}

/// Even-odd scanline fill of a closed polygon, sampling pixel centers.
inline void scanline_fill(const std::vector<P2>& poly, Index w, Index h,
                          std::vector<std::uint8_t>* img) {
  std::vector<double> xs;
  for (Index y = 0; y < h; ++y) {
    const double yc = double(y) + 0.5;
    xs.clear();
    for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
      const P2 &a = poly[i], &b = poly[i + 1];
      if ((a.y <= yc && b.y > yc) || (b.y <= yc && a.y > yc))
        xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const Index x0 = std::max<Index>(0, Index(std::ceil(xs[k] - 0.5)));
      const Index x1 = std::min<Index>(w - 1, Index(std::floor(xs[k + 1] - 0.5)));
      for (Index x = x0; x <= x1; ++x) (*img)[std::size_t(y * w + x)] = 1;
    }
  }
}

}  // namespace maskdetail

/// Flattened closed contour of one random mask shape (last point == first).
/// Exposed separately so the fill step can be verified against it.
inline std::vector<maskdetail::P2> stationary_contour(const MaskSpec& spec,
                                                      Rng& rng) {
  using maskdetail::P2;
  const Index n = rng.uniform_index(3, spec.max_points);
  const P2 center{rng.uniform(0, double(spec.width)),
                  rng.uniform(0, double(spec.height))};
  std::vector<P2> points;
  points.reserve(std::size_t(n));
  for (Index i = 0; i < n; ++i) {
    const double angle = 2.0 * 3.14159265358979323846 * double(i) / double(n);
    const double len = rng.uniform(0, spec.max_length());
    points.push_back(
        {center.x + std::sin(angle) * len, center.y + std::cos(angle) * len});
  }
  std::vector<P2> poly{points[0]};
  for (Index i = 0; i < n; ++i)
    maskdetail::append_bezier_segment(points[std::size_t(i)],
                                      points[std::size_t((i + 1) % n)], rng,
                                      &poly);
  for (auto& p : poly) {
    p.x = std::clamp(p.x, 0.0, double(spec.width - 1));
    p.y = std::clamp(p.y, 0.0, double(spec.height - 1));
  }
  return poly;
}

struct StationaryMask {
  std::vector<std::uint8_t> mask;        // 1 = hole
  std::vector<maskdetail::P2> contour;   // the accepted closed polyline
};

/// Binary stationary mask, 1 = hole. Degenerate draws (nearly empty or
/// covering more than 60% of the frame) are resampled from the same stream,
/// so a fixed seed still yields a fixed mask.
inline StationaryMask generate_stationary_mask_traced(const MaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Index w = spec.width, h = spec.height;
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto poly = stationary_contour(spec, rng);
    std::vector<std::uint8_t> mask(std::size_t(w * h), 0);
    maskdetail::scanline_fill(poly, w, h, &mask);
    for (std::size_t i = 0; i + 1 < poly.size(); ++i)
      maskdetail::supercover_line(poly[i].x, poly[i].y, poly[i + 1].x,
                                  poly[i + 1].y, w, h, &mask);
    Index area = 0;
    for (auto v : mask) area += v;
    if (area >= 16 && double(area) <= 0.6 * double(w * h))
      return {std::move(mask), std::move(poly)};
  }
  throw ValueError("mask generation: no acceptable contour after 64 attempts");
}

inline std::vector<std::uint8_t> generate_stationary_mask(const MaskSpec& spec) {
  return generate_stationary_mask_traced(spec).mask;
}

inline ImageU8 mask_to_pgm(const std::vector<std::uint8_t>& mask, Index height,
                           Index width) {
  ImageU8 img;
  img.width = width;
  img.height = height;
  img.channels = 1;
  img.pixels.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    img.pixels[i] = mask[i] ? 255 : 0;  // 0 = known, 255 = hole
  return img;
}

/// Mask replicated across T frames as a [T,1,H,W] tensor (stationary masks
/// are identical in every frame).
template <typename S>
Tensor<S> mask_tensor(const std::vector<std::uint8_t>& mask, Index T,
                      Index height, Index width) {
  Tensor<S> t(Shape{T, 1, height, width});
  auto vals = t.mutable_values();
  for (Index f = 0; f < T; ++f)
    for (std::size_t i = 0; i < mask.size(); ++i)
      vals[std::size_t(f) * mask.size() + i] = S(mask[i]);
  return t;
}

/// Per-frame masks from a directory of PGM files (sorted by filename),
/// binarized at 127/255.
template <typename S>
std::vector<Tensor<S>> load_moving_masks(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), "no .pgm masks in " + dir.string());

  std::vector<Tensor<S>> masks;
  Index w = -1, h = -1;
  for (const auto& f : files) {
    ImageU8 img = read_pgm(f);
    if (w < 0) {
      w = img.width;
      h = img.height;
    } else {
      require(img.width == w && img.height == h,
              "mask size mismatch in " + f.string());
    }
    Tensor<S> t(Shape{1, 1, h, w});
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      vals[i] = img.pixels[i] > 127 ? S(1) : S(0);
    masks.push_back(std::move(t));
  }
  return masks;
}

}  // namespace sttn
