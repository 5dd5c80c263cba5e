// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "sttn/layers.hpp"
#include "testutil.hpp"

using sttn::Conv2dLayer;
using sttn::Conv3dLayer;
using sttn::Index;
using sttn::Shape;
using sttn::Tensor;
using testutil::grad_check;
using testutil::max_abs_diff;

TEST_CASE("conv2d: 1x1 identity kernel passes input through") {
  sttn::Rng rng(1);
  const Index C = 3;
  Conv2dLayer<double> l = Conv2dLayer<double>::make(C, C, 1, 1, 0, rng);
  std::fill(l.weight.mutable_values().begin(), l.weight.mutable_values().end(), 0.0);
  for (Index c = 0; c < C; ++c)
    l.weight.mutable_values()[std::size_t((c * C + c))] = 1.0;
  auto x = testutil::random_tensor<double>({2, C, 5, 4}, rng);
  CHECK(max_abs_diff(sttn::conv2d(x, l), x) == 0.0);
}

TEST_CASE("conv2d: all-ones 3x3 kernel on a one-hot input makes a plateau") {
  sttn::Rng rng(2);
  Conv2dLayer<double> l = Conv2dLayer<double>::make(1, 1, 3, 1, 1, rng);
  std::fill(l.weight.mutable_values().begin(), l.weight.mutable_values().end(), 1.0);
  Tensor<double> x = Tensor<double>::zeros({1, 1, 5, 5});
  x.mutable_values()[std::size_t(2 * 5 + 2)] = 1.0;  // hot pixel at (2,2)
  auto y = sttn::conv2d(x, l);
  CHECK(max_abs_diff(y, oracles::conv2d_naive(x, l)) < 1e-12);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) {
      const double expect =
          (std::abs(i - 2) <= 1 && std::abs(j - 2) <= 1) ? 1.0 : 0.0;
      CHECK(y.at({0, 0, i, j}) == expect);
    }
}

TEST_CASE("conv2d: two stride-2 convs take 432x240 to 108x60") {
  Index W = 432, H = 240;
  W = sttn::conv_out_extent(W, 3, 2, 1, 1);
  H = sttn::conv_out_extent(H, 3, 2, 1, 1);
  W = sttn::conv_out_extent(W, 3, 2, 1, 1);
  H = sttn::conv_out_extent(H, 3, 2, 1, 1);
  CHECK(W == 108);
  CHECK(H == 60);
}

TEST_CASE("conv2d matches the direct-loop oracle on random instances") {
  sttn::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index B = rng.uniform_index(1, 2), C = rng.uniform_index(1, 4);
    const Index Co = rng.uniform_index(1, 4), H = rng.uniform_index(3, 8);
    const Index W = rng.uniform_index(3, 8);
    const Index k = rng.uniform_index(1, 3);
    const Index s = rng.uniform_index(1, 2), p = rng.uniform_index(0, 2);
    const Index d = k > 1 ? rng.uniform_index(1, 2) : 1;
    if ((H + 2 * p - d * (k - 1) - 1) / s + 1 <= 0) continue;
    if ((W + 2 * p - d * (k - 1) - 1) / s + 1 <= 0) continue;
    Conv2dLayer<double> l = Conv2dLayer<double>::make(C, Co, k, s, p, rng, d);
    for (auto& b : l.bias.mutable_values()) b = rng.uniform(-0.5, 0.5);
    auto x = testutil::random_tensor<double>({B, C, H, W}, rng);
    CHECK(max_abs_diff(sttn::conv2d(x, l), oracles::conv2d_naive(x, l)) < 1e-6);
  }
}

TEST_CASE("conv2d error paths") {
  sttn::Rng rng(4);
  Conv2dLayer<double> l = Conv2dLayer<double>::make(3, 4, 3, 1, 0, rng);
  auto bad = testutil::random_tensor<double>({1, 2, 5, 5}, rng);
  CHECK_THROWS_AS((void)sttn::conv2d(bad, l), sttn::ShapeError);
  auto tiny = testutil::random_tensor<double>({1, 3, 2, 2}, rng);
  CHECK_THROWS_AS((void)sttn::conv2d(tiny, l), sttn::ShapeError);
}

TEST_CASE("conv3d: 1x1x1 identity kernel, table stride arithmetic, oracle") {
  sttn::Rng rng(5);
  Conv3dLayer<double> id =
      Conv3dLayer<double>::make(2, 2, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng);
  std::fill(id.weight.mutable_values().begin(), id.weight.mutable_values().end(), 0.0);
  id.weight.mutable_values()[0] = 1.0;
  id.weight.mutable_values()[3] = 1.0;  // [co,ci] diag for 2x2x1x1x1
  auto x = testutil::random_tensor<double>({1, 2, 3, 4, 4}, rng);
  CHECK(max_abs_diff(sttn::conv3d(x, id), x) == 0.0);

  // kernel 3x5x5, stride (1,2,2), padding (1,2,2): T preserved, spatial halved
  CHECK(sttn::conv_out_extent(64, 5, 2, 2, 1) == 32);
  CHECK(sttn::conv_out_extent(5, 3, 1, 1, 1) == 5);

  for (int trial = 0; trial < 8; ++trial) {
    const Index C = rng.uniform_index(1, 3), Co = rng.uniform_index(1, 3);
    const Index T = rng.uniform_index(3, 5), H = rng.uniform_index(4, 8),
                W = rng.uniform_index(4, 8);
    Conv3dLayer<double> l =
        Conv3dLayer<double>::make(C, Co, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, rng);
    for (auto& b : l.bias.mutable_values()) b = rng.uniform(-0.5, 0.5);
    auto v = testutil::random_tensor<double>({1, C, T, H, W}, rng);
    CHECK(max_abs_diff(sttn::conv3d(v, l), oracles::conv3d_naive(v, l)) < 1e-6);
  }
}

TEST_CASE("bilinear upsample: constants, closed-form 2x2, ramp bound") {
  sttn::Rng rng(6);
  auto flat = Tensor<double>::full({1, 2, 3, 3}, 0.7);
  auto up = sttn::bilinear_upsample(flat, 2);
  CHECK(up.shape() == Shape{1, 2, 6, 6});
  for (double v : up.values()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

  // 2x2 input upsampled x2: source sample positions carry the source values,
  // every output stays inside [min, max]
  Tensor<double> q(Shape{1, 1, 2, 2}, {0, 1, 2, 3});
  auto uq = sttn::bilinear_upsample(q, 2);
  // dst (0.5+o)/2-0.5 hits the exact source grid at o in {0,3} -> corners
  CHECK(uq.at({0, 0, 0, 0}) == doctest::Approx(0.0));
  CHECK(uq.at({0, 0, 0, 3}) == doctest::Approx(1.0));
  CHECK(uq.at({0, 0, 3, 0}) == doctest::Approx(2.0));
  CHECK(uq.at({0, 0, 3, 3}) == doctest::Approx(3.0));
  // interior weights are 0.25/0.75 combinations
  CHECK(uq.at({0, 0, 0, 1}) == doctest::Approx(0.25));
  for (double v : uq.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 3.0);
  }

  // downsample-by-average then upsample on a smooth ramp stays within a step
  const Index H = 8, W = 8;
  Tensor<double> ramp(Shape{1, 1, H, W});
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      ramp.mutable_values()[std::size_t(y * W + x)] = double(x) / double(W - 1);
  Tensor<double> down(Shape{1, 1, H / 2, W / 2});
  for (Index y = 0; y < H / 2; ++y)
    for (Index x = 0; x < W / 2; ++x) {
      double acc = 0;
      for (Index dy = 0; dy < 2; ++dy)
        for (Index dx = 0; dx < 2; ++dx)
          acc += ramp.at({0, 0, 2 * y + dy, 2 * x + dx});
      down.mutable_values()[std::size_t(y * (W / 2) + x)] = acc / 4.0;
    }
  auto rec = sttn::bilinear_upsample(down, 2);
  const double step = 1.0 / double(W - 1);
  CHECK(max_abs_diff(rec, ramp) < step);
}

TEST_CASE("spectral normalization: known singular values, orthogonal, zero") {
  sttn::Rng rng(7);
  // diag(3, 1): sigma_max = 3; after >= 20 iterations the normalized weight
  // has top singular value 1 within 1e-3
  Tensor<double> w(Shape{2, 2}, {3, 0, 0, 1});
  sttn::SpectralNormState<double> st;
  st.init(2, 2, rng);
  Tensor<double> wn = w;
  for (int i = 0; i < 25; ++i) wn = sttn::spectral_normalize(w, st);
  CHECK(st.iterations == 25);
  // largest singular value of the diagonal result is its largest |entry|
  CHECK(std::abs(wn.at({0, 0})) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(std::abs(wn.at({1, 1})) <= 1.0 / 3.0 + 1e-3);

  // orthogonal (rotation) matrix: sigma_max = 1, unchanged up to 1e-3
  const double th = 0.6;
  Tensor<double> rot(Shape{2, 2},
                     {std::cos(th), -std::sin(th), std::sin(th), std::cos(th)});
  sttn::SpectralNormState<double> st2;
  st2.init(2, 2, rng);
  Tensor<double> rn = rot;
  for (int i = 0; i < 25; ++i) rn = sttn::spectral_normalize(rot, st2);
  CHECK(max_abs_diff(rn, rot) < 1e-3);

  // zero matrix: guard leaves it untouched
  Tensor<double> z = Tensor<double>::zeros({3, 4});
  sttn::SpectralNormState<double> st3;
  st3.init(3, 4, rng);
  auto zn = sttn::spectral_normalize(z, st3);
  CHECK(max_abs_diff(zn, z) == 0.0);

  // ||u|| = 1 after each update
  double n2 = 0;
  for (double u : st.u) n2 += u * u;
  CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("power-iteration estimate stays within 1% above 1 after normalizing") {
  sttn::Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto w = testutil::random_tensor<double>({6, 2, 3, 3}, rng);
    sttn::SpectralNormState<double> st;
    st.init(6, 18, rng);
    Tensor<double> wn = w;
    for (int i = 0; i < 30; ++i) wn = sttn::spectral_normalize(w, st);
    // rerun a fresh power iteration on the normalized weight
    sttn::SpectralNormState<double> probe;
    probe.init(6, 18, rng);
    for (int i = 0; i < 30; ++i) (void)sttn::spectral_normalize(wn, probe);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        m(wn.data(), 6, 18);
    Eigen::Map<const Eigen::VectorXd> u(probe.u.data(), 6);
    Eigen::Map<const Eigen::VectorXd> v(probe.v.data(), 18);
    const double sigma = u.transpose() * m * v;
    CHECK(sigma <= 1.0 + 1e-2);
  }
}

TEST_CASE("residual block: zero F, composition oracle, shortcut gradient") {
  sttn::Rng rng(9);
  const Index C = 3;
  Conv2dLayer<double> c1 = Conv2dLayer<double>::make(C, C, 3, 1, 1, rng);
  Conv2dLayer<double> c2 = Conv2dLayer<double>::make(C, C, 3, 1, 1, rng);
  auto x = testutil::random_tensor<double>({2, C, 4, 4}, rng);

  // zero weights -> identity
  Conv2dLayer<double> z1 = Conv2dLayer<double>::make(C, C, 3, 1, 1, rng);
  Conv2dLayer<double> z2 = Conv2dLayer<double>::make(C, C, 3, 1, 1, rng);
  std::fill(z1.weight.mutable_values().begin(), z1.weight.mutable_values().end(), 0.0);
  std::fill(z2.weight.mutable_values().begin(), z2.weight.mutable_values().end(), 0.0);
  CHECK(max_abs_diff(sttn::residual_block(x, z1, z2), x) == 0.0);

  // matches the composed ops
  auto manual =
      sttn::add(x, sttn::conv2d(sttn::relu_leaky(sttn::conv2d(x, c1), 0.2), c2));
  CHECK(max_abs_diff(sttn::residual_block(x, c1, c2), manual) == 0.0);

  // gradient reaches x through the shortcut even with zero F-weights
  auto xg = sttn::detach(x);
  xg.set_requires_grad(true);
  sttn::Tape<double> tape;
  {
    sttn::Tape<double>::Scope scope(tape);
    auto y = sttn::residual_block(xg, z1, z2);
    tape.backward(sttn::mean(y));
  }
  for (double g : xg.grad())
    CHECK(g == doctest::Approx(1.0 / double(xg.size())));
}

TEST_CASE("gradient checks through every layer op") {
  using V = std::vector<Tensor<double>>;
  for (int seed = 0; seed < 20; ++seed) {
    sttn::Rng r(std::uint64_t(seed) + 500);

    // conv2d w.r.t. input, weight, bias
    {
      Conv2dLayer<double> l = Conv2dLayer<double>::make(2, 3, 3, 2, 1, r);
      auto res = grad_check(
          [&l](const V& v) {
            Conv2dLayer<double> lv = l;
            lv.weight = v[1];
            lv.bias = v[2];
            return sttn::mean(sttn::conv2d(v[0], lv));
          },
          V{testutil::random_tensor<double>({2, 2, 5, 5}, r),
            sttn::detach(l.weight), sttn::detach(l.bias)});
      INFO("conv2d seed ", seed, " err ", res.max_rel_err);
      CHECK(res.max_rel_err < 1e-4);
    }

    // conv3d
    {
      Conv3dLayer<double> l =
          Conv3dLayer<double>::make(2, 2, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, r);
      auto res = grad_check(
          [&l](const V& v) {
            Conv3dLayer<double> lv = l;
            lv.weight = v[1];
            lv.bias = v[2];
            return sttn::mean(sttn::conv3d(v[0], lv));
          },
          V{testutil::random_tensor<double>({1, 2, 3, 4, 4}, r),
            sttn::detach(l.weight), sttn::detach(l.bias)});
      INFO("conv3d seed ", seed, " err ", res.max_rel_err);
      CHECK(res.max_rel_err < 1e-4);
    }

    // bilinear upsample
    {
      auto probe = testutil::random_tensor<double>({1, 2, 6, 6}, r);
      auto res = grad_check(
          [&probe](const V& v) {
            return sttn::mean(sttn::mul(sttn::bilinear_upsample(v[0], 2), probe));
          },
          V{testutil::random_tensor<double>({1, 2, 3, 3}, r)});
      INFO("upsample seed ", seed, " err ", res.max_rel_err);
      CHECK(res.max_rel_err < 1e-4);
    }

    // spectral normalization w.r.t. the weight, u/v held fixed
    {
      sttn::SpectralNormState<double> st;
      st.init(3, 8, r);
      auto w0 = testutil::random_tensor<double>({3, 2, 2, 2}, r);
      (void)sttn::spectral_normalize(w0, st, true);  // warm the estimate
      auto probe = testutil::random_tensor<double>({3, 2, 2, 2}, r);
      auto res = grad_check(
          [&st, &probe](const V& v) {
            return sttn::mean(
                sttn::mul(sttn::spectral_normalize(v[0], st, false), probe));
          },
          V{w0});
      INFO("spectral_normalize seed ", seed, " err ", res.max_rel_err);
      CHECK(res.max_rel_err < 1e-4);
    }

    // residual block w.r.t. everything
    {
      Conv2dLayer<double> c1 = Conv2dLayer<double>::make(2, 2, 3, 1, 1, r);
      Conv2dLayer<double> c2 = Conv2dLayer<double>::make(2, 2, 3, 1, 1, r);
      auto res = grad_check(
          [&](const V& v) {
            Conv2dLayer<double> a = c1, b = c2;
            a.weight = v[1];
            b.weight = v[2];
            return sttn::mean(sttn::residual_block(v[0], a, b));
          },
          V{testutil::random_tensor<double>({1, 2, 4, 4}, r),
            sttn::detach(c1.weight), sttn::detach(c2.weight)});
      INFO("residual seed ", seed, " err ", res.max_rel_err);
      CHECK(res.max_rel_err < 1e-4);
    }
  }
}
