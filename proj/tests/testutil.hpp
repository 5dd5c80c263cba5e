// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Test-only helpers: random tensors, the central finite-difference gradient
// oracle, and small comparison utilities. Everything here is independent of
// the implementation paths it checks.

#pragma once

#include <functional>
#include <vector>

#include "sttn/tensor.hpp"

namespace testutil {

using sttn::Index;
using sttn::Shape;
using sttn::Tensor;

template <typename S>
Tensor<S> random_tensor(Shape shape, sttn::Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
  return Tensor<S>::uniform(std::move(shape), rng, lo, hi);
}

/// Random values bounded away from zero, for ops with a kink at the origin.
template <typename S>
Tensor<S> random_tensor_nonzero(Shape shape, sttn::Rng& rng, double margin = 0.1) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.mutable_values()) {
    const double mag = margin + (1.0 - margin) * rng.uniform();
    v = S(rng.coin() ? mag : -mag);
  }
  return t;
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (Index i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a.values()[std::size_t(i)]) -
                             double(b.values()[std::size_t(i)])));
  return m;
}

struct GradCheckResult {
  double max_rel_err = 0;
  Index worst_input = -1;
  Index worst_coord = -1;
  Index checked = 0;
  Index skipped = 0;  // coordinates where central differences are invalid
};

namespace detail {

using Fn =
    std::function<sttn::Tensor<double>(const std::vector<sttn::Tensor<double>>&)>;

/// Probe one coordinate with central differences at h and h/2. Where the two
/// estimates disagree, the function is locally non-smooth (an activation kink
/// crossed the probe interval) and the FD value is not a derivative estimate;
/// such coordinates are skipped and counted.
inline void probe_coord(const Fn& f, std::vector<sttn::Tensor<double>>& inputs,
                        const std::vector<std::vector<double>>& analytic,
                        std::size_t k, Index i, double h, GradCheckResult* res) {
  auto& slot = inputs[k].mutable_values()[std::size_t(i)];
  const double orig = slot;
  auto eval = [&](double x) {
    slot = x;
    const double y = f(inputs).item();
    slot = orig;
    return y;
  };
  const double fd = (eval(orig + h) - eval(orig - h)) / (2 * h);
  const double fd_half = (eval(orig + h / 2) - eval(orig - h / 2)) / h;
  if (std::abs(fd - fd_half) > 1e-6 * std::max(1.0, std::abs(fd))) {
    res->skipped++;
    return;
  }
  res->checked++;
  const double rel =
      std::abs(analytic[k][std::size_t(i)] - fd) / std::max(1.0, std::abs(fd));
  if (rel > res->max_rel_err) {
    res->max_rel_err = rel;
    res->worst_input = Index(k);
    res->worst_coord = i;
  }
}

inline std::vector<std::vector<double>> tape_gradients(
    const Fn& f, std::vector<sttn::Tensor<double>>& inputs) {
  for (auto& in : inputs) in.set_requires_grad(true);
  sttn::Tape<double> tape;
  {
    sttn::Tape<double>::Scope scope(tape);
    sttn::Tensor<double> loss = f(inputs);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    std::vector<double> g(std::size_t(in.size()), 0.0);
    if (!in.grad().empty()) g.assign(in.grad().begin(), in.grad().end());
    analytic.push_back(std::move(g));
    in.zero_grad();
  }
  return analytic;
}

}  // namespace detail

/// Central finite differences (h = 1e-5, 64-bit) against the tape gradients,
/// probing every coordinate of every input. Relative error uses the
/// semi-relative denominator max(1, |fd|).
///
/// `f` must consume `inputs` and return a scalar tensor; it is re-invoked for
/// every probe, so it must be a pure function of the input values.
inline GradCheckResult grad_check(const detail::Fn& f,
                                  std::vector<sttn::Tensor<double>> inputs,
                                  double h = 1e-5) {
  const auto analytic = detail::tape_gradients(f, inputs);
  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (Index i = 0; i < inputs[k].size(); ++i)
      detail::probe_coord(f, inputs, analytic, k, i, h, &res);
  return res;
}

/// Same oracle, probing a sampled subset of coordinates per input. Used for
/// composed models where full-coordinate probing is too slow.
inline GradCheckResult grad_check_sampled(
    const detail::Fn& f, std::vector<sttn::Tensor<double>> inputs,
    sttn::Rng& rng, Index probes_per_input, double h = 1e-5) {
  const auto analytic = detail::tape_gradients(f, inputs);
  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Index n = inputs[k].size();
    const Index probes = std::min(probes_per_input, n);
    for (Index p = 0; p < probes; ++p) {
      const Index i = Index(rng.uniform_int(std::uint64_t(n)));
      detail::probe_coord(f, inputs, analytic, k, i, h, &res);
    }
  }
  return res;
}

}  // namespace testutil
