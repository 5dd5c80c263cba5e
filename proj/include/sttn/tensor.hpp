// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Dense row-major tensor with reverse-mode differentiation.
//
// The scalar type is a template parameter: training runs float, the
// verification oracles run double. Ops are free functions returning new
// tensors; values are immutable once written (the optimizer is the one
// exception, it updates leaf parameters between steps). When a Tape is
// active, ops whose inputs require gradients record a backward closure.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sttn/base.hpp"
#include "sttn/rng.hpp"

namespace sttn {

template <typename S>
class Tape;
template <typename S>
class Tensor;

namespace detail {

template <typename S>
struct TensorData {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // empty until the backward pass touches it
  bool requires_grad = false;
  const void* producer = nullptr;    // tape holding a backward node for this
  const void* made_under = nullptr;  // tape active when the tensor was built

  Index size() const { return Index(values.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), S(0));
  }
};

template <typename S>
using Payload = std::shared_ptr<TensorData<S>>;

template <typename S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using CArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using MatMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using CMatMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline Shape row_major_strides(const Shape& shape) {
  Shape st(shape.size());
  Index acc = 1;
  for (int i = int(shape.size()) - 1; i >= 0; --i) {
    st[std::size_t(i)] = acc;
    acc *= shape[std::size_t(i)];
  }
  return st;
}

}  // namespace detail

/// Ordered record of differentiable ops. Recording order is execution order,
/// which is already topological; the backward sweep walks it once in reverse.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(current_) { current_ = &t; }
    ~Scope() { current_ = prev_; }
    Scope(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current() { return current_; }

  void record(detail::Payload<S> out, std::function<void()> fn) {
    nodes_.push_back({std::move(out), std::move(fn)});
  }

  void backward(const Tensor<S>& loss);

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return visits_; }
  bool consumed() const { return used_; }

 private:
  struct Node {
    detail::Payload<S> out;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
  bool used_ = false;
  inline static thread_local Tape* current_ = nullptr;
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : d_(std::make_shared<detail::TensorData<S>>()) {
    d_->shape = std::move(shape);
    d_->values.assign(std::size_t(shape_numel(d_->shape)), S(0));
    d_->made_under = Tape<S>::current();
  }

  Tensor(Shape shape, std::vector<S> values)
      : d_(std::make_shared<detail::TensorData<S>>()) {
    require_shape(shape_numel(shape) == Index(values.size()),
                  "tensor: value count does not match shape " + shape_str(shape));
    d_->shape = std::move(shape);
    d_->values = std::move(values);
    d_->made_under = Tape<S>::current();
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    std::fill(t.d_->values.begin(), t.d_->values.end(), v);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }

  static Tensor scalar(S v) { return Tensor(Shape{}, std::vector<S>{v}); }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.d_->values) v = S(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return int(d_->shape.size()); }
  Index dim(int i) const { return d_->shape[std::size_t(i)]; }
  Index size() const { return d_->size(); }

  std::span<const S> values() const { return {d_->values.data(), d_->values.size()}; }
  /// Writable view; only valid before the tensor enters any computation.
  std::span<S> mutable_values() { return {d_->values.data(), d_->values.size()}; }
  const S* data() const { return d_->values.data(); }
  S* data() { return d_->values.data(); }

  S item() const {
    require_shape(size() == 1, "item: tensor is not scalar");
    return d_->values[0];
  }

  S at(std::initializer_list<Index> idx) const {
    require_shape(Index(idx.size()) == rank(), "at: rank mismatch");
    const Shape st = detail::row_major_strides(d_->shape);
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : idx) flat += i * st[k++];
    return d_->values[std::size_t(flat)];
  }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    d_->requires_grad = b;
    return *this;
  }

  /// Gradient accumulated by the last backward pass; empty if untouched.
  std::span<const S> grad() const { return {d_->grad.data(), d_->grad.size()}; }
  void zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), S(0)); }

  detail::Payload<S> ptr() const { return d_; }

 private:
  detail::Payload<S> d_;
};

// ---------------------------------------------------------------------------
// Tape backward

template <typename S>
void Tape<S>::backward(const Tensor<S>& loss) {
  require(!used_, "backward: tape already consumed, build a fresh tape");
  require(loss.defined() && loss.size() == 1, "backward: loss must be scalar");
  require(loss.ptr()->producer == this || loss.ptr()->made_under == this,
          "backward: loss was not produced under this tape");
  used_ = true;
  loss.ptr()->ensure_grad();
  loss.ptr()->grad[0] = S(1);
  visits_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    ++visits_;
    if (it->out->grad.empty()) continue;  // dead branch
    it->fn();
  }
}

namespace detail {

template <typename S>
bool tracked(const Tensor<S>& t, const Tape<S>* tape) {
  return t.ptr()->requires_grad || t.ptr()->producer == tape;
}

template <typename S>
void mark(Tensor<S>& out, const Tape<S>* tape) {
  out.ptr()->producer = tape;
}

template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
  for (S v : t.values())
    if (!std::isfinite(double(v)))
      throw NumericError(std::string(op) + ": non-finite value produced");
}

#ifndef NDEBUG
#define STTN_DEBUG_FINITE(t, op) ::sttn::detail::check_finite((t), (op))
#else
#define STTN_DEBUG_FINITE(t, op) ((void)0)
#endif

// Broadcast helpers. Extents must match exactly or be 1 after right-aligning
// the shorter rank.
inline bool broadcast_shape(const Shape& a, const Shape& b, Shape* out) {
  const std::size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  out->assign(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const Index da = i < ra ? a[ra - 1 - i] : 1;
    const Index db = i < rb ? b[rb - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) return false;
    (*out)[r - 1 - i] = std::max(da, db);
  }
  return true;
}

/// Flat index into `shape` for a multi-index of the (larger) `out` shape,
/// collapsing broadcast axes.
struct BcastIndexer {
  Shape strides;  // right-aligned; 0 on broadcast axes
  explicit BcastIndexer(const Shape& shape, const Shape& out) {
    const std::size_t r = out.size(), rs = shape.size();
    strides.assign(r, 0);
    Shape st = row_major_strides(shape);
    for (std::size_t i = 0; i < rs; ++i) {
      const std::size_t oi = r - rs + i;
      strides[oi] = (shape[i] == 1 && out[oi] != 1) ? 0 : st[i];
    }
  }
};

template <typename S, typename F>
void bcast_loop(const Shape& out, const BcastIndexer& ia, const BcastIndexer& ib,
                F&& f) {
  const Index n = shape_numel(out);
  const std::size_t r = out.size();
  Shape idx(r, 0);
  Index fa = 0, fb = 0;
  for (Index flat = 0; flat < n; ++flat) {
    f(flat, fa, fb);
    for (int d = int(r) - 1; d >= 0; --d) {
      const std::size_t ud = std::size_t(d);
      fa += ia.strides[ud];
      fb += ib.strides[ud];
      if (++idx[ud] < out[ud]) break;
      fa -= ia.strides[ud] * out[ud];
      fb -= ib.strides[ud] * out[ud];
      idx[ud] = 0;
    }
  }
}

/// Sum `g` (shaped like `out`) into `dst` whose tensor shape broadcast to out.
template <typename S>
void reduce_into(const std::vector<S>& g, const Shape& out, TensorData<S>& dst) {
  dst.ensure_grad();
  if (g.size() == dst.grad.size()) {
    // No axis was actually expanded; flat order matches.
    CArrMap<S> gm(g.data(), Index(g.size()));
    ArrMap<S>(dst.grad.data(), Index(g.size())) += gm;
    return;
  }
  BcastIndexer id(dst.shape, out);
  BcastIndexer dummy(out, out);
  bcast_loop<S>(out, id, dummy, [&](Index flat, Index fd, Index) {
    dst.grad[std::size_t(fd)] += g[std::size_t(flat)];
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

/// Shared skeleton for binary elementwise ops with broadcasting.
template <typename S, typename Fwd, typename Bwd>
Tensor<S> binary_op(const char* name, const Tensor<S>& a, const Tensor<S>& b,
                    Fwd&& fwd, Bwd&& bwd) {
  Shape out_shape;
  require_shape(broadcast_shape(a.shape(), b.shape(), &out_shape),
                std::string(name) + ": cannot broadcast " + shape_str(a.shape()) +
                    " with " + shape_str(b.shape()));
  Tensor<S> out(out_shape);
  if (a.shape() == b.shape()) {
    const Index n = a.size();
    CArrMap<S> am(a.data(), n), bm(b.data(), n);
    fwd(am, bm, ArrMap<S>(out.data(), n));
  } else {
    BcastIndexer ia(a.shape(), out_shape), ib(b.shape(), out_shape);
    const S* ap = a.data();
    const S* bp = b.data();
    S* op = out.data();
    bcast_loop<S>(out_shape, ia, ib, [&](Index flat, Index fa, Index fb) {
      op[flat] = fwd.scalar(ap[fa], bp[fb]);
    });
  }
  STTN_DEBUG_FINITE(out, name);
  Tape<S>* tp = Tape<S>::current();
  if (tp && (tracked(a, tp) || tracked(b, tp))) {
    mark(out, tp);
    const bool na = tracked(a, tp), nb = tracked(b, tp);
    tp->record(out.ptr(), [na, nb, bwd, ap = a.ptr(), bp = b.ptr(),
                           op = out.ptr()]() { bwd(*ap, *bp, *op, na, nb); });
  }
  return out;
}

template <typename S>
struct AddFn {
  template <typename A, typename B, typename O>
  void operator()(const A& a, const B& b, O o) const { o = a + b; }
  S scalar(S a, S b) const { return a + b; }
};
template <typename S>
struct SubFn {
  template <typename A, typename B, typename O>
  void operator()(const A& a, const B& b, O o) const { o = a - b; }
  S scalar(S a, S b) const { return a - b; }
};
template <typename S>
struct MulFn {
  template <typename A, typename B, typename O>
  void operator()(const A& a, const B& b, O o) const { o = a * b; }
  S scalar(S a, S b) const { return a * b; }
};
template <typename S>
struct DivFn {
  template <typename A, typename B, typename O>
  void operator()(const A& a, const B& b, O o) const { o = a / b; }
  S scalar(S a, S b) const { return a / b; }
};

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  using D = detail::TensorData<S>;
  return detail::binary_op<S>(
      "add", a, b, detail::AddFn<S>{},
      [](D& ad, D& bd, D& od, bool na, bool nb) {
        if (na) detail::reduce_into(od.grad, od.shape, ad);
        if (nb) detail::reduce_into(od.grad, od.shape, bd);
      });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  using D = detail::TensorData<S>;
  return detail::binary_op<S>(
      "sub", a, b, detail::SubFn<S>{},
      [](D& ad, D& bd, D& od, bool na, bool nb) {
        if (na) detail::reduce_into(od.grad, od.shape, ad);
        if (nb) {
          std::vector<S> neg(od.grad.size());
          for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -od.grad[i];
          detail::reduce_into(neg, od.shape, bd);
        }
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  using D = detail::TensorData<S>;
  return detail::binary_op<S>(
      "mul", a, b, detail::MulFn<S>{},
      [](D& ad, D& bd, D& od, bool na, bool nb) {
        detail::BcastIndexer ia(ad.shape, od.shape), ib(bd.shape, od.shape);
        if (na) ad.ensure_grad();
        if (nb) bd.ensure_grad();
        detail::bcast_loop<S>(od.shape, ia, ib, [&](Index flat, Index fa, Index fb) {
          const S g = od.grad[std::size_t(flat)];
          if (na) ad.grad[std::size_t(fa)] += g * bd.values[std::size_t(fb)];
          if (nb) bd.grad[std::size_t(fb)] += g * ad.values[std::size_t(fa)];
        });
      });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  using D = detail::TensorData<S>;
  return detail::binary_op<S>(
      "div", a, b, detail::DivFn<S>{},
      [](D& ad, D& bd, D& od, bool na, bool nb) {
        detail::BcastIndexer ia(ad.shape, od.shape), ib(bd.shape, od.shape);
        if (na) ad.ensure_grad();
        if (nb) bd.ensure_grad();
        detail::bcast_loop<S>(od.shape, ia, ib, [&](Index flat, Index fa, Index fb) {
          const S g = od.grad[std::size_t(flat)];
          const S bv = bd.values[std::size_t(fb)];
          if (na) ad.grad[std::size_t(fa)] += g / bv;
          if (nb)
            bd.grad[std::size_t(fb)] -=
                g * ad.values[std::size_t(fa)] / (bv * bv);
        });
      });
}

/// y = a*x + b with scalar constants (not differentiated w.r.t. a, b).
template <typename S>
Tensor<S> affine(const Tensor<S>& x, S a, S b) {
  Tensor<S> out(x.shape());
  const Index n = x.size();
  detail::ArrMap<S>(out.data(), n) =
      detail::CArrMap<S>(x.data(), n) * a + b;
  STTN_DEBUG_FINITE(out, "affine");
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [a, xp = x.ptr(), op = out.ptr()]() {
      xp->ensure_grad();
      const Index n = xp->size();
      detail::ArrMap<S>(xp->grad.data(), n) +=
          detail::CArrMap<S>(op->grad.data(), n) * a;
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S a) {
  return affine(x, a, S(0));
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
  return scale(x, S(-1));
}

template <typename S>
Tensor<S> relu_leaky(const Tensor<S>& x, S slope = S(0.2)) {
  Tensor<S> out(x.shape());
  const Index n = x.size();
  const S* xp = x.data();
  S* op = out.data();
  for (Index i = 0; i < n; ++i) op[i] = xp[i] > S(0) ? xp[i] : slope * xp[i];
  STTN_DEBUG_FINITE(out, "relu_leaky");
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [slope, xd = x.ptr(), od = out.ptr()]() {
      xd->ensure_grad();
      const Index n = xd->size();
      for (Index i = 0; i < n; ++i)
        xd->grad[std::size_t(i)] +=
            od->grad[std::size_t(i)] *
            (xd->values[std::size_t(i)] > S(0) ? S(1) : slope);
    });
  }
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return relu_leaky(x, S(0));
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  const Index n = x.size();
  detail::ArrMap<S>(out.data(), n) = detail::CArrMap<S>(x.data(), n).tanh();
  STTN_DEBUG_FINITE(out, "tanh");
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [xd = x.ptr(), od = out.ptr()]() {
      xd->ensure_grad();
      const Index n = xd->size();
      for (Index i = 0; i < n; ++i) {
        const S y = od->values[std::size_t(i)];
        xd->grad[std::size_t(i)] += od->grad[std::size_t(i)] * (S(1) - y * y);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Tensor<S> abs_sum(const Tensor<S>& x) {
  const Index n = x.size();
  S acc = detail::CArrMap<S>(x.data(), n).abs().sum();
  Tensor<S> out = Tensor<S>::scalar(acc);
  STTN_DEBUG_FINITE(out, "abs_sum");
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [xd = x.ptr(), od = out.ptr()]() {
      xd->ensure_grad();
      const S g = od->grad[0];
      const Index n = xd->size();
      for (Index i = 0; i < n; ++i) {
        const S v = xd->values[std::size_t(i)];
        xd->grad[std::size_t(i)] += v > S(0) ? g : (v < S(0) ? -g : S(0));
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  const Index n = x.size();
  require(n > 0, "mean: empty tensor");
  S acc = detail::CArrMap<S>(x.data(), n).sum() / S(n);
  Tensor<S> out = Tensor<S>::scalar(acc);
  STTN_DEBUG_FINITE(out, "mean");
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [xd = x.ptr(), od = out.ptr()]() {
      xd->ensure_grad();
      const Index n = xd->size();
      const S g = od->grad[0] / S(n);
      detail::ArrMap<S>(xd->grad.data(), n) += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_shape(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-D");
  require_shape(a.dim(1) == b.dim(0),
                "matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out(Shape{m, n});
  detail::MatMap<S>(out.data(), m, n).noalias() =
      detail::CMatMap<S>(a.data(), m, k) * detail::CMatMap<S>(b.data(), k, n);
  STTN_DEBUG_FINITE(out, "matmul");
  Tape<S>* tp = Tape<S>::current();
  if (tp && (detail::tracked(a, tp) || detail::tracked(b, tp))) {
    detail::mark(out, tp);
    const bool na = detail::tracked(a, tp), nb = detail::tracked(b, tp);
    tp->record(out.ptr(), [na, nb, m, k, n, ad = a.ptr(), bd = b.ptr(),
                           od = out.ptr()]() {
      detail::CMatMap<S> g(od->grad.data(), m, n);
      if (na) {
        ad->ensure_grad();
        detail::MatMap<S>(ad->grad.data(), m, k).noalias() +=
            g * detail::CMatMap<S>(bd->values.data(), k, n).transpose();
      }
      if (nb) {
        bd->ensure_grad();
        detail::MatMap<S>(bd->grad.data(), k, n).noalias() +=
            detail::CMatMap<S>(ad->values.data(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

/// c = a * b^T for a[M,K], b[N,K]; the similarity product of attention.
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  require_shape(a.rank() == 2 && b.rank() == 2, "matmul_nt: operands must be 2-D");
  require_shape(a.dim(1) == b.dim(1),
                "matmul_nt: inner extents differ, " + shape_str(a.shape()) +
                    " vs " + shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor<S> out(Shape{m, n});
  detail::MatMap<S>(out.data(), m, n).noalias() =
      detail::CMatMap<S>(a.data(), m, k) *
      detail::CMatMap<S>(b.data(), n, k).transpose();
  STTN_DEBUG_FINITE(out, "matmul_nt");
  Tape<S>* tp = Tape<S>::current();
  if (tp && (detail::tracked(a, tp) || detail::tracked(b, tp))) {
    detail::mark(out, tp);
    const bool na = detail::tracked(a, tp), nb = detail::tracked(b, tp);
    tp->record(out.ptr(), [na, nb, m, k, n, ad = a.ptr(), bd = b.ptr(),
                           od = out.ptr()]() {
      detail::CMatMap<S> g(od->grad.data(), m, n);
      if (na) {
        ad->ensure_grad();
        detail::MatMap<S>(ad->grad.data(), m, k).noalias() +=
            g * detail::CMatMap<S>(bd->values.data(), n, k);
      }
      if (nb) {
        bd->ensure_grad();
        detail::MatMap<S>(bd->grad.data(), n, k).noalias() +=
            g.transpose() * detail::CMatMap<S>(ad->values.data(), m, k);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  require_shape(x.rank() == 2, "transpose: operand must be 2-D");
  const Index m = x.dim(0), n = x.dim(1);
  Tensor<S> out(Shape{n, m});
  detail::MatMap<S>(out.data(), n, m) =
      detail::CMatMap<S>(x.data(), m, n).transpose();
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [m, n, xd = x.ptr(), od = out.ptr()]() {
      xd->ensure_grad();
      detail::MatMap<S>(xd->grad.data(), m, n) +=
          detail::CMatMap<S>(od->grad.data(), n, m).transpose();
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax

namespace detail {

/// Sum in ascending value order. Reductions over attention supports use this
/// so that results do not depend on the storage order of the addends.
template <typename S>
S canonical_sum(std::vector<S>& buf) {
  std::sort(buf.begin(), buf.end());
  S acc = 0;
  for (S v : buf) acc += v;
  return acc;
}

}  // namespace detail

/// Numerically stabilized softmax along `axis`. Each slice sums to 1; the
/// reduction order is canonical, so permuting a slice permutes its output.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  require_shape(axis >= 0 && axis < x.rank(), "softmax: axis out of range");
  detail::check_finite(x, "softmax(input)");
  const Shape& sh = x.shape();
  const Index n = sh[std::size_t(axis)];
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[std::size_t(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= sh[std::size_t(i)];

  Tensor<S> out(x.shape());
  const S* xp = x.data();
  S* op = out.data();
  std::vector<S> buf(static_cast<std::size_t>(n));
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * n * inner + in;
      S m = xp[base];
      for (Index i = 1; i < n; ++i) m = std::max(m, xp[base + i * inner]);
      for (Index i = 0; i < n; ++i) {
        const S e = std::exp(xp[base + i * inner] - m);
        op[base + i * inner] = e;
        buf[std::size_t(i)] = e;
      }
      const S denom = detail::canonical_sum(buf);
      for (Index i = 0; i < n; ++i) op[base + i * inner] /= denom;
    }
  }
  STTN_DEBUG_FINITE(out, "softmax");
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [outer, inner, n, xd = x.ptr(), od = out.ptr()]() {
      xd->ensure_grad();
      for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
          const Index base = o * n * inner + in;
          S dot = 0;
          for (Index i = 0; i < n; ++i) {
            const std::size_t idx = std::size_t(base + i * inner);
            dot += od->grad[idx] * od->values[idx];
          }
          for (Index i = 0; i < n; ++i) {
            const std::size_t idx = std::size_t(base + i * inner);
            xd->grad[idx] += od->values[idx] * (od->grad[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  require_shape(shape_numel(shape) == x.size(),
                "reshape: element count mismatch " + shape_str(x.shape()) +
                    " -> " + shape_str(shape));
  Tensor<S> out(std::move(shape),
                std::vector<S>(x.values().begin(), x.values().end()));
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [xd = x.ptr(), od = out.ptr()]() {
      xd->ensure_grad();
      const Index n = xd->size();
      detail::ArrMap<S>(xd->grad.data(), n) +=
          detail::CArrMap<S>(od->grad.data(), n);
    });
  }
  return out;
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& perm) {
  require_shape(int(perm.size()) == x.rank(), "permute: rank mismatch");
  const std::size_t r = perm.size();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  // dst flat index -> src flat index
  auto map = std::make_shared<std::vector<Index>>(std::size_t(x.size()));
  const Shape src_st = detail::row_major_strides(x.shape());
  Shape idx(r, 0);
  Index src = 0;
  for (Index dst = 0; dst < x.size(); ++dst) {
    (*map)[std::size_t(dst)] = src;
    for (int d = int(r) - 1; d >= 0; --d) {
      const std::size_t ud = std::size_t(d);
      src += src_st[std::size_t(perm[ud])];
      if (++idx[ud] < out_shape[ud]) break;
      src -= src_st[std::size_t(perm[ud])] * out_shape[ud];
      idx[ud] = 0;
    }
  }
  Tensor<S> out(out_shape);
  const S* xp = x.data();
  S* op = out.data();
  for (Index dst = 0; dst < x.size(); ++dst) op[dst] = xp[(*map)[std::size_t(dst)]];
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [map, xd = x.ptr(), od = out.ptr()]() {
      xd->ensure_grad();
      const Index n = xd->size();
      for (Index dst = 0; dst < n; ++dst)
        xd->grad[std::size_t((*map)[std::size_t(dst)])] +=
            od->grad[std::size_t(dst)];
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const int r = parts[0].rank();
  require_shape(axis >= 0 && axis < r, "concat: axis out of range");
  Shape out_shape = parts[0].shape();
  Index axis_total = 0;
  for (const auto& p : parts) {
    require_shape(p.rank() == r, "concat: rank mismatch");
    for (int d = 0; d < r; ++d)
      require_shape(d == axis || p.dim(d) == out_shape[std::size_t(d)],
                    "concat: extents differ outside the concat axis");
    axis_total += p.dim(axis);
  }
  out_shape[std::size_t(axis)] = axis_total;
  Tensor<S> out(out_shape);
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[std::size_t(d)];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[std::size_t(d)];

  Index offset = 0;
  for (const auto& p : parts) {
    const Index block = p.dim(axis) * inner;
    for (Index o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * axis_total + offset) * inner,
                  p.data() + o * block, std::size_t(block) * sizeof(S));
    offset += p.dim(axis);
  }
  Tape<S>* tp = Tape<S>::current();
  bool any = false;
  if (tp)
    for (const auto& p : parts) any = any || detail::tracked(p, tp);
  if (tp && any) {
    detail::mark(out, tp);
    std::vector<detail::Payload<S>> pds;
    std::vector<Index> dims;
    std::vector<bool> needs;
    for (const auto& p : parts) {
      pds.push_back(p.ptr());
      dims.push_back(p.dim(axis));
      needs.push_back(detail::tracked(p, tp));
    }
    tp->record(out.ptr(), [pds, dims, needs, outer, inner, axis_total,
                           od = out.ptr()]() {
      Index offset = 0;
      for (std::size_t k = 0; k < pds.size(); ++k) {
        const Index block = dims[k] * inner;
        if (needs[k]) {
          pds[k]->ensure_grad();
          for (Index o = 0; o < outer; ++o) {
            const S* g = od->grad.data() + (o * axis_total + offset) * inner;
            S* dst = pds[k]->grad.data() + o * block;
            for (Index i = 0; i < block; ++i) dst[i] += g[i];
          }
        }
        offset += dims[k];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(std::initializer_list<Tensor<S>> parts, int axis) {
  return concat(std::vector<Tensor<S>>(parts), axis);
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, Index start, Index len) {
  require_shape(axis >= 0 && axis < x.rank(), "slice: axis out of range");
  require_shape(start >= 0 && len > 0 && start + len <= x.dim(axis),
                "slice: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[std::size_t(axis)] = len;
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const Index src_axis = x.dim(axis);
  Tensor<S> out(out_shape);
  for (Index o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner,
                x.data() + (o * src_axis + start) * inner,
                std::size_t(len * inner) * sizeof(S));
  Tape<S>* tp = Tape<S>::current();
  if (tp && detail::tracked(x, tp)) {
    detail::mark(out, tp);
    tp->record(out.ptr(), [outer, inner, len, start, src_axis, xd = x.ptr(),
                           od = out.ptr()]() {
      xd->ensure_grad();
      for (Index o = 0; o < outer; ++o) {
        const S* g = od->grad.data() + o * len * inner;
        S* dst = xd->grad.data() + (o * src_axis + start) * inner;
        for (Index i = 0; i < len * inner; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

/// Copy that drops tape participation and the requires_grad flag.
template <typename S>
Tensor<S> detach(const Tensor<S>& x) {
  return Tensor<S>(x.shape(), std::vector<S>(x.values().begin(), x.values().end()));
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

}  // namespace sttn
