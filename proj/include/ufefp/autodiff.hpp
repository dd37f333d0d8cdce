// Copyright 2026 The U-FEFP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal tape-based reverse-mode differentiation over dense row-major
// tensors. Every op appends one node to the tape; Tape::backward walks the
// nodes in reverse creation order. A tape constructed with recording
// disabled computes values only, which is how stop-gradient branches and
// inference passes are evaluated.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ufefp/error.hpp"

namespace ufefp::ad {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMat<S>>;
template <class S>
using CMatMap = Eigen::Map<const RowMat<S>>;

/// A trainable tensor together with its accumulated gradient.
template <class S>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;
  /// Excluded from weight decay and LARS trust scaling (biases, norm affine).
  bool exempt = false;

  Parameter() = default;
  Parameter(std::string n, Shape s, bool exempt_from_decay = false)
      : name(std::move(n)),
        shape(std::move(s)),
        value(ad::numel(shape), S(0)),
        grad(ad::numel(shape), S(0)),
        exempt(exempt_from_decay) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

/// Non-trainable state that still travels with the model (running statistics).
template <class S>
struct Buffer {
  std::string name;
  std::vector<S> value;
};

/// Flat, ordered view over a module tree's parameters and buffers.
template <class S>
struct ParamList {
  struct ParamEntry {
    std::string name;
    Parameter<S>* param;
  };
  struct BufferEntry {
    std::string name;
    Buffer<S>* buffer;
  };
  std::vector<ParamEntry> params;
  std::vector<BufferEntry> buffers;

  void add(const std::string& prefix, Parameter<S>& p) { params.push_back({prefix + p.name, &p}); }
  void add(const std::string& prefix, Buffer<S>& b) { buffers.push_back({prefix + b.name, &b}); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : params) n += e.param->size();
    return n;
  }
  void zero_grad() {
    for (auto& e : params) e.param->zero_grad();
  }
};

/// Allocator that leaves scalars uninitialized on resize; every op writes
/// its full output, so the usual zero fill is wasted work.
///
/// Buffers are 64-byte aligned. Eigen peels unaligned heads off vectorized
/// reductions, so with malloc's 16-byte alignment the summation order (and
/// the rounding) would depend on where the heap put each buffer.
template <class T>
struct UninitAllocator : std::allocator<T> {
  static constexpr std::align_val_t kAlign{64};
  template <class U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <class U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const UninitAllocator<U>&) const noexcept {
    return true;
  }
  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <class S>
using Storage = std::vector<S, UninitAllocator<S>>;

template <class S>
struct Node {
  Shape shape;
  Storage<S> value;
  Storage<S> grad;
  bool requires_grad = false;
  std::function<void()> backward;

  Storage<S>& g() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad;
  }
};

template <class S>
class Var;

template <class S>
class Tape {
 public:
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Node<S>* make(Shape shape, bool requires_grad) {
    auto node = std::make_unique<Node<S>>();
    node->value.resize(ad::numel(shape));
    node->shape = std::move(shape);
    node->requires_grad = record_ && requires_grad;
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
  }

  Var<S> constant(Shape shape, std::span<const S> values) {
    if (values.size() != ad::numel(shape))
      throw StructuralError("constant: value count does not match shape " + to_string(shape));
    Node<S>* n = make(std::move(shape), false);
    std::copy(values.begin(), values.end(), n->value.begin());
    return Var<S>(this, n);
  }

  /// Leaf bound to a parameter; backward accumulates into `p.grad`.
  Var<S> param(Parameter<S>& p) {
    Node<S>* n = make(p.shape, true);
    std::copy(p.value.begin(), p.value.end(), n->value.begin());
    if (n->requires_grad) {
      Parameter<S>* target = &p;
      n->backward = [n, target] {
        for (std::size_t i = 0; i < n->grad.size(); ++i) target->grad[i] += n->grad[i];
      };
    }
    return Var<S>(this, n);
  }

  void backward(const Var<S>& loss);

 private:
  bool record_;
  std::vector<std::unique_ptr<Node<S>>> nodes_;
};

template <class S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, Node<S>* node) : tape_(tape), node_(node) {}

  bool valid() const { return node_ != nullptr; }
  Tape<S>& tape() const { return *tape_; }
  Node<S>* node() const { return node_; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[i < 0 ? node_->shape.size() + i : i]; }
  std::size_t numel() const { return node_->value.size(); }
  const Storage<S>& value() const { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  S item() const {
    if (numel() != 1) throw StructuralError("item() on non-scalar " + to_string(shape()));
    return node_->value[0];
  }

 private:
  Tape<S>* tape_ = nullptr;
  Node<S>* node_ = nullptr;
};

template <class S>
void Tape<S>::backward(const Var<S>& loss) {
  if (!record_) throw StructuralError("backward on a non-recording tape");
  if (loss.numel() != 1) throw StructuralError("backward requires a scalar loss");
  if (!loss.requires_grad()) return;
  loss.node()->g()[0] = S(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<S>& n = **it;
    if (n.requires_grad && n.backward && !n.grad.empty()) n.backward();
  }
}

namespace detail {

template <class S>
Node<S>* result(const Var<S>& a, Shape shape, bool requires_grad) {
  return a.tape().make(std::move(shape), requires_grad);
}

template <class S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw StructuralError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                          to_string(b.shape()));
}

template <class S>
void accumulate(Node<S>* dst, const Storage<S>& src) {
  auto& g = dst->g();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

}  // namespace detail

/// Leaf copy of `x` that blocks gradient flow.
template <class S>
Var<S> detach(const Var<S>& x) {
  return x.tape().constant(x.shape(), x.value());
}

template <class S>
Var<S> reshape(const Var<S>& x, Shape shape) {
  if (ad::numel(shape) != x.numel())
    throw StructuralError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  Node<S>* out = detail::result(x, std::move(shape), x.requires_grad());
  out->value = x.value();
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    out->backward = [out, xn] { detail::accumulate(xn, out->grad); };
  }
  return Var<S>(&x.tape(), out);
}

/// Channel mixing over the last axis: x [..., Cin] times w [Cin, Cout].
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& w) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(0))
    throw StructuralError("linear: input " + to_string(x.shape()) + " weight " + to_string(w.shape()));
  const int cin = w.dim(0), cout = w.dim(1);
  const int rows = static_cast<int>(x.numel() / cin);
  Shape shape = x.shape();
  shape.back() = cout;
  Node<S>* out = detail::result(x, shape, x.requires_grad() || w.requires_grad());
  MatMap<S>(out->value.data(), rows, cout).noalias() =
      CMatMap<S>(x.value().data(), rows, cin) * CMatMap<S>(w.value().data(), cin, cout);
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    Node<S>* wn = w.node();
    out->backward = [=] {
      CMatMap<S> dy(out->grad.data(), rows, cout);
      if (xn->requires_grad)
        MatMap<S>(xn->g().data(), rows, cin).noalias() += dy * CMatMap<S>(wn->value.data(), cin, cout).transpose();
      if (wn->requires_grad)
        MatMap<S>(wn->g().data(), cin, cout).noalias() += CMatMap<S>(xn->value.data(), rows, cin).transpose() * dy;
    };
  }
  return Var<S>(&x.tape(), out);
}

/// Broadcast-add b [C] along the last axis of x.
template <class S>
Var<S> add_bias(const Var<S>& x, const Var<S>& b) {
  const int c = x.dim(-1);
  if (b.numel() != static_cast<std::size_t>(c)) throw StructuralError("add_bias: width mismatch");
  const int rows = static_cast<int>(x.numel() / c);
  Node<S>* out = detail::result(x, x.shape(), x.requires_grad() || b.requires_grad());
  MatMap<S> y(out->value.data(), rows, c);
  y = CMatMap<S>(x.value().data(), rows, c);
  y.rowwise() += CMatMap<S>(b.value().data(), 1, c).row(0);
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    Node<S>* bn = b.node();
    out->backward = [=] {
      if (xn->requires_grad) detail::accumulate(xn, out->grad);
      if (bn->requires_grad)
        MatMap<S>(bn->g().data(), 1, c) += CMatMap<S>(out->grad.data(), rows, c).colwise().sum();
    };
  }
  return Var<S>(&x.tape(), out);
}

namespace detail {

template <class S, class Fwd, class DA, class DB>
Var<S> binary(const Var<S>& a, const Var<S>& b, const char* name, Fwd fwd, DA da, DB db) {
  require_same_shape(a, b, name);
  Node<S>* out = result(a, a.shape(), a.requires_grad() || b.requires_grad());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = fwd(av[i], bv[i]);
  if (out->requires_grad) {
    Node<S>* an = a.node();
    Node<S>* bn = b.node();
    out->backward = [=] {
      const auto& dy = out->grad;
      if (an->requires_grad) {
        auto& g = an->g();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += da(an->value[i], bn->value[i]) * dy[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->g();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += db(an->value[i], bn->value[i]) * dy[i];
      }
    };
  }
  return Var<S>(&a.tape(), out);
}

// Elementwise map whose derivative is expressed through (input, output).
template <class S, class Fwd, class Deriv>
Var<S> unary(const Var<S>& x, Fwd fwd, Deriv deriv) {
  Node<S>* out = result(x, x.shape(), x.requires_grad());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = fwd(xv[i]);
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    out->backward = [=] {
      auto& g = xn->g();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += deriv(xn->value[i], out->value[i]) * out->grad[i];
    };
  }
  return Var<S>(&x.tape(), out);
}

}  // namespace detail

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  return detail::binary(
      a, b, "add", [](S x, S y) { return x + y; }, [](S, S) { return S(1); }, [](S, S) { return S(1); });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  return detail::binary(
      a, b, "sub", [](S x, S y) { return x - y; }, [](S, S) { return S(1); }, [](S, S) { return S(-1); });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  return detail::binary(
      a, b, "mul", [](S x, S y) { return x * y; }, [](S, S y) { return y; }, [](S x, S) { return x; });
}

template <class S>
Var<S> scale(const Var<S>& x, S factor) {
  return detail::unary(x, [factor](S v) { return v * factor; }, [factor](S, S) { return factor; });
}

template <class S>
Var<S> add_scalar(const Var<S>& x, S c) {
  return detail::unary(x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <class S>
Var<S> sigmoid(const Var<S>& x) {
  return detail::unary(
      x, [](S v) { return S(1) / (S(1) + std::exp(-v)); }, [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Var<S> tanh(const Var<S>& x) {
  return detail::unary(x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <class S>
Var<S> relu(const Var<S>& x) {
  return detail::unary(
      x, [](S v) { return v > S(0) ? v : S(0); }, [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

/// Partitioned graph aggregation.
///
/// z has shape [..., N, K*C] (K partition blocks of C channels laid out
/// contiguously on the last axis) and adj has shape [K, N, N]. The result
/// [..., N, C] is y[p, n, c] = sum_k sum_m adj[k, n, m] * z[p, m, k*C + c].
/// Evaluated as a single GEMM [A_0 ... A_{K-1}] * Z' where Z' stacks the
/// partition blocks of every leading position column-wise.
template <class S>
Var<S> graph_aggregate(const Var<S>& z, const Var<S>& adj) {
  if (adj.rank() != 3 || adj.dim(1) != adj.dim(2) || z.rank() < 2)
    throw StructuralError("graph_aggregate: bad adjacency " + to_string(adj.shape()));
  const int k = adj.dim(0), n = adj.dim(1);
  if (z.dim(-2) != n || z.dim(-1) % k != 0)
    throw StructuralError("graph_aggregate: input " + to_string(z.shape()) + " vs adjacency " +
                          to_string(adj.shape()));
  const int c = z.dim(-1) / k;
  const int p = static_cast<int>(z.numel() / (static_cast<std::size_t>(n) * k * c));
  Shape shape = z.shape();
  shape.back() = c;

  // Stacked adjacency [N, K*N]: column block k holds A_k.
  auto stack_adj = [k, n](const Storage<S>& a) {
    RowMat<S> cat(n, k * n);
    for (int kk = 0; kk < k; ++kk)
      cat.block(0, kk * n, n, n) = CMatMap<S>(a.data() + static_cast<std::size_t>(kk) * n * n, n, n);
    return cat;
  };
  // Z' [K*N, P*C]: Z'[kk*N + m, pp*C + cc] = z[pp, m, kk*C + cc].
  auto gather = [k, n, c, p](const Storage<S>& zv) {
    RowMat<S> zt(k * n, static_cast<Eigen::Index>(p) * c);
    for (int pp = 0; pp < p; ++pp)
      for (int m = 0; m < n; ++m) {
        const S* src = zv.data() + (static_cast<std::size_t>(pp) * n + m) * k * c;
        for (int kk = 0; kk < k; ++kk)
          std::copy(src + kk * c, src + (kk + 1) * c, &zt(kk * n + m, static_cast<Eigen::Index>(pp) * c));
      }
    return zt;
  };

  Node<S>* out = detail::result(z, shape, z.requires_grad() || adj.requires_grad());
  RowMat<S> zt = gather(z.value());
  RowMat<S> yt = stack_adj(adj.value()) * zt;  // [N, P*C]
  for (int pp = 0; pp < p; ++pp)
    for (int nn = 0; nn < n; ++nn)
      std::copy(&yt(nn, static_cast<Eigen::Index>(pp) * c), &yt(nn, static_cast<Eigen::Index>(pp) * c) + c,
                out->value.data() + (static_cast<std::size_t>(pp) * n + nn) * c);

  if (out->requires_grad) {
    Node<S>* zn = z.node();
    Node<S>* an = adj.node();
    out->backward = [=] {
      RowMat<S> dyt(n, static_cast<Eigen::Index>(p) * c);
      for (int pp = 0; pp < p; ++pp)
        for (int nn = 0; nn < n; ++nn) {
          const S* src = out->grad.data() + (static_cast<std::size_t>(pp) * n + nn) * c;
          std::copy(src, src + c, &dyt(nn, static_cast<Eigen::Index>(pp) * c));
        }
      if (zn->requires_grad) {
        RowMat<S> dzt = stack_adj(an->value).transpose() * dyt;  // [K*N, P*C]
        auto& g = zn->g();
        for (int pp = 0; pp < p; ++pp)
          for (int m = 0; m < n; ++m) {
            S* dst = g.data() + (static_cast<std::size_t>(pp) * n + m) * k * c;
            for (int kk = 0; kk < k; ++kk) {
              const S* src = &dzt(kk * n + m, static_cast<Eigen::Index>(pp) * c);
              for (int cc = 0; cc < c; ++cc) dst[kk * c + cc] += src[cc];
            }
          }
      }
      if (an->requires_grad) {
        RowMat<S> dcat = dyt * gather(zn->value).transpose();  // [N, K*N]
        auto& g = an->g();
        for (int kk = 0; kk < k; ++kk)
          MatMap<S>(g.data() + static_cast<std::size_t>(kk) * n * n, n, n) += dcat.block(0, kk * n, n, n);
      }
    };
  }
  return Var<S>(&z.tape(), out);
}

/// Temporal convolution over x [B, T, N, C] with weight [kt*C, Cout]
/// (row index j*C + c for tap j), zero "same" padding (kt-1)/2 and the given
/// stride. Output length is ceil(T / stride).
template <class S>
Var<S> temporal_conv(const Var<S>& x, const Var<S>& w, int kernel, int stride) {
  if (x.rank() != 4) throw StructuralError("temporal_conv: expected [B,T,N,C], got " + to_string(x.shape()));
  const int b = x.dim(0), t = x.dim(1), n = x.dim(2), c = x.dim(3);
  if (kernel < 1 || stride < 1 || w.rank() != 2 || w.dim(0) != kernel * c)
    throw StructuralError("temporal_conv: weight " + to_string(w.shape()) + " incompatible with input " +
                          to_string(x.shape()));
  const int cout = w.dim(1);
  const int tout = (t + stride - 1) / stride;
  const int pad = (kernel - 1) / 2;
  const Eigen::Index rows = static_cast<Eigen::Index>(b) * tout * n;
  const int kc = kernel * c;

  auto col = std::make_shared<RowMat<S>>(RowMat<S>::Zero(rows, kc));
  const auto& xv = x.value();
  for (int bb = 0; bb < b; ++bb)
    for (int to = 0; to < tout; ++to)
      for (int j = 0; j < kernel; ++j) {
        const int ti = to * stride + j - pad;
        if (ti < 0 || ti >= t) continue;
        for (int nn = 0; nn < n; ++nn) {
          const S* src = xv.data() + ((static_cast<std::size_t>(bb) * t + ti) * n + nn) * c;
          std::copy(src, src + c, &(*col)((static_cast<Eigen::Index>(bb) * tout + to) * n + nn, j * c));
        }
      }

  Node<S>* out = detail::result(x, {b, tout, n, cout}, x.requires_grad() || w.requires_grad());
  MatMap<S>(out->value.data(), rows, cout).noalias() = (*col) * CMatMap<S>(w.value().data(), kc, cout);
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    Node<S>* wn = w.node();
    out->backward = [=] {
      CMatMap<S> dy(out->grad.data(), rows, cout);
      if (wn->requires_grad) MatMap<S>(wn->g().data(), kc, cout).noalias() += col->transpose() * dy;
      if (xn->requires_grad) {
        RowMat<S> dcol = dy * CMatMap<S>(wn->value.data(), kc, cout).transpose();
        auto& g = xn->g();
        for (int bb = 0; bb < b; ++bb)
          for (int to = 0; to < tout; ++to)
            for (int j = 0; j < kernel; ++j) {
              const int ti = to * stride + j - pad;
              if (ti < 0 || ti >= t) continue;
              for (int nn = 0; nn < n; ++nn) {
                S* dst = g.data() + ((static_cast<std::size_t>(bb) * t + ti) * n + nn) * c;
                const S* src = &dcol((static_cast<Eigen::Index>(bb) * tout + to) * n + nn, j * c);
                for (int cc = 0; cc < c; ++cc) dst[cc] += src[cc];
              }
            }
      }
    };
  }
  return Var<S>(&x.tape(), out);
}

/// Keeps every `stride`-th step of x [B, T, ...] starting at step 0.
template <class S>
Var<S> time_subsample(const Var<S>& x, int stride) {
  const int b = x.dim(0), t = x.dim(1);
  const std::size_t inner = x.numel() / (static_cast<std::size_t>(b) * t);
  const int tout = (t + stride - 1) / stride;
  Shape shape = x.shape();
  shape[1] = tout;
  Node<S>* out = detail::result(x, shape, x.requires_grad());
  auto index = [=](int bb, int tt, int total) { return (static_cast<std::size_t>(bb) * total + tt) * inner; };
  for (int bb = 0; bb < b; ++bb)
    for (int to = 0; to < tout; ++to)
      std::copy_n(x.value().data() + index(bb, to * stride, t), inner, out->value.data() + index(bb, to, tout));
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    out->backward = [=] {
      auto& g = xn->g();
      for (int bb = 0; bb < b; ++bb)
        for (int to = 0; to < tout; ++to)
          for (std::size_t i = 0; i < inner; ++i)
            g[index(bb, to * stride, t) + i] += out->grad[index(bb, to, tout) + i];
    };
  }
  return Var<S>(&x.tape(), out);
}

/// Running statistics owned by a batch-norm layer.
template <class S>
struct NormStats {
  Buffer<S> mean;
  Buffer<S> var;
};

enum class NormMode {
  kTrain,          ///< batch statistics, running statistics updated
  kTrainFrozen,    ///< batch statistics, running statistics left untouched
  kEval,           ///< running statistics
};

/// Batch normalization over every axis except the last.
template <class S>
Var<S> batch_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, NormStats<S>& stats, NormMode mode,
                  S momentum = S(0.1), S eps = S(1e-5)) {
  const int c = x.dim(-1);
  const int rows = static_cast<int>(x.numel() / c);
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c) ||
      stats.mean.value.size() != static_cast<std::size_t>(c))
    throw StructuralError("batch_norm: channel mismatch for input " + to_string(x.shape()));

  std::vector<S> mean(c, S(0)), inv_std(c);
  const auto& xv = x.value();
  if (mode == NormMode::kEval) {
    for (int j = 0; j < c; ++j) {
      mean[j] = stats.mean.value[j];
      inv_std[j] = S(1) / std::sqrt(stats.var.value[j] + eps);
    }
  } else {
    std::vector<S> var(c, S(0));
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j) mean[j] += xv[static_cast<std::size_t>(r) * c + j];
    for (int j = 0; j < c; ++j) mean[j] /= S(rows);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j) {
        const S d = xv[static_cast<std::size_t>(r) * c + j] - mean[j];
        var[j] += d * d;
      }
    for (int j = 0; j < c; ++j) {
      var[j] /= S(rows);
      inv_std[j] = S(1) / std::sqrt(var[j] + eps);
    }
    if (mode == NormMode::kTrain) {
      const S unbias = rows > 1 ? S(rows) / S(rows - 1) : S(1);
      for (int j = 0; j < c; ++j) {
        stats.mean.value[j] = (S(1) - momentum) * stats.mean.value[j] + momentum * mean[j];
        stats.var.value[j] = (S(1) - momentum) * stats.var.value[j] + momentum * var[j] * unbias;
      }
    }
  }

  Node<S>* out = detail::result(x, x.shape(), x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  auto xhat = std::make_shared<Storage<S>>(x.numel());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) {
      const std::size_t i = static_cast<std::size_t>(r) * c + j;
      (*xhat)[i] = (xv[i] - mean[j]) * inv_std[j];
      out->value[i] = gv[j] * (*xhat)[i] + bv[j];
    }

  if (out->requires_grad) {
    Node<S>* xn = x.node();
    Node<S>* gn = gamma.node();
    Node<S>* bn = beta.node();
    const bool batch_stats = mode != NormMode::kEval;
    out->backward = [=] {
      const auto& dy = out->grad;
      std::vector<S> sum_dy(c, S(0)), sum_dy_xhat(c, S(0));
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) {
          const std::size_t i = static_cast<std::size_t>(r) * c + j;
          sum_dy[j] += dy[i];
          sum_dy_xhat[j] += dy[i] * (*xhat)[i];
        }
      if (gn->requires_grad) {
        auto& g = gn->g();
        for (int j = 0; j < c; ++j) g[j] += sum_dy_xhat[j];
      }
      if (bn->requires_grad) {
        auto& g = bn->g();
        for (int j = 0; j < c; ++j) g[j] += sum_dy[j];
      }
      if (xn->requires_grad) {
        auto& g = xn->g();
        const auto& gam = gn->value;
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j) {
            const std::size_t i = static_cast<std::size_t>(r) * c + j;
            if (batch_stats)
              g[i] += gam[j] * inv_std[j] / S(rows) *
                      (S(rows) * dy[i] - sum_dy[j] - (*xhat)[i] * sum_dy_xhat[j]);
            else
              g[i] += gam[j] * inv_std[j] * dy[i];
          }
      }
    };
  }
  return Var<S>(&x.tape(), out);
}

/// Mean over every axis between the first and the last: [B, ..., C] -> [B, C].
template <class S>
Var<S> mean_pool(const Var<S>& x) {
  const int b = x.dim(0), c = x.dim(-1);
  const int inner = static_cast<int>(x.numel() / (static_cast<std::size_t>(b) * c));
  Node<S>* out = detail::result(x, {b, c}, x.requires_grad());
  const S inv = S(1) / S(inner);
  for (int bb = 0; bb < b; ++bb)
    MatMap<S>(out->value.data() + static_cast<std::size_t>(bb) * c, 1, c) =
        CMatMap<S>(x.value().data() + static_cast<std::size_t>(bb) * inner * c, inner, c).colwise().sum() * inv;
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    out->backward = [=] {
      auto& g = xn->g();
      for (int bb = 0; bb < b; ++bb)
        MatMap<S>(g.data() + static_cast<std::size_t>(bb) * inner * c, inner, c).rowwise() +=
            CMatMap<S>(out->grad.data() + static_cast<std::size_t>(bb) * c, 1, c).row(0) * inv;
    };
  }
  return Var<S>(&x.tape(), out);
}

/// x [B, T, ...] -> x[:, t] with shape [B, ...].
template <class S>
Var<S> select_time(const Var<S>& x, int t) {
  const int b = x.dim(0), steps = x.dim(1);
  if (t < 0 || t >= steps) throw StructuralError("select_time: step out of range");
  const std::size_t inner = x.numel() / (static_cast<std::size_t>(b) * steps);
  Shape shape(x.shape().begin() + 2, x.shape().end());
  shape.insert(shape.begin(), b);
  Node<S>* out = detail::result(x, shape, x.requires_grad());
  for (int bb = 0; bb < b; ++bb)
    std::copy_n(x.value().data() + (static_cast<std::size_t>(bb) * steps + t) * inner, inner,
                out->value.data() + bb * inner);
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    out->backward = [=] {
      auto& g = xn->g();
      for (int bb = 0; bb < b; ++bb)
        for (std::size_t i = 0; i < inner; ++i)
          g[(static_cast<std::size_t>(bb) * steps + t) * inner + i] += out->grad[bb * inner + i];
    };
  }
  return Var<S>(&x.tape(), out);
}

/// Stacks equally shaped [B, ...] steps into [B, T, ...].
template <class S>
Var<S> stack_time(const std::vector<Var<S>>& steps) {
  if (steps.empty()) throw StructuralError("stack_time: no steps");
  const Var<S>& first = steps.front();
  const int b = first.dim(0);
  const int t = static_cast<int>(steps.size());
  const std::size_t inner = first.numel() / b;
  bool needs = false;
  for (const auto& s : steps) {
    detail::require_same_shape(first, s, "stack_time");
    needs = needs || s.requires_grad();
  }
  Shape shape = first.shape();
  shape.insert(shape.begin() + 1, t);
  Node<S>* out = detail::result(first, shape, needs);
  for (int tt = 0; tt < t; ++tt)
    for (int bb = 0; bb < b; ++bb)
      std::copy_n(steps[tt].value().data() + bb * inner, inner,
                  out->value.data() + (static_cast<std::size_t>(bb) * t + tt) * inner);
  if (out->requires_grad) {
    std::vector<Node<S>*> nodes;
    for (const auto& s : steps) nodes.push_back(s.node());
    out->backward = [=] {
      for (int tt = 0; tt < t; ++tt) {
        if (!nodes[tt]->requires_grad) continue;
        auto& g = nodes[tt]->g();
        for (int bb = 0; bb < b; ++bb)
          for (std::size_t i = 0; i < inner; ++i)
            g[bb * inner + i] += out->grad[(static_cast<std::size_t>(bb) * t + tt) * inner + i];
      }
    };
  }
  return Var<S>(&first.tape(), out);
}

/// Repeats x along a new leading batch axis: [...] -> [b, ...].
template <class S>
Var<S> broadcast_batch(const Var<S>& x, int b) {
  Shape shape = x.shape();
  shape.insert(shape.begin(), b);
  const std::size_t inner = x.numel();
  Node<S>* out = detail::result(x, shape, x.requires_grad());
  for (int bb = 0; bb < b; ++bb) std::copy_n(x.value().data(), inner, out->value.data() + bb * inner);
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    out->backward = [=] {
      auto& g = xn->g();
      for (int bb = 0; bb < b; ++bb)
        for (std::size_t i = 0; i < inner; ++i) g[i] += out->grad[bb * inner + i];
    };
  }
  return Var<S>(&x.tape(), out);
}

/// Columns [start, start+len) of the last axis.
template <class S>
Var<S> slice_last(const Var<S>& x, int start, int len) {
  const int c = x.dim(-1);
  if (start < 0 || len < 0 || start + len > c) throw StructuralError("slice_last: range out of bounds");
  const std::size_t rows = x.numel() / c;
  Shape shape = x.shape();
  shape.back() = len;
  Node<S>* out = detail::result(x, shape, x.requires_grad());
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.value().data() + r * c + start, len, out->value.data() + r * len);
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    out->backward = [=] {
      auto& g = xn->g();
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < len; ++j) g[r * c + start + j] += out->grad[r * len + j];
    };
  }
  return Var<S>(&x.tape(), out);
}

template <class S>
Var<S> sum_all(const Var<S>& x) {
  Node<S>* out = detail::result(x, {}, x.requires_grad());
  S s = S(0);
  for (S v : x.value()) s += v;
  out->value[0] = s;
  if (out->requires_grad) {
    Node<S>* xn = x.node();
    out->backward = [=] {
      auto& g = xn->g();
      for (auto& v : g) v += out->grad[0];
    };
  }
  return Var<S>(&x.tape(), out);
}

template <class S>
Var<S> mean_all(const Var<S>& x) {
  return scale(sum_all(x), S(1) / S(x.numel()));
}

/// Mean squared difference over every element.
template <class S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
  Var<S> d = sub(a, b);
  return mean_all(mul(d, d));
}

/// Row-wise ||q/||q|| - g/||g|| ||^2 for q, g of shape [B, D]; result [B].
/// Norms are guarded by `eps` in the denominator.
template <class S>
Var<S> normalized_sq_distance(const Var<S>& q, const Var<S>& g, S eps = S(1e-12)) {
  detail::require_same_shape(q, g, "normalized_sq_distance");
  if (q.rank() != 2) throw StructuralError("normalized_sq_distance: expected [B,D]");
  const int b = q.dim(0), d = q.dim(1);
  Node<S>* out = detail::result(q, {b}, q.requires_grad() || g.requires_grad());
  auto norms = std::make_shared<std::vector<S>>(2 * b);
  for (int r = 0; r < b; ++r) {
    auto qr = CMatMap<S>(q.value().data() + static_cast<std::size_t>(r) * d, 1, d);
    auto gr = CMatMap<S>(g.value().data() + static_cast<std::size_t>(r) * d, 1, d);
    const S qn = qr.norm(), gn = gr.norm();
    (*norms)[2 * r] = qn;
    (*norms)[2 * r + 1] = gn;
    out->value[r] = (qr / (qn + eps) - gr / (gn + eps)).squaredNorm();
  }
  if (out->requires_grad) {
    Node<S>* qnode = q.node();
    Node<S>* gnode = g.node();
    out->backward = [=] {
      for (int r = 0; r < b; ++r) {
        const S dy = out->grad[r];
        const S qn = (*norms)[2 * r], gn = (*norms)[2 * r + 1];
        Eigen::Matrix<S, 1, Eigen::Dynamic> qr = CMatMap<S>(qnode->value.data() + static_cast<std::size_t>(r) * d, 1, d);
        Eigen::Matrix<S, 1, Eigen::Dynamic> gr = CMatMap<S>(gnode->value.data() + static_cast<std::size_t>(r) * d, 1, d);
        const Eigen::Matrix<S, 1, Eigen::Dynamic> u = qr / (qn + eps) - gr / (gn + eps);
        // d/dv of v/(|v|+eps) applied to w: w/(|v|+eps) - v (v.w) / ((|v|+eps)^2 |v|)
        auto pull = [](const auto& v, S nv, const auto& w, S e) {
          Eigen::Matrix<S, 1, Eigen::Dynamic> r = w / (nv + e);
          if (nv > S(0)) r -= v * (v.dot(w) / ((nv + e) * (nv + e) * nv));
          return r;
        };
        if (qnode->requires_grad)
          MatMap<S>(qnode->g().data() + static_cast<std::size_t>(r) * d, 1, d) += pull(qr, qn, u, eps) * (S(2) * dy);
        if (gnode->requires_grad)
          MatMap<S>(gnode->g().data() + static_cast<std::size_t>(r) * d, 1, d) -= pull(gr, gn, u, eps) * (S(2) * dy);
      }
    };
  }
  return Var<S>(&q.tape(), out);
}

/// Mean softmax cross-entropy of logits [B, K] against integer labels.
template <class S>
Var<S> softmax_cross_entropy(const Var<S>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size())
    throw StructuralError("softmax_cross_entropy: logits/labels mismatch");
  const int b = logits.dim(0), k = logits.dim(1);
  for (int y : labels)
    if (y < 0 || y >= k) throw InputError("softmax_cross_entropy: label out of range");
  Node<S>* out = detail::result(logits, {}, logits.requires_grad());
  auto prob = std::make_shared<std::vector<S>>(logits.numel());
  std::vector<int> lab(labels.begin(), labels.end());
  S loss = S(0);
  for (int r = 0; r < b; ++r) {
    const S* z = logits.value().data() + static_cast<std::size_t>(r) * k;
    const S mx = *std::max_element(z, z + k);
    S denom = S(0);
    for (int j = 0; j < k; ++j) denom += std::exp(z[j] - mx);
    for (int j = 0; j < k; ++j) (*prob)[static_cast<std::size_t>(r) * k + j] = std::exp(z[j] - mx) / denom;
    loss += -(z[lab[r]] - mx - std::log(denom));
  }
  out->value[0] = loss / S(b);
  if (out->requires_grad) {
    Node<S>* ln = logits.node();
    out->backward = [=] {
      auto& g = ln->g();
      const S s = out->grad[0] / S(b);
      for (int r = 0; r < b; ++r)
        for (int j = 0; j < k; ++j) {
          const std::size_t i = static_cast<std::size_t>(r) * k + j;
          g[i] += s * ((*prob)[i] - (j == lab[r] ? S(1) : S(0)));
        }
    };
  }
  return Var<S>(&logits.tape(), out);
}

}  // namespace ufefp::ad
