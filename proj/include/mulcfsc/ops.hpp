#pragma once

// Differentiable primitive set.  Every op validates shapes, rejects
// non-finite inputs and outputs, and records a backward closure when an
// input requires gradients and a Tape is active.

#include <array>
#include <bit>
#include <cstdint>
#include <type_traits>
#include <cmath>
#include <limits>
#include <string>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "mulcfsc/tensor.hpp"

namespace mulcfsc::ops {

namespace detail {

// Exponent-bits test so the scan vectorizes.
template <class T>
void require_finite(std::span<const T> v, std::string_view op, const char* what) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr U exp_mask = static_cast<U>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  U bad = 0;
  for (T x : v) bad |= static_cast<U>((std::bit_cast<U>(x) & exp_mask) == exp_mask);
  if (bad) throw NumericError(std::string(op) + ": non-finite " + what);
}

template <class T>
using GradSlots = std::vector<std::vector<T>*>;

// Builds the result tensor and, when recording, registers `bwd`.  `bwd`
// receives the output gradient, one slot per input (nullptr for inputs that
// do not require gradients) and the output values.
template <class T, class Bwd>
Tensor<T> emit(std::string_view name, Shape shape, std::vector<T> data,
               const std::vector<Tensor<T>>& inputs, Bwd bwd) {
  for (const auto& in : inputs) require_finite<T>(in.data(), name, "input");
  require_finite<T>(data, name, "output");
  Tensor<T> out(std::move(shape), std::move(data));
  Tape<T>* tape = active_tape<T>();
  if (!tape) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  std::vector<std::shared_ptr<mulcfsc::detail::Node<T>>> nodes;
  nodes.reserve(inputs.size());
  for (const auto& in : inputs) nodes.push_back(in.shared_node());
  auto on = out.shared_node();
  tape->record(name, [on, nodes = std::move(nodes), bwd = std::move(bwd)]() {
    if (on->grad.empty()) return;
    GradSlots<T> slots(nodes.size(), nullptr);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i]->requires_grad) slots[i] = &nodes[i]->grad_buffer();
    }
    bwd(std::span<const T>(on->grad), slots, std::span<const T>(on->value));
  });
  return out;
}

struct Broadcast {
  Shape out;
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  std::array<std::size_t, 4> sa{0, 0, 0, 0};
  std::array<std::size_t, 4> sb{0, 0, 0, 0};
  bool same = false;
};

inline Broadcast plan_broadcast(const Shape& a, const Shape& b, std::string_view op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  if (r > 4) throw ShapeError(std::string(op) + ": broadcasting supports rank <= 4");
  std::array<std::size_t, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
  for (std::size_t i = 0; i < a.size(); ++i) da[4 - a.size() + i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) db[4 - b.size() + i] = b[i];
  std::size_t stride_a = 1, stride_b = 1;
  for (int i = 3; i >= 0; --i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    p.dims[i] = std::max(da[i], db[i]);
    p.sa[i] = da[i] == 1 ? 0 : stride_a;
    p.sb[i] = db[i] == 1 ? 0 : stride_b;
    stride_a *= da[i];
    stride_b *= db[i];
  }
  for (std::size_t i = 4 - r; i < 4; ++i) p.out.push_back(p.dims[i]);
  return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < p.dims[0]; ++i0)
    for (std::size_t i1 = 0; i1 < p.dims[1]; ++i1)
      for (std::size_t i2 = 0; i2 < p.dims[2]; ++i2)
        for (std::size_t i3 = 0; i3 < p.dims[3]; ++i3, ++o) {
          std::size_t ia = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2] + i3 * p.sa[3];
          std::size_t ib = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2] + i3 * p.sb[3];
          f(o, ia, ib);
        }
}

// Forward f(a, b); backward uses partials da(a, b), db(a, b).
template <class T, class F, class DA, class DB>
Tensor<T> binary(std::string_view name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da,
                 DB db) {
  Broadcast p = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<T> out(shape_numel(p.out));
  auto av = a.data();
  auto bv = b.data();
  if (p.same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    for_each_broadcast(p, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      out[o] = f(av[ia], bv[ib]);
    });
  }
  Shape shape = p.out;
  return emit<T>(name, std::move(shape), std::move(out), {a, b},
                 [a, b, p, da, db](std::span<const T> g, GradSlots<T>& s, std::span<const T>) {
                   auto av = a.data();
                   auto bv = b.data();
                   auto visit = [&](std::size_t o, std::size_t ia, std::size_t ib) {
                     if (s[0]) (*s[0])[ia] += g[o] * da(av[ia], bv[ib]);
                     if (s[1]) (*s[1])[ib] += g[o] * db(av[ia], bv[ib]);
                   };
                   if (p.same) {
                     for (std::size_t i = 0; i < g.size(); ++i) visit(i, i, i);
                   } else {
                     for_each_broadcast(p, visit);
                   }
                 });
}

// Forward f(x); backward derivative d(x, y) where y = f(x).
template <class T, class F, class D>
Tensor<T> unary(std::string_view name, const Tensor<T>& a, F f, D d) {
  std::vector<T> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return emit<T>(name, a.shape(), std::move(out), {a},
                 [a, d](std::span<const T> g, GradSlots<T>& s, std::span<const T> y) {
                   auto av = a.data();
                   auto& ga = *s[0];
                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d(av[i], y[i]);
                 });
}

// C[m,n] += A[m,k] * B[k,n], four output rows per pass.
template <class T>
void gemm_nn(const T* __restrict A, const T* __restrict B, T* __restrict C, std::size_t m, std::size_t k,
             std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = C + i * n;
    T* __restrict c1 = c0 + n;
    T* __restrict c2 = c1 + n;
    T* __restrict c3 = c2 + n;
    const T* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a[p], x1 = a[k + p], x2 = a[2 * k + p], x3 = a[3 * k + p];
      const T* __restrict b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bj = b[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = A[i * k + p];
      const T* __restrict b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n], four rows of A per pass.
template <class T>
void gemm_tn(const T* __restrict A, const T* __restrict G, T* __restrict C, std::size_t m, std::size_t k,
             std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* __restrict g0 = G + i * n;
    const T* __restrict g1 = g0 + n;
    const T* __restrict g2 = g1 + n;
    const T* __restrict g3 = g2 + n;
    const T* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a[p], x1 = a[k + p], x2 = a[2 * k + p], x3 = a[3 * k + p];
      T* __restrict c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += x0 * g0[j] + x1 * g1[j] + x2 * g2[j] + x3 * g3[j];
    }
  }
  for (; i < m; ++i) {
    const T* __restrict g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = A[i * k + p];
      T* __restrict c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * g[j];
    }
  }
}

template <class T>
std::vector<T> transposed(const T* B, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = B[r * cols + c];
  return t;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                                         shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary<T>(
      "scale", a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary<T>(
      "add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary<T>(
      "square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> detach(const Tensor<T>& a) {
  return a.detach();
}

// Replay log for stop_gradient.  While a Scope is open, the first pass records
// every stopped value and later passes get the recorded values back, so a
// finite-difference probe holds stopped quantities fixed like the tape does.
template <class T>
class StopReplay {
 public:
  class Scope {
   public:
    explicit Scope(StopReplay& r) : r_(r), prev_(current()) {
      r_.cursor_ = 0;
      current() = &r_;
    }
    ~Scope() {
      r_.recorded_ = true;
      current() = prev_;
    }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    StopReplay& r_;
    StopReplay* prev_;
  };

  static StopReplay*& current() {
    static thread_local StopReplay* p = nullptr;
    return p;
  }

  Tensor<T> apply(const Tensor<T>& a) {
    if (!recorded_) {
      values_.push_back(a.values());
      return a.detach();
    }
    if (cursor_ >= values_.size() || values_[cursor_].size() != a.numel()) {
      throw std::logic_error("stop_gradient replay: call sequence changed between passes");
    }
    return Tensor<T>(a.shape(), values_[cursor_++]);
  }

 private:
  std::vector<std::vector<T>> values_;
  std::size_t cursor_ = 0;
  bool recorded_ = false;
};

template <class T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  if (auto* r = StopReplay<T>::current()) return r->apply(a);
  return a.detach();
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.data()) s += x;
  return detail::emit<T>("sum", Shape{}, {s}, {a},
                         [](std::span<const T> g, detail::GradSlots<T>& sl, std::span<const T>) {
                           for (auto& v : *sl[0]) v += g[0];
                         });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = true) {
  auto sp = detail::split_axis(a.shape(), axis);
  Shape shape = a.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  std::vector<T> out(sp.outer * sp.inner, T(0));
  auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += av[(o * sp.len + l) * sp.inner + i];
  return detail::emit<T>("sum_axis", std::move(shape), std::move(out), {a},
                         [sp](std::span<const T> g, detail::GradSlots<T>& sl, std::span<const T>) {
                           auto& ga = *sl[0];
                           for (std::size_t o = 0; o < sp.outer; ++o)
                             for (std::size_t l = 0; l < sp.len; ++l)
                               for (std::size_t i = 0; i < sp.inner; ++i)
                                 ga[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i];
                         });
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = true) {
  return scale(sum_axis(a, axis, keepdim), T(1) / static_cast<T>(a.dim(axis)));
}

// Softmax along the last axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
  if (a.rank() == 0) throw ShapeError("softmax: needs rank >= 1");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  std::vector<T> out(a.numel());
  auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * n;
    T* y = out.data() + r * n;
    T mx = *std::max_element(x, x + n);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= s;
  }
  return detail::emit<T>("softmax", a.shape(), std::move(out), {a},
                         [n, rows](std::span<const T> g, detail::GradSlots<T>& sl,
                                   std::span<const T> y) {
                           auto& ga = *sl[0];
                           for (std::size_t r = 0; r < rows; ++r) {
                             T dot = 0;
                             for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               ga[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
                           }
                         });
}

// ---------------------------------------------------------------------------
// Linear algebra

// a: [..., m, k].  b: [k, n] (shared across the leading dims of a) or
// [..., k, n] with the same leading dims as a.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const bool shared = b.rank() == 2;
  if (!shared) {
    if (b.rank() != a.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw ShapeError("matmul: batch dims differ, " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    }
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  shape.push_back(n);
  std::vector<T> out(batch * m * n, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  if (shared) {
    detail::gemm_nn(A, B, out.data(), batch * m, k, n);
  } else {
    for (std::size_t t = 0; t < batch; ++t)
      detail::gemm_nn(A + t * m * k, B + t * k * n, out.data() + t * m * n, m, k, n);
  }
  return detail::emit<T>(
      "matmul", std::move(shape), std::move(out), {a, b},
      [a, b, m, k, n, batch, shared](std::span<const T> g, detail::GradSlots<T>& sl,
                                     std::span<const T>) {
        const T* A = a.data().data();
        const T* B = b.data().data();
        const T* G = g.data();
        if (shared) {
          if (sl[0]) {
            auto bt = detail::transposed(B, k, n);
            detail::gemm_nn(G, bt.data(), sl[0]->data(), batch * m, n, k);
          }
          if (sl[1]) detail::gemm_tn(A, G, sl[1]->data(), batch * m, k, n);
          return;
        }
        for (std::size_t t = 0; t < batch; ++t) {
          if (sl[0]) {
            auto bt = detail::transposed(B + t * k * n, k, n);
            detail::gemm_nn(G + t * m * n, bt.data(), sl[0]->data() + t * m * k, m, n, k);
          }
          if (sl[1]) detail::gemm_tn(A + t * m * k, G + t * m * n, sl[1]->data() + t * k * n, m, k, n);
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

// out[i] = a[index[i]]; the backward pass scatter-adds.
template <class T>
Tensor<T> take(const Tensor<T>& a, std::vector<std::size_t> index, Shape shape) {
  if (shape_numel(shape) != index.size()) throw ShapeError("take: index count != output size");
  std::vector<T> out(index.size());
  auto av = a.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= av.size()) throw ShapeError("take: index out of range");
    out[i] = av[index[i]];
  }
  return detail::emit<T>("take", std::move(shape), std::move(out), {a},
                         [index = std::move(index)](std::span<const T> g,
                                                    detail::GradSlots<T>& sl, std::span<const T>) {
                           auto& ga = *sl[0];
                           for (std::size_t i = 0; i < index.size(); ++i) ga[index[i]] += g[i];
                         });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto v = a.data();
  return detail::emit<T>("reshape", std::move(shape), std::vector<T>(v.begin(), v.end()), {a},
                         [](std::span<const T> g, detail::GradSlots<T>& sl, std::span<const T>) {
                           auto& ga = *sl[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         });
}

// Swaps the last two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() < 2) throw ShapeError("transpose: needs rank >= 2");
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  const std::size_t batch = a.numel() / (r * c);
  std::vector<std::size_t> idx(a.numel());
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < r; ++j) idx[t * r * c + i * r + j] = t * r * c + j * c + i;
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return take(a, std::move(idx), std::move(shape));
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  auto sp = detail::split_axis(a.shape(), axis);
  if (start + len > sp.len) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") exceeds axis extent " + std::to_string(sp.len));
  }
  Shape shape = a.shape();
  shape[axis] = len;
  std::vector<std::size_t> idx;
  idx.reserve(sp.outer * len * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = start; l < start + len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) idx.push_back((o * sp.len + l) * sp.inner + i);
  return take(a, std::move(idx), std::move(shape));
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.dim(i) != ref[i]) {
        throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " +
                         shape_str(ref));
      }
    }
    total += p.dim(axis);
  }
  Shape shape = ref;
  shape[axis] = total;
  auto sp = detail::split_axis(shape, axis);
  std::vector<T> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis);
    auto pv = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pv.data() + o * len * sp.inner, len * sp.inner,
                  out.data() + (o * total + off) * sp.inner);
    off += len;
  }
  std::vector<std::size_t> lens;
  for (const auto& p : parts) lens.push_back(p.dim(axis));
  return detail::emit<T>(
      "concat", std::move(shape), std::move(out), parts,
      [sp, total, offsets, lens](std::span<const T> g, detail::GradSlots<T>& sl,
                                 std::span<const T>) {
        for (std::size_t k = 0; k < sl.size(); ++k) {
          if (!sl[k]) continue;
          auto& gk = *sl[k];
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < lens[k] * sp.inner; ++i)
              gk[o * lens[k] * sp.inner + i] += g[(o * total + offsets[k]) * sp.inner + i];
        }
      });
}

// Generic escape hatch for ops with a hand-written backward.  `bwd` receives
// (output grad, per-input grad slots, output values).
template <class T, class Bwd>
Tensor<T> custom(std::string_view name, Shape shape, std::vector<T> data,
                 const std::vector<Tensor<T>>& inputs, Bwd bwd) {
  return detail::emit<T>(name, std::move(shape), std::move(data), inputs, std::move(bwd));
}

}  // namespace mulcfsc::ops
