#pragma once

// Complex arrays as paired real tensors so the channel path stays on the tape.

#include <complex>
#include <vector>

#include "mulcfsc/ops.hpp"

namespace mulcfsc {

// Host-side complex matrix (CSI storage, test fixtures).
struct ComplexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> re;
  std::vector<double> im;

  ComplexMatrix() = default;
  ComplexMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), re(r * c, 0.0), im(r * c, 0.0) {}

  static ComplexMatrix identity(std::size_t n) {
    ComplexMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.re[i * n + i] = 1.0;
    return m;
  }

  std::complex<double> operator()(std::size_t r, std::size_t c) const {
    return {re[r * cols + c], im[r * cols + c]};
  }
  void set(std::size_t r, std::size_t c, std::complex<double> v) {
    re[r * cols + c] = v.real();
    im[r * cols + c] = v.imag();
  }
  bool operator==(const ComplexMatrix&) const = default;
};

// Batched complex tensor, shape [..., rows, cols] for both parts.
template <class T>
struct ComplexTensor {
  Tensor<T> re;
  Tensor<T> im;

  const Shape& shape() const { return re.shape(); }

  void check() const {
    if (re.shape() != im.shape()) {
      throw ShapeError("complex tensor: re " + shape_str(re.shape()) + " vs im " +
                       shape_str(im.shape()));
    }
  }
};

// Stacks host matrices into a [B, rows, cols] constant.
template <class T>
ComplexTensor<T> stack(const std::vector<ComplexMatrix>& ms) {
  if (ms.empty()) throw ShapeError("stack: empty batch");
  const std::size_t r = ms[0].rows, c = ms[0].cols;
  std::vector<T> re, im;
  re.reserve(ms.size() * r * c);
  im.reserve(ms.size() * r * c);
  for (const auto& m : ms) {
    if (m.rows != r || m.cols != c) throw ShapeError("stack: mixed matrix dims");
    for (double v : m.re) re.push_back(static_cast<T>(v));
    for (double v : m.im) im.push_back(static_cast<T>(v));
  }
  Shape s{ms.size(), r, c};
  return {Tensor<T>(s, std::move(re)), Tensor<T>(s, std::move(im))};
}

namespace cops {

template <class T>
ComplexTensor<T> matmul(const ComplexTensor<T>& a, const ComplexTensor<T>& b) {
  using ops::add;
  using ops::sub;
  auto rr = ops::matmul(a.re, b.re);
  auto ii = ops::matmul(a.im, b.im);
  auto ri = ops::matmul(a.re, b.im);
  auto ir = ops::matmul(a.im, b.re);
  return {sub(rr, ii), add(ri, ir)};
}

template <class T>
ComplexTensor<T> add(const ComplexTensor<T>& a, const ComplexTensor<T>& b) {
  return {ops::add(a.re, b.re), ops::add(a.im, b.im)};
}

template <class T>
ComplexTensor<T> sub(const ComplexTensor<T>& a, const ComplexTensor<T>& b) {
  return {ops::sub(a.re, b.re), ops::sub(a.im, b.im)};
}

template <class T>
ComplexTensor<T> scale(const ComplexTensor<T>& a, T c) {
  return {ops::scale(a.re, c), ops::scale(a.im, c)};
}

// [B, rows, cols] complex -> [B, 2*rows*cols] reals, (re, im) of each entry
// adjacent, row-major.
template <class T>
Tensor<T> interleave(const ComplexTensor<T>& a) {
  a.check();
  const Shape& s = a.shape();
  Shape col = s;
  col.push_back(1);
  auto both = ops::concat<T>({ops::reshape(a.re, col), ops::reshape(a.im, col)}, s.size());
  return ops::reshape(both, Shape{s[0], 2 * shape_numel(s) / s[0]});
}

template <class T>
T squared_norm(const ComplexTensor<T>& a) {
  T s = 0;
  for (T v : a.re.data()) s += v * v;
  for (T v : a.im.data()) s += v * v;
  return s;
}

}  // namespace cops
}  // namespace mulcfsc
