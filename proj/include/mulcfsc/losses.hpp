#pragma once

#include "mulcfsc/cvae.hpp"

namespace mulcfsc::training {

// (1 / 2N) sum over both users and all N images of ||s_hat - s||^2.
template <class T>
Tensor<T> loss_l1(const Tensor<T>& s1, const Tensor<T>& s1_hat, const Tensor<T>& s2,
                  const Tensor<T>& s2_hat) {
  if (s1.shape() != s1_hat.shape() || s2.shape() != s2_hat.shape() || s1.shape() != s2.shape()) {
    throw ShapeError("loss_l1: image batches must share one shape");
  }
  using namespace ops;
  auto total = add(sum(square(sub(s1_hat, s1))), sum(square(sub(s2_hat, s2))));
  return scale(total, T(1) / static_cast<T>(2 * s1.dim(0)));
}

// Condition-generation losses of the two encoders' mask CVAEs.
template <class T>
Tensor<T> loss_lc(const Tensor<T>& lc1, const Tensor<T>& lc2) {
  return ops::add(lc1, lc2);
}

// Decoder-side CVAE loss: reconstruction of y plus the divergence term.
template <class T>
Tensor<T> loss_lsic(const Tensor<T>& l_rec, const Tensor<T>& l_reg) {
  return ops::add(l_rec, l_reg);
}

// L1 + lambda (Lc + Lsic).  An undefined term counts as zero.
template <class T>
Tensor<T> loss_total(const Tensor<T>& l1, const Tensor<T>& lc, const Tensor<T>& lsic, T lambda) {
  if (lambda < T(0)) throw std::invalid_argument("loss_total: lambda must be >= 0");
  Tensor<T> aux;
  if (lc.defined()) aux = lc;
  if (lsic.defined()) aux = aux.defined() ? ops::add(aux, lsic) : lsic;
  if (!aux.defined()) return l1;
  return ops::add(l1, ops::scale(aux, lambda));
}

}  // namespace mulcfsc::training
