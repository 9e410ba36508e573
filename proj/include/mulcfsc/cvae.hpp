#pragma once

// Diagonal-Gaussian building blocks shared by the encoder mask CVAE and the
// cooperative mask ratio generator.  Variance heads emit log-variances.

#include <string>

#include "mulcfsc/layers.hpp"

namespace mulcfsc {

template <class T>
struct Gaussian {
  Tensor<T> mu;      // [B, L]
  Tensor<T> logvar;  // [B, L]
};

// tanh hidden layer followed by separate mean and log-variance projections.
template <class T>
struct GaussianHead {
  Dense<T> hidden;
  Dense<T> mu;
  Dense<T> logvar;

  GaussianHead() = default;
  GaussianHead(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t width,
               std::size_t latent, Rng& rng)
      : hidden(ps, name + ".hidden", in, width, rng),
        mu(ps, name + ".mu", width, latent, rng),
        logvar(ps, name + ".logvar", width, latent, rng, T(0.1)) {}

  Gaussian<T> operator()(const Tensor<T>& x) const {
    auto h = ops::tanh(hidden(x));
    return {mu(h), logvar(h)};
  }
};

// Divergence term in its un-halved form, averaged over the batch (axis 0):
//   (1/N) sum_j sum_i [ f_lv - h_lv + exp(h_lv - f_lv) + (f_mu - h_mu)^2 / exp(f_lv) ]
// with f the prior and h the posterior.  Equals 2 KL(q || p) + L, so it is
// never below L and reaches L exactly when the two distributions coincide.
template <class T>
Tensor<T> kl_reg(const Gaussian<T>& prior, const Gaussian<T>& posterior) {
  const auto& f = prior;
  const auto& h = posterior;
  if (f.mu.shape() != h.mu.shape() || f.logvar.shape() != h.logvar.shape() ||
      f.mu.shape() != f.logvar.shape()) {
    throw ShapeError("kl_reg: prior/posterior shapes differ");
  }
  using namespace ops;
  auto term = add(add(sub(f.logvar, h.logvar), exp(sub(h.logvar, f.logvar))),
                  div(square(sub(f.mu, h.mu)), exp(f.logvar)));
  const std::size_t n = f.mu.rank() >= 2 ? f.mu.dim(0) : 1;
  return scale(sum(term), T(1) / static_cast<T>(n));
}

// Reparametrized draw z = mu + eps * exp(logvar / 2).  `eps` is supplied by
// the caller so the noise never enters the tape.
template <class T>
Tensor<T> reparametrize(const Gaussian<T>& q, const Tensor<T>& eps) {
  if (eps.shape() != q.mu.shape()) throw ShapeError("reparametrize: eps shape mismatch");
  using namespace ops;
  return add(q.mu, mul(eps, exp(scale(q.logvar, T(0.5)))));
}

// Sum of squared error per row, averaged over rows.
template <class T>
Tensor<T> mean_row_sse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("sse: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.rank() >= 1 ? a.dim(0) : 1;
  return ops::scale(ops::sum(ops::square(ops::sub(a, b))), T(1) / static_cast<T>(n));
}

}  // namespace mulcfsc
