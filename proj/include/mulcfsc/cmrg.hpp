#pragma once

// Cooperative mask ratio generator.
//
// A conditional VAE whose observation is the received grid y and whose
// condition is the cancellation residual y_bar_s produced with a frozen
// encoder snapshot.  The latent sample feeds two pairs of heads; each pair
// picks a row of the predefined ratio grid (range logits) and blends that
// row's values (value logits) into one mask ratio per successive decoder.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mulcfsc/cvae.hpp"

namespace mulcfsc::cmrg {

// K x K grid; row i lists the candidate ratios of range i in ascending order
// and rows cover ascending, disjoint intervals.
class MaskRatioGrid {
 public:
  MaskRatioGrid() : MaskRatioGrid(uniform(4, 0.0, 0.4)) {}

  explicit MaskRatioGrid(std::vector<std::vector<double>> rows) : rows_(std::move(rows)) {
    const std::size_t k = rows_.size();
    if (k == 0) throw std::invalid_argument("mask ratio grid: empty");
    for (std::size_t i = 0; i < k; ++i) {
      const auto& r = rows_[i];
      if (r.size() != k) throw std::invalid_argument("mask ratio grid: must be K x K");
      for (std::size_t j = 0; j < k; ++j) {
        if (!(r[j] >= 0.0 && r[j] <= 1.0)) throw std::invalid_argument("mask ratio grid: entry outside [0, 1]");
        if (j > 0 && !(r[j] > r[j - 1])) throw std::invalid_argument("mask ratio grid: rows must ascend");
      }
      if (i > 0 && !(rows_[i - 1].back() < r.front())) {
        throw std::invalid_argument("mask ratio grid: row intervals must ascend and be disjoint");
      }
    }
  }

  // Splits [lo, hi] into K equal intervals with K evenly spaced interior
  // values each (cell centres).
  static MaskRatioGrid uniform(std::size_t k, double lo, double hi) {
    if (k == 0 || !(hi > lo)) throw std::invalid_argument("mask ratio grid: need K > 0 and hi > lo");
    const double w = (hi - lo) / static_cast<double>(k);
    std::vector<std::vector<double>> rows(k, std::vector<double>(k));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        rows[i][j] = lo + static_cast<double>(i) * w + (static_cast<double>(j) + 0.5) * w / static_cast<double>(k);
    return MaskRatioGrid(std::move(rows));
  }

  std::size_t k() const { return rows_.size(); }
  const std::vector<double>& row(std::size_t i) const { return rows_.at(i); }
  double midpoint() const { return 0.5 * (rows_.front().front() + rows_.back().back()); }
  const std::vector<std::vector<double>>& rows() const { return rows_; }

 private:
  std::vector<std::vector<double>> rows_;
};

// How the row argmax is differentiated.  StraightThrough passes the softmax
// gradient of the range logits; Exact uses the true (zero) derivative of the
// piecewise-constant argmax, which is what finite differences see.
enum class ArgmaxGrad { StraightThrough, Exact };

template <class T>
struct SelectionVectors {
  Tensor<T> range;  // [B, K] range logits
  Tensor<T> value;  // [B, K] value logits
};

// m* = grid[argmax(range)] . softmax(value), one ratio per row of the batch.
// The result always lies inside the selected row's [min, max].
template <class T>
Tensor<T> select_ratio(const MaskRatioGrid& grid, const SelectionVectors<T>& sel,
                       ArgmaxGrad mode = ArgmaxGrad::StraightThrough) {
  const std::size_t k = grid.k();
  if (sel.range.rank() != 2 || sel.range.dim(1) != k || sel.value.shape() != sel.range.shape()) {
    throw ShapeError("select_ratio: selection vectors must be [B, K] with K = " + std::to_string(k));
  }
  const std::size_t b = sel.range.dim(0);
  auto softmax_row = [k](const T* x, std::vector<double>& w) {
    double mx = *std::max_element(x, x + k), s = 0;
    for (std::size_t j = 0; j < k; ++j) s += (w[j] = std::exp(static_cast<double>(x[j]) - mx));
    for (auto& v : w) v /= s;
  };
  std::vector<T> out(b);
  std::vector<std::size_t> rows(b);
  auto r = sel.range.data();
  auto v = sel.value.data();
  std::vector<double> w(k);
  for (std::size_t i = 0; i < b; ++i) {
    const T* ri = r.data() + i * k;
    rows[i] = static_cast<std::size_t>(std::max_element(ri, ri + k) - ri);
    softmax_row(v.data() + i * k, w);
    const auto& row = grid.row(rows[i]);
    double m = 0;
    for (std::size_t j = 0; j < k; ++j) m += row[j] * w[j];
    out[i] = static_cast<T>(std::clamp(m, row.front(), row.back()));
  }
  return ops::custom<T>(
      "select_ratio", {b}, std::move(out), {sel.range, sel.value},
      [grid, sel, rows, mode, k, softmax_row](std::span<const T> g, ops::detail::GradSlots<T>& sl,
                                             std::span<const T>) {
        auto r = sel.range.data();
        auto v = sel.value.data();
        std::vector<double> w(k), p(k), c(k);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          softmax_row(v.data() + i * k, w);
          const auto& row = grid.row(rows[i]);
          double m = 0;
          for (std::size_t j = 0; j < k; ++j) m += row[j] * w[j];
          if (sl[1]) {
            for (std::size_t j = 0; j < k; ++j)
              (*sl[1])[i * k + j] += static_cast<T>(g[i] * w[j] * (row[j] - m));
          }
          if (sl[0] && mode == ArgmaxGrad::StraightThrough) {
            softmax_row(r.data() + i * k, p);
            double avg = 0;
            for (std::size_t q = 0; q < k; ++q) {
              c[q] = 0;
              for (std::size_t j = 0; j < k; ++j) c[q] += grid.row(q)[j] * w[j];
              avg += p[q] * c[q];
            }
            for (std::size_t q = 0; q < k; ++q)
              (*sl[0])[i * k + q] += static_cast<T>(g[i] * p[q] * (c[q] - avg));
          }
        }
      });
}

template <class T>
struct LatentSample {
  Tensor<T> z;
  Tensor<T> eps;
};

// z = mu + eps * exp(logvar / 2) with eps ~ N(0, I) drawn from `rng`.
template <class T>
LatentSample<T> sample_latent(const Gaussian<T>& q, Rng& rng) {
  auto eps = gaussian_sample<T>(rng, q.mu.shape());
  return {reparametrize(q, eps), eps};
}

struct CmrgConfig {
  std::size_t input = 184;  // reals in one flattened received grid
  std::size_t hidden = 64;
  std::size_t latent = 8;
  MaskRatioGrid grid;
};

template <class T>
class Cmrg {
 public:
  struct Output {
    Tensor<T> m1;  // [B]
    Tensor<T> m2;  // [B]
    Gaussian<T> posterior;
    Gaussian<T> prior;
    Tensor<T> z;
    Tensor<T> y_tilde;
    Tensor<T> l_rec;
    Tensor<T> l_reg;
  };

  Cmrg(const CmrgConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::size_t k = cfg.grid.k();
    post_ = GaussianHead<T>(ps_, "posterior", 2 * cfg.input, cfg.hidden, cfg.latent, rng);
    prior_ = GaussianHead<T>(ps_, "prior", cfg.input, cfg.hidden, cfg.latent, rng);
    rec1_ = Dense<T>(ps_, "recon1", cfg.latent + cfg.input, cfg.hidden, rng);
    rec2_ = Dense<T>(ps_, "recon2", cfg.hidden, cfg.input, rng);
    r1_ = Dense<T>(ps_, "range1", cfg.latent, k, rng);
    v1_ = Dense<T>(ps_, "value1", cfg.latent, k, rng);
    r2_ = Dense<T>(ps_, "range2", cfg.latent, k, rng);
    v2_ = Dense<T>(ps_, "value2", cfg.latent, k, rng);
  }

  const CmrgConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return ps_; }
  const ParamSet<T>& params() const { return ps_; }

  // q(z | y, y_bar_s)
  Gaussian<T> posterior_params(const Tensor<T>& y, const Tensor<T>& y_bar) const {
    check_input(y, "posterior_params");
    check_input(y_bar, "posterior_params");
    return post_(ops::concat<T>({y, y_bar}, 1));
  }

  // p(z | y_bar_s)
  Gaussian<T> prior_params(const Tensor<T>& y_bar) const {
    check_input(y_bar, "prior_params");
    return prior_(y_bar);
  }

  Tensor<T> reconstruct(const Tensor<T>& z, const Tensor<T>& y_bar) const {
    return rec2_(ops::tanh(rec1_(ops::concat<T>({z, y_bar}, 1))));
  }

  SelectionVectors<T> heads(const Tensor<T>& z, int user) const {
    if (user == 1) return {r1_(z), v1_(z)};
    if (user == 2) return {r2_(z), v2_(z)};
    throw std::invalid_argument("cmrg: user must be 1 or 2");
  }

  // y, y_bar: [B, input] flattened grids.  With `eps` undefined the latent is
  // the posterior mean (deterministic inference); otherwise z is the
  // reparametrized draw using the supplied standard-normal `eps`.
  Output generate(const Tensor<T>& y, const Tensor<T>& y_bar, const Tensor<T>& eps,
                  ArgmaxGrad mode = ArgmaxGrad::StraightThrough) const {
    Output o;
    o.posterior = posterior_params(y, y_bar);
    o.prior = prior_params(y_bar);
    o.z = eps.defined() ? reparametrize(o.posterior, eps) : o.posterior.mu;
    o.y_tilde = reconstruct(o.z, y_bar);
    o.l_rec = mean_row_sse(o.y_tilde, y);
    o.l_reg = kl_reg(o.prior, o.posterior);
    o.m1 = select_ratio(cfg_.grid, heads(o.z, 1), mode);
    o.m2 = select_ratio(cfg_.grid, heads(o.z, 2), mode);
    return o;
  }

 private:
  void check_input(const Tensor<T>& t, const char* op) const {
    if (t.rank() != 2 || t.dim(1) != cfg_.input) {
      throw ShapeError(std::string(op) + ": expected [B, " + std::to_string(cfg_.input) + "], got " +
                       shape_str(t.shape()));
    }
  }

  CmrgConfig cfg_;
  ParamSet<T> ps_;
  GaussianHead<T> post_, prior_;
  Dense<T> rec1_, rec2_;
  Dense<T> r1_, v1_, r2_, v2_;
};

}  // namespace mulcfsc::cmrg
