#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "mulcfsc/random.hpp"
#include "mulcfsc/tensor.hpp"

namespace mulcfsc {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double max_abs_error = 0.0;  // max |analytic - numeric|
  double max_abs_grad = 0.0;   // max of |analytic| and |numeric|

  // Max-norm relative error: max |a - n| / max(|a|, |n|) over the checked
  // coordinates.  Unlike the per-coordinate statistic this does not blow up
  // on coordinates whose true derivative is ~0.
  double norm_rel_error() const { return max_abs_error / std::max(max_abs_grad, 1e-12); }
};

// Compares the tape gradient of a scalar function against central finite
// differences.  `inputs` are leaf tensors the function reads; their values are
// perturbed in place and restored.  Per coordinate the statistic is
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-12)
// and max_rel_error is the maximum; norm_rel_error() is the max-norm variant.  With `max_coords` set, a random subset of
// that many coordinates (drawn with `rng`) is checked instead of all.
template <class T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& fn, std::vector<Tensor<T>> inputs,
                           T step, std::optional<std::size_t> max_coords = std::nullopt,
                           Rng* rng = nullptr) {
  std::vector<bool> saved;
  for (auto& in : inputs) {
    saved.push_back(in.requires_grad());
    in.set_requires_grad(true);
  }
  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    Tensor<T> out;
    {
      Recording<T> rec(tape);
      out = fn();
    }
    analytic = gradients(tape, out, inputs);
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
  if (max_coords && *max_coords < coords.size()) {
    Rng local(0x5eed);
    Rng& r = rng ? *rng : local;
    for (std::size_t i = 0; i < *max_coords; ++i) {
      std::swap(coords[i], coords[i + r.below(coords.size() - i)]);
    }
    coords.resize(*max_coords);
  }

  GradCheckResult res;
  res.coordinates = coords.size();
  NoGrad<T> off;
  for (auto [i, j] : coords) {
    T& x = inputs[i].mutable_data()[j];
    const T orig = x;
    x = orig + step;
    const double fp = static_cast<double>(fn().item());
    x = orig - step;
    const double fm = static_cast<double>(fn().item());
    x = orig;
    const double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
    const double a = static_cast<double>(analytic[i][j]);
    const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
    res.max_abs_error = std::max(res.max_abs_error, std::abs(a - numeric));
    res.max_abs_grad = std::max({res.max_abs_grad, std::abs(a), std::abs(numeric)});
    if (err >= res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_input = i;
      res.worst_index = j;
      res.worst_analytic = a;
      res.worst_numeric = numeric;
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i].set_requires_grad(saved[i]);
  return res;
}

}  // namespace mulcfsc
