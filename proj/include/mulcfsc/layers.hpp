#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mulcfsc/ops.hpp"
#include "mulcfsc/random.hpp"

namespace mulcfsc {

// Ordered, named collection of trainable leaf tensors.
template <class T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  Tensor<T> uniform(const std::string& name, Shape shape, T bound, Rng& rng) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return push(name, Tensor<T>(std::move(shape), std::move(v), true));
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value) {
    auto t = Tensor<T>::full(std::move(shape), value);
    t.set_requires_grad(true);
    return push(name, t);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_) out.push_back(e.tensor);
    return out;
  }
  std::size_t size() const { return entries_.size(); }

  // Total number of scalar parameters.
  std::size_t census() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  Tensor<T> find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.tensor;
    throw std::out_of_range("param not found: " + name);
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  // Value copy from a set with identical names and shapes.
  void copy_values_from(const ParamSet& other) {
    if (other.entries_.size() != entries_.size()) throw ShapeError("param copy: size mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& src = other.entries_[i];
      auto& dst = entries_[i];
      if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
        throw ShapeError("param copy: layout mismatch at " + dst.name);
      }
      auto s = src.tensor.data();
      std::copy(s.begin(), s.end(), dst.tensor.mutable_data().begin());
    }
  }

  // Appends every entry of `other` under `prefix`.
  void extend(const std::string& prefix, const ParamSet& other) {
    for (const auto& e : other.entries_) entries_.push_back({prefix + e.name, e.tensor});
  }

 private:
  Tensor<T> push(const std::string& name, Tensor<T> t) {
    for (const auto& e : entries_)
      if (e.name == name) throw std::invalid_argument("duplicate param name: " + name);
    entries_.push_back({name, t});
    return t;
  }

  std::vector<Entry> entries_;
};

// Affine map over the last axis.
template <class T>
struct Dense {
  Tensor<T> w;
  Tensor<T> b;

  Dense() = default;
  Dense(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
        T gain = T(1)) {
    const T bound = gain * static_cast<T>(std::sqrt(6.0 / static_cast<double>(in + out)));
    w = ps.uniform(name + ".w", {in, out}, bound, rng);
    b = ps.constant(name + ".b", {out}, T(0));
  }

  std::size_t in_features() const { return w.dim(0); }
  std::size_t out_features() const { return w.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() == 0 || x.shape().back() != w.dim(0)) {
      throw ShapeError("dense: input " + shape_str(x.shape()) + " does not end in " +
                       std::to_string(w.dim(0)));
    }
    if (x.rank() == 1) {
      auto y = ops::matmul(ops::reshape(x, {1, x.dim(0)}), w);
      return ops::reshape(ops::add(y, b), {w.dim(1)});
    }
    return ops::add(ops::matmul(x, w), b);
  }
};

}  // namespace mulcfsc
