#pragma once

// Dense real tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node holding the value buffer and,
// once backward has touched it, a gradient buffer of the same size.  Ops that
// see an input with requires_grad() while a Tape is active on the current
// thread append a backward closure to that tape.  Without an active tape every
// op is a plain forward evaluation, which is how inference runs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mulcfsc {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor of(Shape shape, std::initializer_list<T> values) {
    return Tensor(std::move(shape), std::vector<T>(values));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T at(std::size_t i) const { return node_->value.at(i); }
  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Empty span until a backward pass has accumulated into this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::vector<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  Tensor detach() const { return Tensor(node_->shape, node_->value); }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }
  detail::Node<T>* node() const { return node_.get(); }
  std::shared_ptr<detail::Node<T>> shared_node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// Ordered record of the backward closures of every recorded op.  Recording
// order is a topological order of the graph, so a reverse sweep visits each
// op exactly once after all of its consumers.
template <class T>
class Tape {
 public:
  struct Entry {
    std::string_view op;
    std::function<void()> backward;
  };

  void record(std::string_view op, std::function<void()> backward) {
    entries_.push_back({op, std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }
  std::vector<std::string_view> ops() const {
    std::vector<std::string_view> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.op);
    return out;
  }
  void clear() { entries_.clear(); }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ShapeError("backward: seed output must be scalar, got " + shape_str(loss.shape()));
    }
    loss.grad_buffer()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {
template <class T>
struct ActiveTape {
  static inline thread_local Tape<T>* current = nullptr;
};
}  // namespace detail

template <class T>
Tape<T>* active_tape() {
  return detail::ActiveTape<T>::current;
}

// RAII: makes `tape` the recording target on this thread for its lifetime.
template <class T>
class Recording {
 public:
  explicit Recording(Tape<T>& tape) : prev_(detail::ActiveTape<T>::current) {
    detail::ActiveTape<T>::current = &tape;
  }
  ~Recording() { detail::ActiveTape<T>::current = prev_; }
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

 private:
  Tape<T>* prev_;
};

// RAII: suspends recording on this thread.
template <class T>
class NoGrad {
 public:
  NoGrad() : prev_(detail::ActiveTape<T>::current) { detail::ActiveTape<T>::current = nullptr; }
  ~NoGrad() { detail::ActiveTape<T>::current = prev_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape<T>* prev_;
};

// Analytic gradients of a scalar output with respect to `wrt`, computed by a
// reverse sweep over `tape`.  Gradient buffers of `wrt` are reset first.
template <class T>
std::vector<std::vector<T>> gradients(Tape<T>& tape, Tensor<T> output,
                                      std::vector<Tensor<T>> wrt) {
  for (auto& w : wrt) w.zero_grad();
  tape.backward(output);
  std::vector<std::vector<T>> out;
  out.reserve(wrt.size());
  for (auto& w : wrt) {
    auto g = w.grad();
    out.emplace_back(g.begin(), g.end());
    if (out.back().empty()) out.back().assign(w.numel(), T(0));
  }
  return out;
}

}  // namespace mulcfsc
