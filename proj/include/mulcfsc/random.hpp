#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "mulcfsc/tensor.hpp"

namespace mulcfsc {

// Seeded random source.  Streams derived with `stream()` are independent of
// each other and of their parent, so one root seed can feed data sampling,
// channel noise and latent sampling without any shared state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32), 0x6d75u};
    Rng r;
    r.engine_.seed(seq);
    return r;
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  // Text snapshot of engine and distribution state (the normal distribution
  // caches its second Box-Muller value).
  std::string state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_ >> normal_;
    if (!is) throw std::invalid_argument("rng: malformed state");
  }

  bool operator==(const Rng& o) const { return engine_ == o.engine_ && normal_ == o.normal_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// I.i.d. standard normal entries.
template <class T>
Tensor<T> gaussian_sample(Rng& rng, Shape shape) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return Tensor<T>(std::move(shape), std::move(v));
}

// I.i.d. uniform entries on [lo, hi).
template <class T>
Tensor<T> uniform_sample(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace mulcfsc
