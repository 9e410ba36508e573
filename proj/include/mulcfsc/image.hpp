#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mulcfsc/tensor.hpp"

namespace mulcfsc {

// H x W x 3 image, interleaved channels, values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w * 3, fill) {}

  double& operator()(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  double operator()(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * 3 + c];
  }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
  bool operator==(const Image& o) const = default;
};

// Stacks equally sized images into a [B, H, W, 3] tensor.
template <class T>
Tensor<T> to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("to_tensor: empty image list");
  const auto h = images[0]->height, w = images[0]->width;
  std::vector<T> v;
  v.reserve(images.size() * h * w * 3);
  for (const auto* im : images) {
    if (im->height != h || im->width != w) throw ShapeError("to_tensor: images differ in size");
    for (double x : im->data) v.push_back(static_cast<T>(x));
  }
  return Tensor<T>({images.size(), h, w, 3}, std::move(v));
}

template <class T>
std::vector<Image> from_tensor(const Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(3) != 3) throw ShapeError("from_tensor: expected [B, H, W, 3], got " + shape_str(t.shape()));
  std::vector<Image> out;
  const std::size_t n = t.dim(1) * t.dim(2) * 3;
  auto d = t.data();
  for (std::size_t b = 0; b < t.dim(0); ++b) {
    Image im(t.dim(1), t.dim(2));
    for (std::size_t i = 0; i < n; ++i) im.data[i] = static_cast<double>(d[b * n + i]);
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace mulcfsc
