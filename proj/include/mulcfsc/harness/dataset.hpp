#pragma once

// Image sets: a directory of PNG/PPM/PGM files, or a seeded synthetic set.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mulcfsc/harness/image_io.hpp"
#include "mulcfsc/image.hpp"
#include "mulcfsc/random.hpp"

namespace mulcfsc::harness {

// Bilinear resampling with pixel-centre alignment.
inline Image resize_bilinear(const Image& src, std::size_t h, std::size_t w) {
  if (src.height == h && src.width == w) return src;
  Image out(h, w);
  const double sy = static_cast<double>(src.height) / h, sx = static_cast<double>(src.width) / w;
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double ay = fy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double ax = fx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = src(y0, x0, c) * (1 - ax) + src(y0, x1, c) * ax;
        const double bot = src(y1, x0, c) * (1 - ax) + src(y1, x1, c) * ax;
        out(y, x, c) = top * (1 - ay) + bot * ay;
      }
    }
  }
  return out;
}

using Warn = std::function<void(const std::string&)>;

// Files ending in .png, .ppm or .pgm (case-insensitive), read in
// lexicographic path order.  Unreadable files are reported through `warn` and
// skipped.
inline std::vector<Image> load_dataset(const std::string& dir, std::size_t size, const Warn& warn = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("load_dataset: not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& p : files) {
    try {
      auto ext = p.extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      auto im = ext == ".png" ? read_png(p.string()) : read_pnm(p.string());
      out.push_back(resize_bilinear(im, size, size));
    } catch (const ImageReadError& e) {
      if (warn) warn(std::string("skipping unreadable image: ") + e.what());
    }
  }
  if (out.empty()) throw std::runtime_error("load_dataset: no readable images in " + dir);
  return out;
}

struct SynthSpec {
  std::size_t count = 200;
  std::size_t size = 32;
  std::uint64_t seed = 7;
};

// Each image: a two-colour linear gradient, 1-3 flat rectangles and 1-3
// Gaussian blobs blended on top, clamped to [0, 1].
inline std::vector<Image> synth_dataset(const SynthSpec& spec) {
  auto rng = Rng::stream(spec.seed, 0x5e7);
  const std::size_t n = spec.size;
  std::vector<Image> out;
  out.reserve(spec.count);
  auto colour = [&](double lo, double hi) {
    return std::array<double, 3>{rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  };
  for (std::size_t k = 0; k < spec.count; ++k) {
    Image im(n, n);
    const auto c0 = colour(0.1, 0.9), c1 = colour(0.1, 0.9);
    const double ang = rng.uniform(0, 2 * M_PI), dx = std::cos(ang), dy = std::sin(ang);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double t = 0.5 + ((x + 0.5) / n - 0.5) * dx + ((y + 0.5) / n - 0.5) * dy;
        const double u = std::clamp(t, 0.0, 1.0);
        for (std::size_t c = 0; c < 3; ++c) im(y, x, c) = c0[c] * (1 - u) + c1[c] * u;
      }
    const std::size_t rects = 1 + rng.below(3);
    for (std::size_t r = 0; r < rects; ++r) {
      const auto col = colour(0.0, 1.0);
      const std::size_t w = n / 6 + rng.below(n / 2), h = n / 6 + rng.below(n / 2);
      const std::size_t x0 = rng.below(n - w + 1), y0 = rng.below(n - h + 1);
      for (std::size_t y = y0; y < y0 + h; ++y)
        for (std::size_t x = x0; x < x0 + w; ++x)
          for (std::size_t c = 0; c < 3; ++c) im(y, x, c) = col[c];
    }
    const std::size_t blobs = 1 + rng.below(3);
    for (std::size_t b = 0; b < blobs; ++b) {
      const auto col = colour(0.0, 1.0);
      const double cx = rng.uniform(0, n), cy = rng.uniform(0, n), s = rng.uniform(n / 12.0, n / 4.0);
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const double d2 = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy);
          const double a = 0.8 * std::exp(-d2 / (2 * s * s));
          for (std::size_t c = 0; c < 3; ++c) im(y, x, c) = im(y, x, c) * (1 - a) + col[c] * a;
        }
    }
    for (auto& v : im.data) v = std::clamp(v, 0.0, 1.0);
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace mulcfsc::harness
