#pragma once

// PSNR and MS-SSIM on [0, 1] images (MAX = 1).
//
// MS-SSIM follows the usual construction: 11x11 Gaussian window (sigma 1.5),
// C1 = (0.01)^2, C2 = (0.03)^2, valid filtering, 2x2 average downsampling
// between scales, contrast-structure terms from every scale but the last and
// the full SSIM from the last.  The standard five weights are truncated to
// the number of scales the image supports and renormalized.  Negative
// per-scale terms are clamped to 0.  Channels are scored separately and
// averaged.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "mulcfsc/image.hpp"

namespace mulcfsc::metrics {

inline constexpr double kPsnrCap = 100.0;
inline constexpr std::size_t kWindow = 11;
inline constexpr double kSigma = 1.5;
inline constexpr double kC1 = 0.01 * 0.01;
inline constexpr double kC2 = 0.03 * 0.03;
inline constexpr std::array<double, 5> kScaleWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.data.size() != b.data.size()) {
    throw std::invalid_argument("metrics: image shapes differ");
  }
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

inline double psnr_from_mse(double m) {
  if (m <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

inline std::size_t ms_ssim_scales(std::size_t h, std::size_t w) {
  const std::size_t side = std::min(h, w);
  std::size_t scales = 0;
  while (scales < kScaleWeights.size() && side >= kWindow << scales) ++scales;
  return scales;
}

inline std::vector<double> gaussian_window() {
  std::vector<double> g(kWindow);
  const double c = (kWindow - 1) / 2.0;
  for (std::size_t i = 0; i < kWindow; ++i) g[i] = std::exp(-(i - c) * (i - c) / (2 * kSigma * kSigma));
  const double s = std::accumulate(g.begin(), g.end(), 0.0);
  for (auto& v : g) v /= s;
  return g;
}

namespace detail {

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
  double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

inline Plane channel_plane(const Image& im, std::size_t c) {
  Plane p{im.height, im.width, std::vector<double>(im.height * im.width)};
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = im.data[i * 3 + c];
  return p;
}

// Separable valid filtering with the Gaussian window.
inline Plane filter(const Plane& p, const std::vector<double>& g) {
  const std::size_t k = g.size(), ow = p.w - k + 1, oh = p.h - k + 1;
  Plane rows{p.h, ow, std::vector<double>(p.h * ow)};
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * p.at(y, x + i);
      rows.v[y * ow + x] = s;
    }
  Plane out{oh, ow, std::vector<double>(oh * ow)};
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * rows.at(y + i, x);
      out.v[y * ow + x] = s;
    }
  return out;
}

inline Plane product(const Plane& a, const Plane& b) {
  Plane o{a.h, a.w, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) o.v[i] = a.v[i] * b.v[i];
  return o;
}

inline Plane downsample(const Plane& p) {
  Plane o{p.h / 2, p.w / 2, std::vector<double>((p.h / 2) * (p.w / 2))};
  for (std::size_t y = 0; y < o.h; ++y)
    for (std::size_t x = 0; x < o.w; ++x)
      o.v[y * o.w + x] =
          0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
  return o;
}

// Mean SSIM and mean contrast-structure term of one plane pair.
inline std::pair<double, double> ssim_cs(const Plane& a, const Plane& b, const std::vector<double>& g) {
  auto mu_a = filter(a, g), mu_b = filter(b, g);
  auto e_aa = filter(product(a, a), g), e_bb = filter(product(b, b), g), e_ab = filter(product(a, b), g);
  double ssim = 0, cs = 0;
  const std::size_t n = mu_a.v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = e_aa.v[i] - ma * ma, vb = e_bb.v[i] - mb * mb, cov = e_ab.v[i] - ma * mb;
    const double c = (2 * cov + kC2) / (va + vb + kC2);
    // Ordered so that a contracted multiply-add cannot make the score
    // depend on argument order.
    const auto [lo, hi] = std::minmax(ma, mb);
    const double l = (2 * ma * mb + kC1) / (lo * lo + hi * hi + kC1);
    cs += c;
    ssim += l * c;
  }
  return {ssim / n, cs / n};
}

}  // namespace detail

inline double ms_ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.data.size() != b.data.size()) {
    throw std::invalid_argument("ms_ssim: image shapes differ");
  }
  const std::size_t scales = ms_ssim_scales(a.height, a.width);
  if (scales == 0) {
    throw std::invalid_argument("ms_ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " is smaller than the 11x11 window");
  }
  double wsum = 0;
  for (std::size_t s = 0; s < scales; ++s) wsum += kScaleWeights[s];
  const auto g = gaussian_window();
  double total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    auto pa = detail::channel_plane(a, c), pb = detail::channel_plane(b, c);
    double v = 1;
    for (std::size_t s = 0; s < scales; ++s) {
      auto [ssim, cs] = detail::ssim_cs(pa, pb, g);
      const double term = std::max(0.0, s + 1 == scales ? ssim : cs);
      v *= std::pow(term, kScaleWeights[s] / wsum);
      if (s + 1 < scales) {
        pa = detail::downsample(pa);
        pb = detail::downsample(pb);
      }
    }
    total += v;
  }
  return std::clamp(total / 3.0, 0.0, 1.0);
}

struct ImageScore {
  double psnr_db = 0;
  double ms_ssim = 0;
};

struct MetricReport {
  double psnr_db = 0;  // mean over images
  double ms_ssim = 0;
  std::vector<ImageScore> per_image;

  void add(const Image& ref, const Image& rec) {
    per_image.push_back({metrics::psnr(ref, rec), metrics::ms_ssim(ref, rec)});
    const double n = static_cast<double>(per_image.size());
    psnr_db += (per_image.back().psnr_db - psnr_db) / n;
    ms_ssim += (per_image.back().ms_ssim - ms_ssim) / n;
  }
};

}  // namespace mulcfsc::metrics
