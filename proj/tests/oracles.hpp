#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.  Nothing here calls the library's math.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

struct DiagGaussian {
  std::vector<double> mu, logvar;  // one row
};

inline double log_density(const DiagGaussian& g, const std::vector<double>& z) {
  constexpr double log2pi = 1.8378770664093453;
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - g.mu[i];
    s += -0.5 * (log2pi + g.logvar[i] + d * d / std::exp(g.logvar[i]));
  }
  return s;
}

// Monte Carlo KL(q || p) = E_q[log q(z) - log p(z)].
inline double kl_monte_carlo(const DiagGaussian& q, const DiagGaussian& p, std::size_t samples,
                             std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n01;
  std::vector<double> z(q.mu.size());
  double acc = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = q.mu[i] + std::exp(0.5 * q.logvar[i]) * n01(gen);
    acc += log_density(q, z) - log_density(p, z);
  }
  return acc / static_cast<double>(samples);
}

// Images are [H][W][3] row-major in [0, 1].
struct Image {
  std::size_t h = 0, w = 0;
  std::vector<double> px;
  double at(std::size_t y, std::size_t x, std::size_t c) const { return px[(y * w + x) * 3 + c]; }
};

// PSNR by explicit per-pixel accumulation, peak 1, capped like the library.
inline double psnr(const Image& a, const Image& b, double cap = 100.0) {
  long double se = 0;
  for (std::size_t y = 0; y < a.h; ++y)
    for (std::size_t x = 0; x < a.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const long double d = static_cast<long double>(a.at(y, x, c)) - b.at(y, x, c);
        se += d * d;
      }
  const long double mse = se / static_cast<long double>(a.h * a.w * 3);
  if (mse == 0) return cap;
  return std::min(cap, static_cast<double>(10.0L * std::log10(1.0L / mse)));
}

// Scalar MS-SSIM: 11x11 Gaussian window (sigma 1.5) applied as a full 2-D
// kernel at every valid position, per channel, averaged over channels.  Uses
// as many scales (up to five) as keep the side >= 11, with the standard
// exponents renormalized over the scales used and 2x2 average pooling
// between scales.
inline std::vector<double> window(std::size_t n, double sigma) {
  std::vector<double> g(n);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - (static_cast<double>(n) - 1) / 2;
    s += g[i] = std::exp(-d * d / (2 * sigma * sigma));
  }
  for (auto& v : g) v /= s;
  return g;
}

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
  double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

inline Plane channel(const Image& im, std::size_t c) {
  Plane p{im.h, im.w, std::vector<double>(im.h * im.w)};
  for (std::size_t y = 0; y < im.h; ++y)
    for (std::size_t x = 0; x < im.w; ++x) p.v[y * im.w + x] = im.at(y, x, c);
  return p;
}

inline Plane pool(const Plane& p) {
  Plane q{p.h / 2, p.w / 2, std::vector<double>((p.h / 2) * (p.w / 2))};
  for (std::size_t y = 0; y < q.h; ++y)
    for (std::size_t x = 0; x < q.w; ++x)
      q.v[y * q.w + x] =
          0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
  return q;
}

struct SsimParts {
  double ssim = 0, cs = 0;
};

inline SsimParts ssim_plane(const Plane& a, const Plane& b) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  constexpr std::size_t n = 11;
  const auto g = window(n, 1.5);
  double ssim = 0, cs = 0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + n <= a.h; ++y0)
    for (std::size_t x0 = 0; x0 + n <= a.w; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double k = g[i] * g[j], va = a.at(y0 + i, x0 + j), vb = b.at(y0 + i, x0 + j);
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      const double c = (2 * cov + c2) / (va + vb + c2);
      const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
      ssim += l * c;
      cs += c;
      ++count;
    }
  return {ssim / static_cast<double>(count), cs / static_cast<double>(count)};
}

inline double ms_ssim(const Image& a, const Image& b) {
  static const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int scales = 0;
  while (scales < 5 && std::min(a.h, a.w) >= (std::size_t{11} << scales)) ++scales;
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += weights[s];
  double total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    Plane pa = channel(a, c), pb = channel(b, c);
    double prod = 1;
    for (int s = 0; s < scales; ++s) {
      const auto parts = ssim_plane(pa, pb);
      const double term = s + 1 == scales ? parts.ssim : parts.cs;
      prod *= std::pow(std::max(term, 0.0), weights[s] / wsum);
      if (s + 1 < scales) {
        pa = pool(pa);
        pb = pool(pb);
      }
    }
    total += prod;
  }
  return std::clamp(total / 3, 0.0, 1.0);
}

}  // namespace oracle
