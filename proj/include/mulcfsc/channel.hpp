#pragma once

// Two-user MIMO multiple-access channel:
//   y = sqrt(b1 P) H1 x1 + sqrt(b2 P) H2 x2 + z,   z ~ CN(0, sigma2) per entry
// plus the single-user orthogonal link used by the OMA scheme.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "mulcfsc/binary_io.hpp"
#include "mulcfsc/complex.hpp"
#include "mulcfsc/random.hpp"

namespace mulcfsc::channel {

class ChannelConfig {
 public:
  ChannelConfig(double power = 1.0, double beta1 = 0.7, double beta2 = 0.3, double sigma2 = 0.25,
                std::size_t n_t = 2, std::size_t n_r = 2)
      : power_(power), beta1_(beta1), beta2_(beta2), sigma2_(sigma2), n_t_(n_t), n_r_(n_r) {
    if (!(power > 0)) throw std::invalid_argument("channel: power must be > 0");
    if (!(sigma2 > 0)) throw std::invalid_argument("channel: sigma2 must be > 0");
    if (n_t < 1 || n_r < 1) throw std::invalid_argument("channel: antenna counts must be >= 1");
    if (std::abs(beta1 + beta2 - 1.0) > 1e-9) {
      throw std::invalid_argument("channel: beta1 + beta2 must equal 1");
    }
    if (!(beta1 > beta2) || beta2 < 0) {
      throw std::invalid_argument("channel: need beta1 > beta2 >= 0 (user 1 is the strong user)");
    }
  }

  // Noiseless variant for identity-channel checks; bypasses the sigma2 > 0
  // invariant deliberately and only through this named constructor.
  static ChannelConfig noiseless(double power, double beta1, double beta2, std::size_t n_t,
                                 std::size_t n_r) {
    ChannelConfig c(power, beta1, beta2, 1.0, n_t, n_r);
    c.sigma2_ = 0.0;
    return c;
  }

  double power() const { return power_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double sigma2() const { return sigma2_; }
  std::size_t n_t() const { return n_t_; }
  std::size_t n_r() const { return n_r_; }

  ChannelConfig with_sigma2(double s2) const {
    return ChannelConfig(power_, beta1_, beta2_, s2, n_t_, n_r_);
  }
  ChannelConfig with_snr_db(double db) const { return with_sigma2(power_ / std::pow(10.0, db / 10.0)); }

 private:
  double power_, beta1_, beta2_, sigma2_;
  std::size_t n_t_, n_r_;
};

// 10 log10(P / sigma2); symbol grids carry unit average power.
inline double snr_db(const ChannelConfig& cfg) { return 10.0 * std::log10(cfg.power() / cfg.sigma2()); }

inline double cbr(std::size_t c_l, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw std::invalid_argument("cbr: image dims must be positive");
  return static_cast<double>(c_l) / static_cast<double>(h * w * 3);
}

// Codeword length closest to `ratio * h * w * 3` among positive multiples of 2 n_t.
inline std::size_t codeword_length(double ratio, std::size_t h, std::size_t w, std::size_t n_t) {
  if (!(ratio > 0)) throw std::invalid_argument("codeword_length: ratio must be > 0");
  const double exact = ratio * static_cast<double>(h * w * 3);
  const double unit = static_cast<double>(2 * n_t);
  auto k = static_cast<std::size_t>(std::llround(exact / unit));
  return std::max<std::size_t>(k, 1) * 2 * n_t;
}

// i.i.d. CN(0, 1) entries (Rayleigh fading).
inline ComplexMatrix sample_csi(Rng& rng, std::size_t n_r, std::size_t n_t) {
  ComplexMatrix h(n_r, n_t);
  const double s = std::sqrt(0.5);
  for (std::size_t i = 0; i < n_r * n_t; ++i) {
    h.re[i] = s * rng.normal();
    h.im[i] = s * rng.normal();
  }
  return h;
}

inline std::vector<ComplexMatrix> sample_csi_pool(Rng& rng, std::size_t count, std::size_t n_r,
                                                  std::size_t n_t) {
  std::vector<ComplexMatrix> pool;
  pool.reserve(count);
  for (std::size_t i = 0; i < count; ++i) pool.push_back(sample_csi(rng, n_r, n_t));
  return pool;
}

inline constexpr std::uint32_t kCsiFileVersion = 1;

// Layout: "MCSI", u32 version, u32 n_r, u32 n_t, u32 count, then per matrix
// row-major entries as little-endian f32 pairs (re, im).
inline void save_csi(const std::string& path, const std::vector<ComplexMatrix>& pool) {
  if (pool.empty()) throw std::invalid_argument("save_csi: empty pool");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_csi: cannot open " + path);
  os.write("MCSI", 4);
  io::put_le(os, kCsiFileVersion);
  io::put_le(os, static_cast<std::uint32_t>(pool[0].rows));
  io::put_le(os, static_cast<std::uint32_t>(pool[0].cols));
  io::put_le(os, static_cast<std::uint32_t>(pool.size()));
  for (const auto& h : pool) {
    if (h.rows != pool[0].rows || h.cols != pool[0].cols) {
      throw std::invalid_argument("save_csi: mixed matrix dims");
    }
    for (std::size_t i = 0; i < h.re.size(); ++i) {
      io::put_f32(os, static_cast<float>(h.re[i]));
      io::put_f32(os, static_cast<float>(h.im[i]));
    }
  }
  if (!os) throw std::runtime_error("save_csi: write failed for " + path);
}

inline std::vector<ComplexMatrix> load_csi(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_csi: cannot open " + path);
  io::expect_magic(is, "MCSI", "CSI");
  auto version = io::get_le<std::uint32_t>(is, "version");
  if (version != kCsiFileVersion) {
    throw io::FormatError("load_csi: unsupported version " + std::to_string(version));
  }
  auto n_r = io::get_le<std::uint32_t>(is, "n_r");
  auto n_t = io::get_le<std::uint32_t>(is, "n_t");
  auto count = io::get_le<std::uint32_t>(is, "count");
  if (n_r == 0 || n_t == 0 || count == 0) throw io::FormatError("load_csi: zero dimension");
  std::vector<ComplexMatrix> pool;
  pool.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    ComplexMatrix h(n_r, n_t);
    for (std::size_t i = 0; i < h.re.size(); ++i) {
      h.re[i] = io::get_f32(is, "csi entry");
      h.im[i] = io::get_f32(is, "csi entry");
    }
    pool.push_back(std::move(h));
  }
  return pool;
}

// Power-normalized complex symbols for one batch of codewords.
template <class T>
struct SymbolGrid {
  ComplexTensor<T> grid;  // [B, n_t, C_L / (2 n_t)]
  Tensor<T> scale;        // [B, 1]: factor applied to each codeword

  std::size_t width() const { return grid.re.dim(2); }
};

// Pairs consecutive reals into (re, im), scales each codeword to unit average
// symbol power and lays the symbols out row-major over n_t antennas.
template <class T>
SymbolGrid<T> to_symbols(const Tensor<T>& codeword, std::size_t n_t) {
  if (codeword.rank() != 2) throw ShapeError("to_symbols: expected [B, C_L] codewords");
  const std::size_t batch = codeword.dim(0), c_l = codeword.dim(1);
  if (n_t == 0 || c_l % (2 * n_t) != 0) {
    throw ShapeError("to_symbols: C_L = " + std::to_string(c_l) + " not divisible by 2*n_t = " +
                     std::to_string(2 * n_t));
  }
  auto energy = ops::sum_axis(ops::square(codeword), 1);
  for (T e : energy.data()) {
    if (!(e > T(0))) throw NumericError("to_symbols: cannot normalize a zero-power codeword");
  }
  const std::size_t n_sym = c_l / 2;
  auto scale = ops::div(Tensor<T>::scalar(static_cast<T>(std::sqrt(static_cast<double>(n_sym)))),
                        ops::sqrt(energy));
  auto xn = ops::mul(codeword, scale);
  const std::size_t width = n_sym / n_t;
  std::vector<std::size_t> ire(batch * n_sym), iim(batch * n_sym);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < n_sym; ++s) {
      ire[b * n_sym + s] = b * c_l + 2 * s;
      iim[b * n_sym + s] = b * c_l + 2 * s + 1;
    }
  Shape gs{batch, n_t, width};
  return {{ops::take(xn, std::move(ire), gs), ops::take(xn, std::move(iim), gs)}, scale};
}

// Inverse of to_symbols, undoing the stored normalization.
template <class T>
Tensor<T> from_symbols(const SymbolGrid<T>& g) {
  return ops::div(cops::interleave(g.grid), g.scale);
}

template <class T>
ComplexTensor<T> sample_noise(Rng& rng, Shape shape, double sigma2) {
  const double s = std::sqrt(sigma2 / 2.0);
  std::vector<T> re(shape_numel(shape)), im(shape_numel(shape));
  for (std::size_t i = 0; i < re.size(); ++i) {
    re[i] = static_cast<T>(s * rng.normal());
    im[i] = static_cast<T>(s * rng.normal());
  }
  return {Tensor<T>(shape, std::move(re)), Tensor<T>(shape, std::move(im))};
}

namespace detail {
template <class T>
void check_link(const ComplexTensor<T>& x, const ComplexTensor<T>& h, const ChannelConfig& cfg,
                const char* op) {
  x.check();
  h.check();
  if (x.re.rank() != 3 || h.re.rank() != 3) throw ShapeError(std::string(op) + ": expected rank-3 grids");
  if (h.re.dim(1) != cfg.n_r() || h.re.dim(2) != cfg.n_t()) {
    throw ShapeError(std::string(op) + ": CSI " + shape_str(h.shape()) + " does not match n_r x n_t");
  }
  if (x.re.dim(1) != cfg.n_t() || x.re.dim(0) != h.re.dim(0)) {
    throw ShapeError(std::string(op) + ": symbol grid " + shape_str(x.shape()) +
                     " does not match CSI " + shape_str(h.shape()));
  }
}

template <class T>
void check_noise(const ComplexTensor<T>& z, const Shape& expect, const char* op) {
  if (z.re.shape() != expect || z.im.shape() != expect) {
    throw ShapeError(std::string(op) + ": noise " + shape_str(z.re.shape()) + " expected " +
                     shape_str(expect));
  }
}
}  // namespace detail

template <class T>
ComplexTensor<T> mac_transmit(const ComplexTensor<T>& x1, const ComplexTensor<T>& x2,
                              const ComplexTensor<T>& h1, const ComplexTensor<T>& h2,
                              const ChannelConfig& cfg, const ComplexTensor<T>& noise) {
  detail::check_link(x1, h1, cfg, "mac_transmit");
  detail::check_link(x2, h2, cfg, "mac_transmit");
  if (x1.shape() != x2.shape()) throw ShapeError("mac_transmit: users' grids differ in shape");
  const Shape ys{x1.re.dim(0), cfg.n_r(), x1.re.dim(2)};
  detail::check_noise(noise, ys, "mac_transmit");
  auto a1 = static_cast<T>(std::sqrt(cfg.beta1() * cfg.power()));
  auto a2 = static_cast<T>(std::sqrt(cfg.beta2() * cfg.power()));
  auto s1 = cops::scale(cops::matmul(h1, x1), a1);
  auto s2 = cops::scale(cops::matmul(h2, x2), a2);
  return cops::add(cops::add(s1, s2), noise);
}

template <class T>
ComplexTensor<T> mac_transmit(const ComplexTensor<T>& x1, const ComplexTensor<T>& x2,
                              const ComplexTensor<T>& h1, const ComplexTensor<T>& h2,
                              const ChannelConfig& cfg, Rng& rng) {
  auto z = sample_noise<T>(rng, {x1.re.dim(0), cfg.n_r(), x1.re.dim(2)}, cfg.sigma2());
  return mac_transmit(x1, x2, h1, h2, cfg, z);
}

// One of two orthogonal links with an equal power split: y = sqrt(P/2) H x + z.
template <class T>
ComplexTensor<T> oma_transmit(const ComplexTensor<T>& x, const ComplexTensor<T>& h,
                              const ChannelConfig& cfg, const ComplexTensor<T>& noise) {
  detail::check_link(x, h, cfg, "oma_transmit");
  detail::check_noise(noise, {x.re.dim(0), cfg.n_r(), x.re.dim(2)}, "oma_transmit");
  auto a = static_cast<T>(std::sqrt(cfg.power() / 2.0));
  return cops::add(cops::scale(cops::matmul(h, x), a), noise);
}

template <class T>
ComplexTensor<T> oma_transmit(const ComplexTensor<T>& x, const ComplexTensor<T>& h,
                              const ChannelConfig& cfg, Rng& rng) {
  auto z = sample_noise<T>(rng, {x.re.dim(0), cfg.n_r(), x.re.dim(2)}, cfg.sigma2());
  return oma_transmit(x, h, cfg, z);
}

namespace detail {
// Solves A X = B for small dense complex systems by Gauss-Jordan elimination
// with partial pivoting.  A is n x n, B is n x m, both row-major.
inline void complex_solve(std::vector<std::complex<double>>& a, std::vector<std::complex<double>>& b,
                          std::size_t n, std::size_t m) {
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    if (!(std::abs(a[piv * n + c]) > 1e-300)) throw NumericError("lmmse: singular covariance");
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
      for (std::size_t k = 0; k < m; ++k) std::swap(b[c * m + k], b[piv * m + k]);
    }
    const auto inv = 1.0 / a[c * n + c];
    for (std::size_t k = 0; k < n; ++k) a[c * n + k] *= inv;
    for (std::size_t k = 0; k < m; ++k) b[c * m + k] *= inv;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const auto f = a[r * n + c];
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
      for (std::size_t k = 0; k < m; ++k) b[r * m + k] -= f * b[c * m + k];
    }
  }
}
}  // namespace detail

template <class T>
struct Interferer {
  const ComplexTensor<T>* h;
  double amplitude;
};

// Batched LMMSE filter W = a H^H (a^2 H H^H + sum a_k^2 G_k G_k^H + sigma2 I)^-1
// for y = a H x + sum a_k G_k x_k + z with unit-power streams.  Returns
// [B, n_t, n_r]; built from CSI values, so it is a constant on the tape.
template <class T>
ComplexTensor<T> lmmse_filter(const ComplexTensor<T>& h, double a, double sigma2,
                              const std::vector<Interferer<T>>& others = {}) {
  h.check();
  if (h.re.rank() != 3) throw ShapeError("lmmse_filter: expected [B, n_r, n_t] CSI");
  const std::size_t b = h.re.dim(0), nr = h.re.dim(1), nt = h.re.dim(2);
  for (const auto& o : others) {
    if (o.h->re.rank() != 3 || o.h->re.dim(0) != b || o.h->re.dim(1) != nr) {
      throw ShapeError("lmmse_filter: interferer CSI " + shape_str(o.h->shape()) + " does not match " +
                       shape_str(h.shape()));
    }
  }
  using C = std::complex<double>;
  auto at = [](const ComplexTensor<T>& m, std::size_t i, std::size_t r, std::size_t c) {
    const std::size_t cols = m.re.dim(2), k = (i * m.re.dim(1) + r) * cols + c;
    return C(m.re.data()[k], m.im.data()[k]);
  };
  auto gram = [&](std::vector<C>& r, const ComplexTensor<T>& m, std::size_t i, double amp) {
    const std::size_t cols = m.re.dim(2);
    for (std::size_t p = 0; p < nr; ++p)
      for (std::size_t q = 0; q < nr; ++q)
        for (std::size_t k = 0; k < cols; ++k) r[p * nr + q] += amp * amp * at(m, i, p, k) * std::conj(at(m, i, q, k));
  };
  std::vector<T> wre(b * nt * nr), wim(b * nt * nr);
  std::vector<C> r(nr * nr), x(nr * nt);
  for (std::size_t i = 0; i < b; ++i) {
    std::fill(r.begin(), r.end(), C(0));
    for (std::size_t p = 0; p < nr; ++p) r[p * nr + p] = sigma2;
    gram(r, h, i, a);
    for (const auto& o : others) gram(r, *o.h, i, o.amplitude);
    // R is Hermitian, so W^H = R^-1 (a H): solve R X = a H and take X^H.
    for (std::size_t p = 0; p < nr; ++p)
      for (std::size_t k = 0; k < nt; ++k) x[p * nt + k] = a * at(h, i, p, k);
    detail::complex_solve(r, x, nr, nt);
    for (std::size_t k = 0; k < nt; ++k)
      for (std::size_t p = 0; p < nr; ++p) {
        const C w = std::conj(x[p * nt + k]);
        wre[(i * nt + k) * nr + p] = static_cast<T>(w.real());
        wim[(i * nt + k) * nr + p] = static_cast<T>(w.imag());
      }
  }
  Shape s{b, nt, nr};
  return {Tensor<T>(s, std::move(wre)), Tensor<T>(s, std::move(wim))};
}

// Symbol estimate [B, n_t, W] from a received grid [B, n_r, W].
template <class T>
ComplexTensor<T> lmmse(const ComplexTensor<T>& y, const ComplexTensor<T>& h, double a, double sigma2,
                       const std::vector<Interferer<T>>& others = {}) {
  y.check();
  if (y.re.rank() != 3 || y.re.dim(0) != h.re.dim(0) || y.re.dim(1) != h.re.dim(1)) {
    throw ShapeError("lmmse: received grid " + shape_str(y.shape()) + " does not match CSI " +
                     shape_str(h.shape()));
  }
  return cops::matmul(lmmse_filter(h, a, sigma2, others), y);
}

}  // namespace mulcfsc::channel
