#pragma once

// Optimization loop, checkpoints and the single-user overfit probe.
//
// Randomness: every trainer derives four independent streams from its seed
// (Rng::stream(seed, id)):
//   1 data     image indices of both users
//   2 channel  per-step SNR and CSI pool indices
//   3 noise    channel noise
//   4 latent   CMRG reparametrization noise

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mulcfsc/binary_io.hpp"
#include "mulcfsc/image.hpp"
#include "mulcfsc/losses.hpp"
#include "mulcfsc/metrics.hpp"
#include "mulcfsc/schemes.hpp"

namespace mulcfsc::training {

struct TrainConfig {
  double lambda = 0.3;
  double lr = 1e-4;
  std::size_t batch = 8;
  std::size_t steps = 20000;
  double snr_min_db = 0.0;
  double snr_max_db = 14.0;
  std::size_t snapshot_refresh = 500;
  bool augment = true;  // random flips / quarter turns of training images
  std::uint64_t seed = 0;

  void validate() const {
    if (lambda < 0) throw std::invalid_argument("train.lambda must be >= 0");
    if (!(lr > 0)) throw std::invalid_argument("train.lr must be > 0");
    if (batch == 0) throw std::invalid_argument("train.batch must be > 0");
    if (snr_min_db > snr_max_db) throw std::invalid_argument("train.snr_min_db must be <= train.snr_max_db");
    if (snapshot_refresh == 0) throw std::invalid_argument("train.snapshot_refresh must be > 0");
  }
};

struct LossRecord {
  std::size_t step = 0;
  double l1 = 0, lc = 0, l_rec = 0, l_reg = 0, l2 = 0;
  double snr_db = 0;
  double m1 = 0, m2 = 0;  // batch means of the decoder ratios
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
class Adam {
 public:
  Adam(const ParamSet<T>& ps, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(ps.tensors()), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const T a = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    const T e = static_cast<T>(eps_ * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto g = params_[i].grad();
      if (g.empty()) continue;
      auto w = params_[i].mutable_data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        w[j] -= a * m[j] / (std::sqrt(v[j]) + e);
      }
    }
  }

  std::uint64_t t() const { return t_; }
  void set_t(std::uint64_t t) { t_ = t; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor<T>> params_;
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Checkpoint file
//
//   "MLCK"  u32 version  u8 dtype (4 = f32, 8 = f64)
//   string scheme  u64 step  u64 config_hash  string rng_state
//   u32 count, then per array: string name, u32 rank, u32 dims[rank],
//   little-endian values of the stored dtype
//
// Arrays: "param/<name>", "frozen/<name>", "adam.m/<name>", "adam.v/<name>".

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;  // exact for both stored dtypes
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint8_t dtype = 4;
  std::string scheme;
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;
  std::string rng_state;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  if (c.dtype != 4 && c.dtype != 8) throw std::invalid_argument("checkpoint: dtype must be 4 or 8");
  os.write("MLCK", 4);
  io::put_le(os, c.version);
  io::put_le(os, c.dtype);
  io::put_string(os, c.scheme);
  io::put_le(os, c.step);
  io::put_le(os, c.config_hash);
  io::put_string(os, c.rng_state);
  io::put_le(os, static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    io::put_string(os, a.name);
    io::put_le(os, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) io::put_le(os, static_cast<std::uint32_t>(d));
    for (double v : a.values) {
      if (c.dtype == 4) io::put_f32(os, static_cast<float>(v));
      else io::put_f64(os, v);
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  Checkpoint c;
  io::expect_magic(is, "MLCK", "checkpoint");
  c.version = io::get_le<std::uint32_t>(is, "version");
  if (c.version != kCheckpointVersion) {
    throw io::FormatError("checkpoint: unsupported format version " + std::to_string(c.version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  c.dtype = io::get_le<std::uint8_t>(is, "dtype");
  if (c.dtype != 4 && c.dtype != 8) throw io::FormatError("checkpoint: bad dtype tag");
  c.scheme = io::get_string(is, "scheme", 64);
  c.step = io::get_le<std::uint64_t>(is, "step");
  c.config_hash = io::get_le<std::uint64_t>(is, "config hash");
  c.rng_state = io::get_string(is, "rng state");
  const auto count = io::get_le<std::uint32_t>(is, "array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = io::get_string(is, "array name", 256);
    const auto rank = io::get_le<std::uint32_t>(is, "rank");
    if (rank > 8) throw io::FormatError("checkpoint: implausible rank for " + a.name);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(io::get_le<std::uint32_t>(is, "dim"));
    const auto n = shape_numel(a.shape);
    if (n > (std::size_t{1} << 28)) throw io::FormatError("checkpoint: implausible size for " + a.name);
    a.values.resize(n);
    for (auto& v : a.values) v = c.dtype == 4 ? io::get_f32(is, a.name.c_str()) : io::get_f64(is, a.name.c_str());
    c.arrays.push_back(std::move(a));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw io::FormatError("checkpoint: trailing bytes");
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
    write_checkpoint(os, c);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("save_checkpoint: cannot move " + tmp + " to " + path);
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  try {
    return read_checkpoint(is);
  } catch (const io::FormatError& e) {
    throw io::FormatError(path + ": " + e.what());
  }
}

template <class T>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return sizeof(T);
}

// ---------------------------------------------------------------------------

// Source pixel of output (y, x) under dihedral transform `tf` of a square
// image (bit 0: transpose, bit 1: flip rows, bit 2: flip columns).
inline std::pair<std::size_t, std::size_t> dihedral_source(std::size_t side, unsigned tf, std::size_t y,
                                                           std::size_t x) {
  std::size_t sy = (tf & 1) ? x : y, sx = (tf & 1) ? y : x;
  if (tf & 2) sy = side - 1 - sy;
  if (tf & 4) sx = side - 1 - sx;
  return {sy, sx};
}

template <class T>
class Trainer {
 public:
  Trainer(schemes::Model<T>& model, TrainConfig cfg, channel::ChannelConfig channel,
          const std::vector<Image>& images, std::vector<ComplexMatrix> csi1,
          std::vector<ComplexMatrix> csi2, std::uint64_t config_hash = 0)
      : model_(model),
        cfg_(cfg),
        channel_(channel),
        csi1_(std::move(csi1)),
        csi2_(std::move(csi2)),
        config_hash_(config_hash),
        adam_(model.params(), cfg.lr),
        data_rng_(Rng::stream(cfg.seed, 1)),
        chan_rng_(Rng::stream(cfg.seed, 2)),
        noise_rng_(Rng::stream(cfg.seed, 3)),
        latent_rng_(Rng::stream(cfg.seed, 4)) {
    cfg.validate();
    if (images.empty()) throw std::invalid_argument("trainer: empty training set");
    if (csi1_.empty() || csi2_.empty()) throw std::invalid_argument("trainer: empty CSI pool");
    const auto side = model.config().codec.image_size;
    pixels_ = side * side * 3;
    for (const auto& im : images) {
      if (im.height != side || im.width != side) {
        throw ShapeError("trainer: training image is " + std::to_string(im.height) + "x" +
                         std::to_string(im.width) + ", model expects " + std::to_string(side));
      }
      for (double v : im.data) data_.push_back(static_cast<T>(v));
    }
    count_ = images.size();
  }

  std::size_t steps_done() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  schemes::Model<T>& model() { return model_; }

  LossRecord step() {
    const std::size_t b = cfg_.batch;
    std::vector<std::size_t> i1(b), i2(b), c1(b), c2(b);
    std::vector<unsigned> t1(b, 0), t2(b, 0);
    for (std::size_t i = 0; i < b; ++i) {
      i1[i] = data_rng_.below(count_);
      i2[i] = data_rng_.below(count_);
      if (cfg_.augment) {
        t1[i] = static_cast<unsigned>(data_rng_.below(8));
        t2[i] = static_cast<unsigned>(data_rng_.below(8));
      }
    }
    const double snr = chan_rng_.uniform(cfg_.snr_min_db, cfg_.snr_max_db);
    for (std::size_t i = 0; i < b; ++i) {
      c1[i] = chan_rng_.below(csi1_.size());
      c2[i] = chan_rng_.below(csi2_.size());
    }
    schemes::Batch<T> batch{gather(i1, t1), gather(i2, t2), pick(csi1_, c1), pick(csi2_, c2)};
    Tensor<T> eps;
    if (model_.has_cmrg()) eps = gaussian_sample<T>(latent_rng_, {b, model_.latent_dim()});
    const auto ch = channel_.with_snr_db(snr);

    LossRecord rec;
    rec.step = step_ + 1;
    rec.snr_db = snr;
    Tape<T> tape;
    try {
      Recording<T> on(tape);
      auto f = model_.forward(batch, ch, noise_rng_, eps);
      auto l1 = loss_l1(batch.s1, f.s1_hat, batch.s2, f.s2_hat);
      Tensor<T> lsic;
      if (f.l_rec.defined()) lsic = loss_lsic(f.l_rec, f.l_reg);
      auto l2 = loss_total(l1, f.lc, lsic, static_cast<T>(cfg_.lambda));
      rec.l1 = l1.item();
      rec.lc = f.lc.defined() ? f.lc.item() : 0.0;
      rec.l_rec = f.l_rec.defined() ? f.l_rec.item() : 0.0;
      rec.l_reg = f.l_reg.defined() ? f.l_reg.item() : 0.0;
      rec.l2 = l2.item();
      rec.m1 = f.m1.defined() ? mean_of(f.m1) : 0.0;
      rec.m2 = f.m2.defined() ? mean_of(f.m2) : 0.0;
      if (!std::isfinite(rec.l2)) throw NumericError("loss is not finite");
      tape.backward(l2);
      for (const auto& e : model_.params().entries())
        for (T g : e.tensor.grad())
          if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + e.name);
    } catch (const NumericError& e) {
      throw TrainingError(dump(rec, e.what()));
    }
    adam_.step();
    model_.params().zero_grad();
    ++step_;
    if (step_ % cfg_.snapshot_refresh == 0) model_.refresh_snapshot();
    return rec;
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.dtype = dtype_tag<T>();
    c.scheme = schemes::scheme_name(model_.kind());
    c.step = step_;
    c.config_hash = config_hash_;
    c.rng_state = data_rng_.state() + '\n' + chan_rng_.state() + '\n' + noise_rng_.state() + '\n' +
                  latent_rng_.state();
    const auto& ps = model_.params().entries();
    for (const auto& e : ps) c.arrays.push_back(array("param/" + e.name, e.tensor.shape(), e.tensor.data()));
    for (const auto& e : model_.frozen_params().entries())
      c.arrays.push_back(array(e.name, e.tensor.shape(), e.tensor.data()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      c.arrays.push_back(array("adam.m/" + ps[i].name, ps[i].tensor.shape(), adam_.first_moments()[i]));
      c.arrays.push_back(array("adam.v/" + ps[i].name, ps[i].tensor.shape(), adam_.second_moments()[i]));
    }
    return c;
  }

  // Validates the whole checkpoint against this trainer before changing any
  // state, so a mismatched file leaves the trainer untouched.
  void restore(const Checkpoint& c) {
    if (c.dtype != dtype_tag<T>()) throw io::FormatError("checkpoint: precision differs from trainer");
    if (c.scheme != schemes::scheme_name(model_.kind())) {
      throw io::FormatError("checkpoint: holds scheme '" + c.scheme + "', trainer runs '" +
                            schemes::scheme_name(model_.kind()) + "'");
    }
    if (config_hash_ && c.config_hash && c.config_hash != config_hash_) {
      throw io::FormatError("checkpoint: config hash differs from current configuration");
    }
    std::vector<std::string> states;
    std::istringstream ss(c.rng_state);
    for (std::string line; std::getline(ss, line);) states.push_back(line);
    if (states.size() != 4) throw io::FormatError("checkpoint: rng state must hold 4 streams");
    Rng probe;
    for (const auto& s : states) probe.set_state(s);

    struct Target {
      const NamedArray* src;
      std::span<T> dst;
    };
    std::vector<Target> targets;
    auto expect = [&](const std::string& name, const Shape& shape, std::span<T> dst) {
      const auto* a = c.find(name);
      if (!a) throw io::FormatError("checkpoint: missing array " + name);
      if (a->shape != shape) {
        throw io::FormatError("checkpoint: " + name + " has shape " + shape_str(a->shape) + ", expected " +
                              shape_str(shape));
      }
      targets.push_back({a, dst});
    };
    auto& ps = model_.params().entries();
    auto writable = [](Tensor<T> t) { return t.mutable_data(); };
    for (auto& e : ps) expect("param/" + e.name, e.tensor.shape(), writable(e.tensor));
    for (auto& e : model_.frozen_params().entries()) expect(e.name, e.tensor.shape(), writable(e.tensor));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      expect("adam.m/" + ps[i].name, ps[i].tensor.shape(), adam_.first_moments()[i]);
      expect("adam.v/" + ps[i].name, ps[i].tensor.shape(), adam_.second_moments()[i]);
    }
    if (targets.size() != c.arrays.size()) throw io::FormatError("checkpoint: unexpected extra arrays");

    for (auto& t : targets)
      for (std::size_t j = 0; j < t.dst.size(); ++j) t.dst[j] = static_cast<T>(t.src->values[j]);
    data_rng_.set_state(states[0]);
    chan_rng_.set_state(states[1]);
    noise_rng_.set_state(states[2]);
    latent_rng_.set_state(states[3]);
    step_ = c.step;
    adam_.set_t(c.step);
    model_.params().zero_grad();
  }

  void save(const std::string& path) const { save_checkpoint(path, checkpoint()); }
  void load(const std::string& path) { restore(load_checkpoint(path)); }

 private:
  // Images idx[i] under dihedral transform tf[i].
  Tensor<T> gather(const std::vector<std::size_t>& idx, const std::vector<unsigned>& tf) const {
    const auto side = model_.config().codec.image_size;
    std::vector<T> v(idx.size() * pixels_);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const T* src = data_.data() + idx[n] * pixels_;
      T* dst = v.data() + n * pixels_;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const auto [sy, sx] = dihedral_source(side, tf[n], y, x);
          for (std::size_t c = 0; c < 3; ++c) dst[(y * side + x) * 3 + c] = src[(sy * side + sx) * 3 + c];
        }
    }
    return Tensor<T>({idx.size(), side, side, 3}, std::move(v));
  }

  static ComplexTensor<T> pick(const std::vector<ComplexMatrix>& pool, const std::vector<std::size_t>& idx) {
    std::vector<ComplexMatrix> ms;
    for (auto i : idx) ms.push_back(pool[i]);
    return stack<T>(ms);
  }

  static double mean_of(const Tensor<T>& t) {
    double s = 0;
    for (T v : t.data()) s += v;
    return s / static_cast<double>(t.numel());
  }

  template <class R>
  static NamedArray array(std::string name, const Shape& shape, const R& values) {
    return {std::move(name), shape, std::vector<double>(values.begin(), values.end())};
  }

  std::string dump(const LossRecord& rec, const std::string& what) const {
    std::ostringstream os;
    os << "training aborted at step " << rec.step << " (" << what << "); snr_db=" << rec.snr_db
       << " l1=" << rec.l1 << " lc=" << rec.lc << " l_rec=" << rec.l_rec << " l_reg=" << rec.l_reg
       << "; parameter max-abs:";
    for (const auto& e : model_.params().entries()) {
      double mx = 0;
      for (T v : e.tensor.data()) mx = std::max(mx, std::abs(static_cast<double>(v)));
      os << ' ' << e.name << '=' << mx;
    }
    return os.str();
  }

  schemes::Model<T>& model_;
  TrainConfig cfg_;
  channel::ChannelConfig channel_;
  std::vector<ComplexMatrix> csi1_, csi2_;
  std::uint64_t config_hash_;
  Adam<T> adam_;
  Rng data_rng_, chan_rng_, noise_rng_, latent_rng_;
  std::vector<T> data_;
  std::size_t pixels_ = 0, count_ = 0;
  std::size_t step_ = 0;
};

// Model weights (live and frozen) from a checkpoint, optimizer state ignored.
// Everything is checked before any value is written.
template <class T>
void load_weights(schemes::Model<T>& model, const Checkpoint& c, std::uint64_t config_hash = 0) {
  if (c.dtype != dtype_tag<T>()) throw io::FormatError("checkpoint: precision differs from model");
  if (c.scheme != schemes::scheme_name(model.kind())) {
    throw io::FormatError("checkpoint: holds scheme '" + c.scheme + "', model is '" +
                          schemes::scheme_name(model.kind()) + "'");
  }
  if (config_hash && c.config_hash != config_hash) {
    throw io::FormatError("checkpoint: config hash differs from current configuration");
  }
  std::vector<std::pair<const NamedArray*, Tensor<T>>> targets;
  auto expect = [&](const std::string& name, const Tensor<T>& t) {
    const auto* a = c.find(name);
    if (!a) throw io::FormatError("checkpoint: missing array " + name);
    if (a->shape != t.shape()) {
      throw io::FormatError("checkpoint: " + name + " has shape " + shape_str(a->shape) + ", expected " +
                            shape_str(t.shape()));
    }
    targets.emplace_back(a, t);
  };
  for (const auto& e : model.params().entries()) expect("param/" + e.name, e.tensor);
  for (const auto& e : model.frozen_params().entries()) expect(e.name, e.tensor);
  for (auto& [src, t] : targets) {
    auto dst = t.mutable_data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src->values[j]);
  }
}

// ---------------------------------------------------------------------------
// Single-user overfit probe: one encoder/decoder pair over an identity channel
// with no noise and unit power, y = x.  Returns the PSNR after each step.

template <class T>
std::vector<double> overfit_single_user(const Image& image, const codec::CodecConfig& cfg, std::size_t steps,
                                        double lr, std::uint64_t seed, double stop_at_db = 0.0) {
  auto rng = Rng::stream(seed, 0x0f17);
  codec::Encoder<T> enc(cfg, rng);
  codec::Decoder<T> dec(cfg, rng);
  ParamSet<T> ps;
  ps.extend("enc/", enc.params());
  ps.extend("dec/", dec.params());
  Adam<T> adam(ps, lr);
  auto s = to_tensor<T>({&image});
  ComplexMatrix eye = ComplexMatrix::identity(cfg.n_t);
  if (cfg.n_r != cfg.n_t) throw std::invalid_argument("overfit: identity channel needs n_r == n_t");
  auto h = stack<T>({eye});
  auto m = Tensor<T>::full({1}, T(0.2));
  std::vector<double> trace;
  for (std::size_t k = 0; k < steps; ++k) {
    Tape<T> tape;
    Recording<T> on(tape);
    auto x = channel::to_symbols(enc.encode(s, h, T(0.15)).codeword, cfg.n_t);
    auto s_hat = dec.decode(x.grid, h, m);
    auto loss = ops::mean(ops::square(ops::sub(s_hat, s)));
    trace.push_back(metrics::psnr_from_mse(static_cast<double>(loss.item())));
    tape.backward(loss);
    adam.step();
    ps.zero_grad();
    if (stop_at_db > 0 && trace.back() >= stop_at_db) break;
  }
  return trace;
}

}  // namespace mulcfsc::training
