#pragma once

// Experiment configuration: flat `section.key = value` text, `#` comments.
// Every key has a default; unknown keys, malformed values and violated
// invariants are errors that name the key and line.  serialize() writes every
// key in a fixed order, so parse(serialize(c)) reproduces c.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mulcfsc/channel.hpp"
#include "mulcfsc/schemes.hpp"
#include "mulcfsc/training.hpp"

namespace mulcfsc::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& modes() {
  static const std::vector<std::string> m{"train", "sweep-snr", "sweep-cbr", "eval",
                                          "baseline-joint", "oma", "ablation-lcfsc"};
  return m;
}

struct ExperimentConfig {
  std::string mode = "train";
  std::string scheme = "mu-lcfsc";
  std::vector<std::string> schemes{"mu-lcfsc", "oma", "joint"};
  std::vector<std::uint64_t> seeds{1};
  std::string precision = "f32";
  std::string out = "runs/default";
  std::string checkpoint_dir;  // empty: <out>/checkpoints

  // data
  std::string data_path;  // empty: synthetic
  std::size_t synth_count = 200;
  std::uint64_t synth_seed = 7;
  std::size_t image_size = 32;
  std::size_t train_count = 160;

  // channel
  double power = 1.0;
  double beta1 = 0.7;
  double beta2 = 0.3;
  std::size_t n_t = 2;
  std::size_t n_r = 2;
  std::uint64_t csi_seed = 2024;
  std::size_t csi_train = 1000;
  std::size_t csi_test = 100;

  // codec
  double cbr = 0.06;
  std::size_t patch = 4;
  std::size_t width = 16;
  std::size_t blocks = 2;
  std::size_t ffn = 32;
  std::size_t csi_hidden = 32;
  std::size_t cvae_latent = 8;
  std::size_t cvae_hidden = 32;
  double tau = 0.1;
  double rank_smoothing = 0.05;
  double m_t1 = 0.15;
  double m_t2 = 0.15;

  // cmrg
  std::size_t grid_k = 4;
  double grid_lo = 0.0;
  double grid_hi = 0.4;
  std::size_t cmrg_hidden = 64;
  std::size_t cmrg_latent = 8;

  bool channel_free_cancel = false;
  bool tie_users = false;

  training::TrainConfig train;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 1000;

  // evaluation and sweeps
  double eval_snr_db = 6.0;
  std::size_t eval_csi_per_pair = 5;
  std::size_t eval_batch = 25;
  std::vector<double> sweep_snr_db{0, 2, 4, 6, 8, 10, 12, 14};
  std::vector<double> sweep_cbr{0.02, 0.04, 0.06, 0.08, 0.10};
  double sweep_fixed_cbr = 0.06;
  double sweep_fixed_snr_db = 6.0;
  bool sweep_train_missing = true;
  std::size_t sweep_threads = 0;  // 0: hardware concurrency

  double emit_snr_db = 12.0;
  double emit_cbr = 0.10;
  std::size_t emit_count = 8;

  std::string checkpoint_root() const {
    return checkpoint_dir.empty() ? (std::filesystem::path(out) / "checkpoints").string() : checkpoint_dir;
  }

  channel::ChannelConfig channel() const {
    return channel::ChannelConfig(power, beta1, beta2, 1.0, n_t, n_r);
  }

  schemes::ModelConfig model(double ratio) const {
    schemes::ModelConfig m;
    m.codec.image_size = image_size;
    m.codec.patch = patch;
    m.codec.width = width;
    m.codec.blocks = blocks;
    m.codec.ffn = ffn;
    m.codec.csi_hidden = csi_hidden;
    m.codec.cvae_latent = cvae_latent;
    m.codec.cvae_hidden = cvae_hidden;
    m.codec.codeword_length = channel::codeword_length(ratio, image_size, image_size, n_t);
    m.codec.n_t = n_t;
    m.codec.n_r = n_r;
    m.codec.tau = tau;
    m.codec.rank_smoothing = rank_smoothing;
    m.grid = cmrg::MaskRatioGrid::uniform(grid_k, grid_lo, grid_hi);
    m.cmrg_hidden = cmrg_hidden;
    m.cmrg_latent = cmrg_latent;
    m.m_t1 = m_t1;
    m.m_t2 = m_t2;
    m.channel_free_cancel = channel_free_cancel;
    m.tie_users = tie_users;
    return m;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  return v;
}

template <class U>
U parse_unsigned(const std::string& s) {
  U v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool training = false;  // part of the checkpoint identity
};

template <class M>
Field num(std::string key, M ExperimentConfig::*m, bool training = false) {
  return {std::move(key),
          [m](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<M, double>) c.*m = parse_double(v);
            else c.*m = parse_unsigned<M>(v);
          },
          [m](const ExperimentConfig& c) {
            if constexpr (std::is_same_v<M, double>) return fmt_double(c.*m);
            else return std::to_string(c.*m);
          },
          training};
}

template <class M>
Field train_num(std::string key, M training::TrainConfig::*m) {
  return {std::move(key),
          [m](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<M, double>) c.train.*m = parse_double(v);
            else c.train.*m = parse_unsigned<M>(v);
          },
          [m](const ExperimentConfig& c) {
            if constexpr (std::is_same_v<M, double>) return fmt_double(c.train.*m);
            else return std::to_string(c.train.*m);
          },
          true};
}

inline Field str(std::string key, std::string ExperimentConfig::*m, bool training = false) {
  return {std::move(key), [m](ExperimentConfig& c, const std::string& v) { c.*m = v; },
          [m](const ExperimentConfig& c) { return c.*m; }, training};
}

inline Field flag(std::string key, bool ExperimentConfig::*m, bool training = false) {
  return {std::move(key), [m](ExperimentConfig& c, const std::string& v) { c.*m = parse_bool(v); },
          [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); }, training};
}

template <class E>
std::string join(const std::vector<E>& v, std::function<std::string(const E&)> f) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + f(v[i]);
  return s;
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    using C = ExperimentConfig;
    std::vector<Field> v{
        str("mode", &C::mode),
        str("scheme", &C::scheme),
        {"schemes",
         [](C& c, const std::string& s) { c.schemes = split_list(s); },
         [](const C& c) { return join<std::string>(c.schemes, [](const std::string& x) { return x; }); }},
        {"seeds",
         [](C& c, const std::string& s) {
           c.seeds.clear();
           for (const auto& x : split_list(s)) c.seeds.push_back(parse_unsigned<std::uint64_t>(x));
         },
         [](const C& c) { return join<std::uint64_t>(c.seeds, [](const std::uint64_t& x) { return std::to_string(x); }); }},
        str("precision", &C::precision, true),
        str("out", &C::out),
        str("checkpoint_dir", &C::checkpoint_dir),
        str("data.path", &C::data_path, true),
        num("data.synthetic.count", &C::synth_count, true),
        num("data.synthetic.seed", &C::synth_seed, true),
        num("data.image_size", &C::image_size, true),
        num("data.train_count", &C::train_count, true),
        num("channel.power", &C::power, true),
        num("channel.beta1", &C::beta1, true),
        num("channel.beta2", &C::beta2, true),
        num("channel.n_t", &C::n_t, true),
        num("channel.n_r", &C::n_r, true),
        num("channel.csi_seed", &C::csi_seed, true),
        num("channel.csi_train", &C::csi_train, true),
        num("channel.csi_test", &C::csi_test),
        num("codec.cbr", &C::cbr),
        num("codec.patch", &C::patch, true),
        num("codec.width", &C::width, true),
        num("codec.blocks", &C::blocks, true),
        num("codec.ffn", &C::ffn, true),
        num("codec.csi_hidden", &C::csi_hidden, true),
        num("codec.cvae_latent", &C::cvae_latent, true),
        num("codec.cvae_hidden", &C::cvae_hidden, true),
        num("codec.tau", &C::tau, true),
        num("codec.rank_smoothing", &C::rank_smoothing, true),
        num("codec.m_t1", &C::m_t1, true),
        num("codec.m_t2", &C::m_t2, true),
        num("cmrg.grid_k", &C::grid_k, true),
        num("cmrg.grid_lo", &C::grid_lo, true),
        num("cmrg.grid_hi", &C::grid_hi, true),
        num("cmrg.hidden", &C::cmrg_hidden, true),
        num("cmrg.latent", &C::cmrg_latent, true),
        flag("sic.channel_free_cancel", &C::channel_free_cancel, true),
        flag("model.tie_users", &C::tie_users, true),
        train_num("train.lambda", &training::TrainConfig::lambda),
        train_num("train.lr", &training::TrainConfig::lr),
        train_num("train.batch", &training::TrainConfig::batch),
        train_num("train.steps", &training::TrainConfig::steps),
        train_num("train.snr_min_db", &training::TrainConfig::snr_min_db),
        train_num("train.snr_max_db", &training::TrainConfig::snr_max_db),
        train_num("train.snapshot_refresh", &training::TrainConfig::snapshot_refresh),
        {"train.augment", [](C& c, const std::string& s) { c.train.augment = parse_bool(s); },
         [](const C& c) { return std::string(c.train.augment ? "true" : "false"); }, true},
        num("train.log_every", &C::log_every),
        num("train.checkpoint_every", &C::checkpoint_every),
        num("eval.snr_db", &C::eval_snr_db),
        num("eval.csi_per_pair", &C::eval_csi_per_pair),
        num("eval.batch", &C::eval_batch),
        {"sweep.snr_db",
         [](C& c, const std::string& s) {
           c.sweep_snr_db.clear();
           for (const auto& x : split_list(s)) c.sweep_snr_db.push_back(parse_double(x));
         },
         [](const C& c) { return join<double>(c.sweep_snr_db, [](const double& x) { return fmt_double(x); }); }},
        {"sweep.cbr",
         [](C& c, const std::string& s) {
           c.sweep_cbr.clear();
           for (const auto& x : split_list(s)) c.sweep_cbr.push_back(parse_double(x));
         },
         [](const C& c) { return join<double>(c.sweep_cbr, [](const double& x) { return fmt_double(x); }); }},
        num("sweep.fixed_cbr", &C::sweep_fixed_cbr),
        num("sweep.fixed_snr_db", &C::sweep_fixed_snr_db),
        flag("sweep.train_missing", &C::sweep_train_missing),
        num("sweep.threads", &C::sweep_threads),
        num("emit.snr_db", &C::emit_snr_db),
        num("emit.cbr", &C::emit_cbr),
        num("emit.count", &C::emit_count),
    };
    return v;
  }();
  return f;
}

}  // namespace detail

// Invariant checks; `check_paths` also requires data.path to exist.
inline void validate(const ExperimentConfig& c, bool check_paths = true) {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
  if (std::find(modes().begin(), modes().end(), c.mode) == modes().end()) fail("mode", "unknown mode '" + c.mode + "'");
  try {
    schemes::parse_scheme(c.scheme);
  } catch (const std::exception& e) {
    fail("scheme", e.what());
  }
  if (c.schemes.empty()) fail("schemes", "empty list");
  for (const auto& s : c.schemes) {
    try {
      schemes::parse_scheme(s);
    } catch (const std::exception& e) {
      fail("schemes", e.what());
    }
  }
  if (c.seeds.empty()) fail("seeds", "empty list");
  if (c.precision != "f32" && c.precision != "f64") fail("precision", "must be f32 or f64");
  if (!(c.beta1 > c.beta2)) fail("channel.beta1", "beta1 must exceed beta2 (user 1 is the strong user)");
  try {
    c.channel();
  } catch (const std::exception& e) {
    fail("channel", e.what());
  }
  if (check_paths && !c.data_path.empty() && !std::filesystem::is_directory(c.data_path)) {
    fail("data.path", "directory does not exist: " + c.data_path);
  }
  if (c.data_path.empty() && c.train_count >= c.synth_count) {
    fail("data.train_count", "must be smaller than data.synthetic.count (the rest is the test split)");
  }
  if (c.train_count == 0) fail("data.train_count", "must be > 0");
  if (c.csi_train == 0 || c.csi_test == 0) fail("channel.csi_train", "CSI pools must be non-empty");
  for (double r : c.sweep_cbr)
    if (!(r > 0)) fail("sweep.cbr", "ratios must be > 0");
  if (!(c.cbr > 0)) fail("codec.cbr", "must be > 0");
  if (c.m_t1 < 0 || c.m_t1 > 1 || c.m_t2 < 0 || c.m_t2 > 1) fail("codec.m_t1", "mask ratios must lie in [0, 1]");
  try {
    c.model(c.cbr).codec.validate();
    cmrg::MaskRatioGrid::uniform(c.grid_k, c.grid_lo, c.grid_hi);
  } catch (const std::exception& e) {
    fail("codec", e.what());
  }
  try {
    c.train.validate();
  } catch (const std::exception& e) {
    fail("train", e.what());
  }
  if (c.log_every == 0 || c.checkpoint_every == 0) fail("train.log_every", "cadences must be > 0");
  if (c.eval_csi_per_pair == 0 || c.eval_batch == 0) fail("eval.csi_per_pair", "must be > 0");
  if (c.emit_count == 0) fail("emit.count", "must be > 0");
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>",
                                          bool check_paths = true) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    const auto& fs = detail::fields();
    auto it = std::find_if(fs.begin(), fs.end(), [&](const detail::Field& f) { return f.key == key; });
    if (it == fs.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      it->set(c, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
  }
  try {
    validate(c, check_paths);
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

inline std::string serialize(const ExperimentConfig& c) {
  std::string s;
  for (const auto& f : detail::fields()) s += f.key + " = " + f.get(c) + "\n";
  return s;
}

// Identity of a trained model: FNV-1a over every training-relevant key plus
// the scheme, ratio and seed.
inline std::uint64_t training_hash(const ExperimentConfig& c, const std::string& scheme, double ratio,
                                   std::uint64_t seed) {
  std::string s = "scheme=" + scheme + "\ncbr=" + detail::fmt_double(ratio) + "\nseed=" + std::to_string(seed) + "\n";
  for (const auto& f : detail::fields())
    if (f.training) s += f.key + "=" + f.get(c) + "\n";
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace mulcfsc::harness
