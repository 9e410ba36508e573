#pragma once

// Experiment driver: data split, CSI pools, checkpointed training, sweeps and
// reconstruction emission.
//
// Checkpoints live in <checkpoint root>/<scheme>_cbr<R>_seed<S>_<hash>.ckpt,
// where <hash> is the training identity of the config, so a changed setting
// never picks up a stale model.  The loss log sits next to it as .loss.csv.
//
// Sweep noise: the channel-noise seed of an evaluation depends only on
// (seed, snr, cbr), so every scheme sees the same noise at a grid point and an
// emission at a point reproduces the sweep numbers there.

#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <thread>

#include "mulcfsc/harness/config.hpp"
#include "mulcfsc/harness/csv.hpp"
#include "mulcfsc/harness/dataset.hpp"
#include "mulcfsc/harness/evaluate.hpp"
#include "mulcfsc/harness/image_io.hpp"
#include "mulcfsc/training.hpp"

namespace mulcfsc::harness {

namespace fs = std::filesystem;

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Reporter {
  std::function<void(const std::string&)> info = [](const std::string&) {};
  std::function<void(const std::string&)> warn = [](const std::string&) {};
};

struct Split {
  std::vector<Image> train, test;
};

inline Split load_split(const ExperimentConfig& c, const Reporter& rep = {}) {
  std::vector<Image> all = c.data_path.empty()
                               ? synth_dataset({c.synth_count, c.image_size, c.synth_seed})
                               : load_dataset(c.data_path, c.image_size, rep.warn);
  if (all.size() <= c.train_count) {
    throw ExperimentError("dataset has " + std::to_string(all.size()) + " images; data.train_count = " +
                          std::to_string(c.train_count) + " leaves no test split");
  }
  Split s;
  s.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(c.train_count));
  s.test.assign(all.begin() + static_cast<std::ptrdiff_t>(c.train_count), all.end());
  return s;
}

struct CsiPools {
  std::vector<ComplexMatrix> train1, train2, test1, test2;
};

inline CsiPools make_pools(const ExperimentConfig& c) {
  auto rng = Rng::stream(c.csi_seed, 0xc51);
  CsiPools p;
  p.train1 = channel::sample_csi_pool(rng, c.csi_train, c.n_r, c.n_t);
  p.train2 = channel::sample_csi_pool(rng, c.csi_train, c.n_r, c.n_t);
  p.test1 = channel::sample_csi_pool(rng, c.csi_test, c.n_r, c.n_t);
  p.test2 = channel::sample_csi_pool(rng, c.csi_test, c.n_r, c.n_t);
  return p;
}

inline std::string ratio_tag(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", r);
  return buf;
}

inline std::string checkpoint_path(const ExperimentConfig& c, const std::string& scheme, double ratio,
                                   std::uint64_t seed) {
  char hash[20];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, training_hash(c, scheme, ratio, seed));
  return (fs::path(c.checkpoint_root()) /
          (scheme + "_cbr" + ratio_tag(ratio) + "_seed" + std::to_string(seed) + "_" + hash + ".ckpt"))
      .string();
}

inline std::string loss_log_path(const std::string& ckpt) {
  return fs::path(ckpt).replace_extension(".loss.csv").string();
}

inline const std::vector<std::string>& loss_log_header() {
  static const std::vector<std::string> h{"step", "L1", "Lc", "Lrec", "Lreg", "L2", "snr_db", "m1*", "m2*"};
  return h;
}

inline std::string loss_log_row(const training::LossRecord& r) {
  return csv_line({std::to_string(r.step), csv_number(r.l1), csv_number(r.lc), csv_number(r.l_rec),
                   csv_number(r.l_reg), csv_number(r.l2), csv_number(r.snr_db), csv_number(r.m1),
                   csv_number(r.m2)});
}

namespace detail {

// Rewrites the loss log to the rows at or before `step` and returns it open
// for appending.
inline std::ofstream reopen_loss_log(const std::string& path, std::size_t step) {
  std::string kept = csv_line(loss_log_header());
  if (step > 0 && fs::exists(path)) {
    auto rows = read_csv(path);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].empty()) continue;
      std::size_t s = 0;
      try {
        s = std::stoull(rows[i][0]);
      } catch (const std::exception&) {
        continue;
      }
      if (s <= step) kept += csv_line(rows[i]);
    }
  }
  {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ExperimentError("cannot write loss log " + path);
    os << kept;
  }
  return std::ofstream(path, std::ios::app);
}

}  // namespace detail

// Trains (or resumes) one model to c.train.steps and leaves the final
// checkpoint at `ckpt`.
template <class T>
schemes::Model<T> train_model(const ExperimentConfig& c, const std::string& scheme, double ratio,
                              std::uint64_t seed, const Split& split, const CsiPools& pools,
                              const std::string& ckpt, const Reporter& rep = {}) {
  const auto kind = schemes::parse_scheme(scheme);
  const auto hash = training_hash(c, scheme, ratio, seed);
  schemes::Model<T> model(kind, c.model(ratio), seed);
  training::TrainConfig tc = c.train;
  tc.seed = seed;
  fs::create_directories(fs::path(ckpt).parent_path().empty() ? fs::path(".") : fs::path(ckpt).parent_path());
  {
    training::Trainer<T> tr(model, tc, c.channel(), split.train, pools.train1, pools.train2, hash);
    if (fs::exists(ckpt)) {
      tr.load(ckpt);
      rep.info(scheme + " seed " + std::to_string(seed) + ": resuming from step " +
               std::to_string(tr.steps_done()));
    }
    auto log = detail::reopen_loss_log(loss_log_path(ckpt), tr.steps_done());
    while (tr.steps_done() < tc.steps) {
      auto r = tr.step();
      if (r.step % c.log_every == 0 || r.step == tc.steps) {
        log << loss_log_row(r);
        rep.info(scheme + " cbr " + ratio_tag(ratio) + " seed " + std::to_string(seed) + " step " +
                 std::to_string(r.step) + " L1 " + csv_number(r.l1) + " m1* " + csv_number(r.m1) +
                 " m2* " + csv_number(r.m2));
      }
      if (r.step % c.checkpoint_every == 0 && r.step < tc.steps) {
        log.flush();
        tr.save(ckpt);
      }
    }
    log.flush();
    tr.save(ckpt);
  }
  return model;
}

// A fully trained model for (scheme, ratio, seed): loaded from its checkpoint
// when complete, otherwise trained when `allow_train`.
template <class T>
schemes::Model<T> obtain_model(const ExperimentConfig& c, const std::string& scheme, double ratio,
                               std::uint64_t seed, const Split& split, const CsiPools& pools, bool allow_train,
                               const Reporter& rep = {}, std::string ckpt = "") {
  if (ckpt.empty()) ckpt = checkpoint_path(c, scheme, ratio, seed);
  if (fs::exists(ckpt)) {
    auto cp = training::load_checkpoint(ckpt);
    if (cp.step >= c.train.steps) {
      schemes::Model<T> model(schemes::parse_scheme(scheme), c.model(ratio), seed);
      training::load_weights(model, cp, training_hash(c, scheme, ratio, seed));
      return model;
    }
  }
  if (!allow_train) {
    throw ExperimentError("no trained checkpoint for scheme '" + scheme + "' (cbr " + ratio_tag(ratio) +
                          ", seed " + std::to_string(seed) + "): expected " + ckpt);
  }
  return train_model<T>(c, scheme, ratio, seed, split, pools, ckpt, rep);
}

struct ResultRow {
  std::string scheme;
  int user = 1;
  double snr_db = 0, cbr = 0;
  double psnr_db = 0, ms_ssim = 0;
  double m1_star_mean = 0, m2_star_mean = 0;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string>& result_header() {
  static const std::vector<std::string> h{"scheme",  "user",    "snr_db",       "cbr",          "psnr_db",
                                          "ms_ssim", "lpips",   "m1_star_mean", "m2_star_mean", "seed"};
  return h;
}

inline std::string result_csv(const std::vector<ResultRow>& rows) {
  std::string s = csv_line(result_header());
  for (const auto& r : rows) {
    s += csv_line({r.scheme, std::to_string(r.user), csv_number(r.snr_db), csv_number(r.cbr),
                   csv_number(r.psnr_db), csv_number(r.ms_ssim), "", csv_number(r.m1_star_mean),
                   csv_number(r.m2_star_mean), std::to_string(r.seed)});
  }
  return s;
}

inline std::vector<ResultRow> parse_results(const std::string& text) {
  auto rows = parse_csv(text);
  if (rows.empty() || rows[0] != result_header()) throw ExperimentError("result CSV: unexpected header");
  std::vector<ResultRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != result_header().size()) {
      throw ExperimentError("result CSV: row " + std::to_string(i) + " has " + std::to_string(f.size()) +
                            " fields");
    }
    out.push_back({f[0], std::stoi(f[1]), detail::parse_double(f[2]), detail::parse_double(f[3]),
                   detail::parse_double(f[4]), detail::parse_double(f[5]), detail::parse_double(f[7]),
                   detail::parse_double(f[8]), std::stoull(f[9])});
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ExperimentError("cannot write " + path);
  os << text;
  if (!os) throw ExperimentError("write failed for " + path);
}

inline std::uint64_t point_noise_seed(std::uint64_t seed, double snr_db, double cbr) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  };
  mix(seed);
  mix(std::bit_cast<std::uint64_t>(snr_db));
  mix(std::bit_cast<std::uint64_t>(cbr));
  return h;
}

inline EvalSpec eval_spec(const ExperimentConfig& c, std::uint64_t seed, double snr_db, double cbr) {
  return {snr_db, point_noise_seed(seed, snr_db, cbr), c.eval_csi_per_pair, c.eval_batch};
}

inline std::vector<ResultRow> result_rows(const std::string& scheme, std::uint64_t seed, double snr_db, double cbr,
                                          const EvalResult& e) {
  return {{scheme, 1, snr_db, cbr, e.user1.psnr_db, e.user1.ms_ssim, e.m1_mean, e.m2_mean, seed},
          {scheme, 2, snr_db, cbr, e.user2.psnr_db, e.user2.ms_ssim, e.m1_mean, e.m2_mean, seed}};
}

// Runs fn(0..n-1) on up to `threads` workers.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    }));
  }
  for (auto& w : workers) w.get();
}

enum class SweepAxis { Snr, Cbr };

struct GridPoint {
  double snr_db, cbr;
};

inline std::vector<GridPoint> sweep_points(const ExperimentConfig& c, SweepAxis axis) {
  std::vector<GridPoint> pts;
  if (axis == SweepAxis::Snr)
    for (double s : c.sweep_snr_db) pts.push_back({s, c.sweep_fixed_cbr});
  else
    for (double r : c.sweep_cbr) pts.push_back({c.sweep_fixed_snr_db, r});
  return pts;
}

// gnuplot data: first column the swept value, then one column per
// scheme/user holding the mean over seeds.
inline std::string plot_data(const std::vector<ResultRow>& rows, SweepAxis axis, bool psnr) {
  std::vector<std::string> series;
  std::vector<double> xs;
  std::map<std::pair<std::string, double>, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    const std::string name = r.scheme + "_u" + std::to_string(r.user);
    const double x = axis == SweepAxis::Snr ? r.snr_db : r.cbr;
    if (std::find(series.begin(), series.end(), name) == series.end()) series.push_back(name);
    if (std::find(xs.begin(), xs.end(), x) == xs.end()) xs.push_back(x);
    auto& a = acc[{name, x}];
    a.first += psnr ? r.psnr_db : r.ms_ssim;
    a.second += 1;
  }
  std::string s = std::string("# ") + (axis == SweepAxis::Snr ? "snr_db" : "cbr");
  for (const auto& n : series) s += " " + n;
  s += "\n";
  for (double x : xs) {
    s += csv_number(x);
    for (const auto& n : series) {
      auto it = acc.find({n, x});
      s += " " + (it == acc.end() ? std::string("NaN") : csv_number(it->second.first / it->second.second));
    }
    s += "\n";
  }
  return s;
}

struct SweepOutput {
  std::string csv_path;
  std::vector<std::string> plot_paths;
  std::vector<ResultRow> rows;
};

template <class T>
SweepOutput run_sweep(const ExperimentConfig& c, SweepAxis axis, const Reporter& rep = {}) {
  const auto split = load_split(c, rep);
  const auto pools = make_pools(c);
  const auto pts = sweep_points(c, axis);
  if (pts.empty()) throw ExperimentError("sweep grid is empty");
  std::vector<double> ratios;
  for (const auto& p : pts)
    if (std::find(ratios.begin(), ratios.end(), p.cbr) == ratios.end()) ratios.push_back(p.cbr);

  struct Key {
    std::string scheme;
    double cbr;
    std::uint64_t seed;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, schemes::Model<T>> models;
  for (const auto& s : c.schemes)
    for (auto seed : c.seeds)
      for (double r : ratios) models.emplace(Key{s, r, seed}, obtain_model<T>(c, s, r, seed, split, pools,
                                                                              c.sweep_train_missing, rep));

  struct Task {
    std::string scheme;
    std::uint64_t seed;
    GridPoint p;
  };
  std::vector<Task> tasks;
  for (const auto& s : c.schemes)
    for (auto seed : c.seeds)
      for (const auto& p : pts) tasks.push_back({s, seed, p});
  std::vector<std::vector<ResultRow>> results(tasks.size());
  parallel_for(tasks.size(), c.sweep_threads, [&](std::size_t i) {
    const auto& t = tasks[i];
    const auto& m = models.at(Key{t.scheme, t.p.cbr, t.seed});
    auto e = evaluate(m, c.channel(), split.test, pools.test1, pools.test2,
                      eval_spec(c, t.seed, t.p.snr_db, t.p.cbr));
    results[i] = result_rows(t.scheme, t.seed, t.p.snr_db, t.p.cbr, e);
  });

  SweepOutput out;
  for (auto& r : results) out.rows.insert(out.rows.end(), r.begin(), r.end());
  const std::string stem = axis == SweepAxis::Snr ? "sweep_snr" : "sweep_cbr";
  out.csv_path = (fs::path(c.out) / (stem + ".csv")).string();
  write_text(out.csv_path, result_csv(out.rows));
  std::ifstream is(out.csv_path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  const auto reread = parse_results(ss.str());
  for (const auto& [metric, psnr] : {std::pair{"psnr", true}, std::pair{"ms_ssim", false}}) {
    const auto path = (fs::path(c.out) / (stem + "_" + metric + ".dat")).string();
    write_text(path, plot_data(reread, axis, psnr));
    out.plot_paths.push_back(path);
  }
  rep.info("wrote " + out.csv_path);
  return out;
}

// Train-and-evaluate for a single scheme at the eval point (eval and the
// per-scheme modes).
template <class T>
std::vector<ResultRow> run_eval(const ExperimentConfig& c, const std::string& scheme, bool allow_train,
                                const Reporter& rep = {}, const std::string& ckpt = "") {
  const auto split = load_split(c, rep);
  const auto pools = make_pools(c);
  std::vector<ResultRow> rows;
  for (auto seed : c.seeds) {
    auto model = obtain_model<T>(c, scheme, c.cbr, seed, split, pools, allow_train, rep, ckpt);
    auto e = evaluate(model, c.channel(), split.test, pools.test1, pools.test2,
                      eval_spec(c, seed, c.eval_snr_db, c.cbr));
    auto r = result_rows(scheme, seed, c.eval_snr_db, c.cbr, e);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  write_text((fs::path(c.out) / ("eval_" + scheme + ".csv")).string(), result_csv(rows));
  return rows;
}

inline Image side_by_side(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("side_by_side: image shapes differ");
  Image o(a.height, 2 * a.width);
  for (std::size_t y = 0; y < a.height; ++y)
    for (std::size_t x = 0; x < a.width; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        o(y, x, ch) = a(y, x, ch);
        o(y, a.width + x, ch) = b(y, x, ch);
      }
  return o;
}

inline std::pair<Image, Image> split_side_by_side(const Image& im) {
  if (im.width % 2) throw std::invalid_argument("split_side_by_side: odd width");
  const std::size_t w = im.width / 2;
  Image a(im.height, w), b(im.height, w);
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        a(y, x, ch) = im(y, x, ch);
        b(y, x, ch) = im(y, w + x, ch);
      }
  return {a, b};
}

struct EmitOutput {
  std::string dir;
  std::vector<ResultRow> rows;  // full test-set scores at the emit point
  std::vector<std::string> files;
};

// Side-by-side original|reconstruction 16-bit PNGs for the first emit.count
// test pairs (first CSI draw of each) per scheme and user, at the emit
// point and the first seed.
template <class T>
EmitOutput emit_reconstructions(const ExperimentConfig& c, bool allow_train, const Reporter& rep = {}) {
  const auto split = load_split(c, rep);
  const auto pools = make_pools(c);
  const auto seed = c.seeds.front();
  EmitOutput out;
  out.dir = (fs::path(c.out) / "emit").string();
  std::string listing = csv_line({"scheme", "user", "pair", "file", "psnr_db", "ms_ssim"});
  for (const auto& scheme : c.schemes) {
    auto model = obtain_model<T>(c, scheme, c.emit_cbr, seed, split, pools, allow_train, rep);
    auto e = evaluate(model, c.channel(), split.test, pools.test1, pools.test2,
                      eval_spec(c, seed, c.emit_snr_db, c.emit_cbr), true);
    auto rows = result_rows(scheme, seed, c.emit_snr_db, c.emit_cbr, e);
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
    const std::size_t n = split.test.size(), count = std::min(c.emit_count, n);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t s = k * c.eval_csi_per_pair;
      for (int user : {1, 2}) {
        const Image& ref = user == 1 ? split.test[k] : split.test[(k + 1) % n];
        const Image& rec = user == 1 ? e.rec1[s] : e.rec2[s];
        char name[64];
        std::snprintf(name, sizeof name, "user%d_pair%03zu.png", user, k);
        const auto path = fs::path(out.dir) / scheme / name;
        fs::create_directories(path.parent_path());
        write_png(path.string(), side_by_side(ref, rec), 16);
        out.files.push_back(path.string());
        const auto& score = (user == 1 ? e.user1 : e.user2).per_image[s];
        listing += csv_line({scheme, std::to_string(user), std::to_string(k),
                             (fs::path(scheme) / name).string(), csv_number(score.psnr_db),
                             csv_number(score.ms_ssim)});
      }
    }
  }
  write_text((fs::path(out.dir) / "reconstructions.csv").string(), listing);
  write_text((fs::path(out.dir) / "emit.csv").string(), result_csv(out.rows));
  rep.info("wrote " + std::to_string(out.files.size()) + " images under " + out.dir);
  return out;
}

}  // namespace mulcfsc::harness
