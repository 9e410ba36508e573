// Command-line front end.  Log level comes from SPDLOG_LEVEL (e.g. debug, warn).

#include <cstdio>
#include <iostream>

#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "mulcfsc/mulcfsc.hpp"

using namespace mulcfsc;
using harness::ExperimentConfig;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string checkpoint;
  std::string scheme;
};

harness::Reporter reporter() {
  return {[](const std::string& s) { spdlog::info("{}", s); }, [](const std::string& s) { spdlog::warn("{}", s); }};
}

std::string mode_scheme(const std::string& mode) {
  if (mode == "baseline-joint") return "joint";
  if (mode == "oma") return "oma";
  if (mode == "ablation-lcfsc") return "lcfsc";
  return "";
}

ExperimentConfig load(const Options& o, const std::string& mode) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : harness::parse_config(o.config);
  const auto implied = mode_scheme(c.mode);
  if (!mode.empty() && !(implied.size() && (mode == "train" || mode == "eval"))) c.mode = mode;
  if (o.seed_set) c.seeds = {o.seed};
  if (!o.out.empty()) c.out = o.out;
  if (!o.scheme.empty()) {
    c.scheme = o.scheme;
    c.schemes = {o.scheme};
  } else if (!implied.empty()) {
    c.scheme = implied;
  }
  harness::validate(c);
  return c;
}

void print_rows(const std::vector<harness::ResultRow>& rows) {
  for (const auto& r : rows) {
    std::printf("%-9s user %d  snr %5.1f dB  cbr %.3f  seed %llu  psnr %.3f dB  ms-ssim %.4f  m1* %.4f  m2* %.4f\n",
                r.scheme.c_str(), r.user, r.snr_db, r.cbr, static_cast<unsigned long long>(r.seed), r.psnr_db,
                r.ms_ssim, r.m1_star_mean, r.m2_star_mean);
  }
}

template <class T>
int train(const ExperimentConfig& c, const Options& o) {
  const auto split = harness::load_split(c, reporter());
  const auto pools = harness::make_pools(c);
  if (!o.checkpoint.empty() && c.seeds.size() > 1) {
    throw std::invalid_argument("--checkpoint names one file; give a single --seed");
  }
  for (auto seed : c.seeds) {
    const auto path = o.checkpoint.empty() ? harness::checkpoint_path(c, c.scheme, c.cbr, seed) : o.checkpoint;
    harness::train_model<T>(c, c.scheme, c.cbr, seed, split, pools, path, reporter());
    std::printf("%s\n", path.c_str());
  }
  return 0;
}

template <class T>
int run(const std::string& cmd, const ExperimentConfig& c, const Options& o) {
  if (cmd == "train") return train<T>(c, o);
  if (cmd == "eval") {
    print_rows(harness::run_eval<T>(c, c.scheme, false, reporter(), o.checkpoint));
    return 0;
  }
  if (cmd == "sweep-snr" || cmd == "sweep-cbr") {
    auto r = harness::run_sweep<T>(c, cmd == "sweep-snr" ? harness::SweepAxis::Snr : harness::SweepAxis::Cbr,
                                   reporter());
    std::printf("%s\n", r.csv_path.c_str());
    for (const auto& p : r.plot_paths) std::printf("%s\n", p.c_str());
    return 0;
  }
  if (cmd == "emit-images") {
    auto r = harness::emit_reconstructions<T>(c, c.sweep_train_missing, reporter());
    print_rows(r.rows);
    std::printf("%s\n", r.dir.c_str());
    return 0;
  }
  if (cmd == "run") {
    if (c.mode == "train") return train<T>(c, o);
    if (c.mode == "sweep-snr" || c.mode == "sweep-cbr") return run<T>(c.mode, c, o);
    print_rows(harness::run_eval<T>(c, c.scheme, c.mode != "eval", reporter(), o.checkpoint));
    return 0;
  }
  throw std::logic_error("unhandled command " + cmd);
}

bool report(const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  return ok;
}

int selftest() {
  bool ok = true;
  Rng rng(11);
  {
    auto x = gaussian_sample<double>(rng, {3, 5});
    auto w = gaussian_sample<double>(rng, {5, 4});
    auto r = grad_check<double>([&] { return ops::sum(ops::sigmoid(ops::matmul(x, w))); }, {x, w}, 1e-6);
    ok &= report("autodiff finite differences", r.max_rel_error < 1e-6, "max rel err " + harness::csv_number(r.max_rel_error));
  }
  {
    codec::CodecConfig cc;
    auto enc1 = codec::Encoder<double>(cc, rng), enc2 = codec::Encoder<double>(cc, rng);
    channel::ChannelConfig ch;
    auto s1 = uniform_sample<double>(rng, {2, 32, 32, 3}, 0.0, 1.0);
    auto s2 = uniform_sample<double>(rng, {2, 32, 32, 3}, 0.0, 1.0);
    auto h1 = stack<double>(channel::sample_csi_pool(rng, 2, 2, 2));
    auto h2 = stack<double>(channel::sample_csi_pool(rng, 2, 2, 2));
    const double e = sic::genie_residual(s1, s2, h1, h2, enc1, enc2, 0.15, 0.15, ch, rng);
    const double v = sic::genie_residual(s1, s2, h1, h2, enc1, enc2, 0.15, 0.15, ch, rng, true);
    ok &= report("genie cancellation", e < 1e-5 && v > 1e-2,
                 "residual " + harness::csv_number(e) + ", channel-free form " + harness::csv_number(v));
  }
  {
    auto imgs = harness::synth_dataset({2, 32, 3});
    const double p = metrics::psnr(imgs[0], imgs[0]), m = metrics::ms_ssim(imgs[0], imgs[0]);
    const double ab = metrics::ms_ssim(imgs[0], imgs[1]), ba = metrics::ms_ssim(imgs[1], imgs[0]);
    ok &= report("metrics identity and symmetry", p == metrics::kPsnrCap && std::abs(m - 1) < 1e-12 && ab == ba,
                 "ms-ssim(a,b) " + harness::csv_number(ab));
  }
  {
    ExperimentConfig c;
    auto text = harness::serialize(c);
    ok &= report("config round trip", harness::serialize(harness::parse_config_text(text)) == text, "");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::cfg::load_env_levels();
  CLI::App app{"Multi-user semantic communication over a MIMO-NOMA channel: training, sweeps, emission"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Config file (flat dotted keys)")->check(CLI::ExistingFile);
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) {
      o.seed = s;
      o.seed_set = true;
    }, "Run only this seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file (train, eval) or directory (sweeps, emit-images)");
    sub->add_option("--scheme", o.scheme, "mu-lcfsc | oma | joint | lcfsc");
  };
  std::vector<std::pair<std::string, std::string>> cmds{
      {"train", "Train one scheme (per seed) with checkpoints and a loss log"},
      {"sweep-snr", "Evaluate all schemes over the SNR grid at the fixed CBR"},
      {"sweep-cbr", "Evaluate all schemes over the CBR grid at the fixed SNR"},
      {"eval", "Evaluate a trained scheme at eval.snr_db and codec.cbr"},
      {"emit-images", "Write original|reconstruction PNGs at the emit point"},
      {"run", "Do what the config's mode says"},
  };
  for (const auto& [name, help] : cmds) common(app.add_subcommand(name, help));
  app.add_subcommand("selftest", "Quick internal consistency checks");
  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "selftest") return selftest();
    const std::string mode = cmd == "run" || cmd == "emit-images" ? "" : cmd;
    auto c = load(o, mode);
    if (!o.checkpoint.empty() && (cmd == "sweep-snr" || cmd == "sweep-cbr" || cmd == "emit-images")) {
      c.checkpoint_dir = o.checkpoint;
    }
    return c.precision == "f64" ? run<double>(cmd, c, o) : run<float>(cmd, c, o);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
