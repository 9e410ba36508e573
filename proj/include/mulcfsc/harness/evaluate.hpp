#pragma once

// Test-set evaluation of a trained model at one channel operating point.
//
// Test pairs: pair k sends test[k] as user 1 and test[(k + 1) % n] as user 2.
// Each pair is transmitted under `csi_per_pair` realizations taken round-robin
// from the test CSI pools, so with n * csi_per_pair >= pool size every test
// realization is used.  Inference uses the CMRG posterior-mean latent.

#include <vector>

#include "mulcfsc/image.hpp"
#include "mulcfsc/metrics.hpp"
#include "mulcfsc/schemes.hpp"

namespace mulcfsc::harness {

struct EvalSpec {
  double snr_db = 6.0;
  std::uint64_t noise_seed = 0;
  std::size_t csi_per_pair = 5;
  std::size_t batch = 25;
};

struct EvalResult {
  metrics::MetricReport user1, user2;
  double m1_mean = 0, m2_mean = 0;
  std::vector<Image> rec1, rec2;  // filled when requested
};

template <class T>
EvalResult evaluate(const schemes::Model<T>& model, const channel::ChannelConfig& base,
                    const std::vector<Image>& test, const std::vector<ComplexMatrix>& csi1,
                    const std::vector<ComplexMatrix>& csi2, const EvalSpec& spec, bool keep_images = false) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (csi1.empty() || csi2.empty()) throw std::invalid_argument("evaluate: empty test CSI pool");
  if (spec.csi_per_pair == 0 || spec.batch == 0) throw std::invalid_argument("evaluate: zero batch or draws");
  NoGrad<T> off;
  const auto ch = base.with_snr_db(spec.snr_db);
  auto noise = Rng::stream(spec.noise_seed, 0xe7a1);
  const std::size_t n = test.size(), total = n * spec.csi_per_pair;
  EvalResult r;
  double m1 = 0, m2 = 0;
  for (std::size_t start = 0; start < total; start += spec.batch) {
    const std::size_t end = std::min(total, start + spec.batch);
    std::vector<const Image*> a, b;
    std::vector<ComplexMatrix> h1, h2;
    for (std::size_t s = start; s < end; ++s) {
      const std::size_t k = s / spec.csi_per_pair;
      a.push_back(&test[k]);
      b.push_back(&test[(k + 1) % n]);
      h1.push_back(csi1[s % csi1.size()]);
      h2.push_back(csi2[s % csi2.size()]);
    }
    schemes::Batch<T> batch{to_tensor<T>(a), to_tensor<T>(b), stack<T>(h1), stack<T>(h2)};
    auto f = model.forward(batch, ch, noise);
    auto r1 = from_tensor(f.s1_hat), r2 = from_tensor(f.s2_hat);
    for (std::size_t i = 0; i < a.size(); ++i) {
      r.user1.add(*a[i], r1[i]);
      r.user2.add(*b[i], r2[i]);
      if (f.m1.defined()) {
        m1 += f.m1.at(i);
        m2 += f.m2.at(i);
      }
    }
    if (keep_images) {
      for (auto& im : r1) r.rec1.push_back(std::move(im));
      for (auto& im : r2) r.rec2.push_back(std::move(im));
    }
  }
  r.m1_mean = m1 / static_cast<double>(total);
  r.m2_mean = m2 / static_cast<double>(total);
  return r;
}

}  // namespace mulcfsc::harness
