#include <gtest/gtest.h>

#include <cmath>

#include "mmgfrog/noise.hpp"
#include "mmgfrog/presets.hpp"

using namespace mmgfrog;

namespace {

SetupParams tiny_params() {
  SetupParams p;
  p.n_t = 64;
  p.dt = 2.0;
  p.n_tau = 16;
  p.delay_step = 2;
  p.gate_fwhm = 30.0;
  p.gate_chirp = 2.0;
  p.gain_db = 20.0;
  p.mode_t0 = 10.0;
  p.squeezing_db = {3.0, 2.0};
  return p;
}

Spectrogram clean_small() {
  const auto s = make_setup(small_params());
  return synthesize_vacuum_subtracted(s.state, s.model());
}

double rms(const RVec& v) {
  double a = 0.0;
  for (double x : v) a += x * x;
  return std::sqrt(a / static_cast<double>(v.size()));
}

}  // namespace

TEST(AddNoise, InfiniteSnrIsIdentity) {
  const auto c = clean_small();
  const auto n = add_noise(c, {std::numeric_limits<double>::infinity(), 3, SnrDefinition::rms});
  EXPECT_EQ(n.values, c.values);
}

TEST(AddNoise, ZeroDbSigmaEqualsSignalRms) {
  const auto s = make_setup(three_mode_params());
  const auto c = synthesize_vacuum_subtracted(s.state, s.model());
  ASSERT_GE(c.values.size(), 10000u);
  const auto n = add_noise(c, {0.0, 11, SnrDefinition::rms});
  RVec d(c.values.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = n.values[i] - c.values[i];
  double mean = 0.0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(d.size() - 1));
  EXPECT_NEAR(sd / rms(c.values), 1.0, 0.02);
}

TEST(AddNoise, Unbiased) {
  const auto c = clean_small();
  const auto n = add_noise(c, {5.0, 12, SnrDefinition::rms});
  const double sigma = noise_sigma(c.values, {5.0, 12, SnrDefinition::rms});
  double mean = 0.0;
  for (std::size_t i = 0; i < c.values.size(); ++i) mean += n.values[i] - c.values[i];
  mean /= static_cast<double>(c.values.size());
  EXPECT_LT(std::abs(mean), 3.0 * sigma / std::sqrt(static_cast<double>(c.values.size())));
}

TEST(AddNoise, PeakDefinitionAndSeeds) {
  const auto c = clean_small();
  const double peak = *std::max_element(c.values.begin(), c.values.end());
  EXPECT_NEAR(noise_sigma(c.values, {20.0, 0, SnrDefinition::peak}), 0.1 * peak, 1e-12 * peak);
  const auto a = add_noise(c, {10.0, 1, SnrDefinition::rms});
  const auto b = add_noise(c, {10.0, 1, SnrDefinition::rms});
  const auto d = add_noise(c, {10.0, 2, SnrDefinition::rms});
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, d.values);
}

TEST(AddNoise, RejectsBadInput) {
  const auto c = clean_small();
  EXPECT_THROW(add_noise(c, {std::nan(""), 0, SnrDefinition::rms}), std::invalid_argument);
  const auto s = make_setup(small_params());
  EXPECT_THROW(add_noise(vacuum_spectrogram(s.model()), {10.0, 0, SnrDefinition::rms}), std::invalid_argument);
}

TEST(Mask, KeepsNearlyAllEnergyOfCleanLobe) {
  const auto c = clean_small();
  const auto m = build_mask(c, 1e-3);
  double kept = 0.0, total = 0.0;
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    total += c.values[i] * c.values[i];
    kept += m[i] * c.values[i] * c.values[i];
  }
  EXPECT_GE(kept / total, 0.999);
  EXPECT_LT(mask_fraction(m), 1.0);
}

TEST(Mask, ConstantInputGivesAllOnes) {
  auto c = clean_small();
  std::fill(c.values.begin(), c.values.end(), 2.5);
  const auto m = build_mask(c, 0.5);
  EXPECT_EQ(mask_fraction(m), 1.0);
}

TEST(Mask, EmptyAndInvalid) {
  auto c = clean_small();
  std::fill(c.values.begin(), c.values.end(), 0.0);
  EXPECT_THROW(build_mask(c, 0.1), std::invalid_argument);
  EXPECT_THROW(build_mask(clean_small(), 0.0), std::invalid_argument);
  EXPECT_THROW(build_mask(clean_small(), 1.0), std::invalid_argument);
}

TEST(Mask, PureNoiseIsPartialAndZeroDataIsRefused) {
  auto zero = clean_small();
  std::fill(zero.values.begin(), zero.values.end(), 0.0);
  Spectrogram pure = zero;
  Rng rng(4);
  std::normal_distribution<double> nd;
  for (auto& v : pure.values) v = nd(rng);
  const auto m = build_mask(pure, 0.5);
  EXPECT_GT(mask_fraction(m), 0.0);
  EXPECT_LT(mask_fraction(m), 1.0);

  const auto s = make_setup(small_params());
  RetrievalConfig cfg;
  cfg.n_modes = 1;
  cfg.max_iters = 5;
  cfg.mask = m;
  EXPECT_THROW(retrieve(zero, s.gate_fn(), cfg), UndefinedLoss);
}

TEST(Mask, CleanVsCleanLossIsZeroUnderAnyMask) {
  const auto c = clean_small();
  for (double thr : {1e-3, 0.1, 0.5}) {
    const auto m = build_mask(c, thr);
    EXPECT_EQ(loss(c, c, &m), 0.0);
  }
}

TEST(NoiseEstimate, RecoversSigmaOffTheMask) {
  const auto c = clean_small();
  const NoiseSpec ns{15.0, 8, SnrDefinition::rms};
  const auto n = add_noise(c, ns);
  const auto m = build_mask(n, 0.1);
  const auto est = estimate_noise_sigma(n.values, m);
  ASSERT_TRUE(est.has_value());
  EXPECT_NEAR(*est / noise_sigma(c.values, ns), 1.0, 0.05);
  const RVec ones(c.values.size(), 1.0);
  EXPECT_FALSE(estimate_noise_sigma(n.values, ones).has_value());
}

TEST(NoiseEstimate, StopsAtTheNoiseFloor) {
  const auto s = make_setup(tiny_params());
  const auto clean = synthesize_vacuum_subtracted(s.state, s.model());
  const auto noisy = add_noise(clean, {15.0, 2, SnrDefinition::rms});
  RetrievalConfig cfg;
  cfg.n_modes = 2;
  cfg.max_iters = 3000;
  cfg.noise_sigma = noise_sigma(clean.values, {15.0, 2, SnrDefinition::rms});
  cfg.noise_floor_stop = 1.0;
  const auto r = retrieve(noisy, s.gate_fn(), cfg);
  EXPECT_GT(r.noise_floor, 0.0);
  EXPECT_TRUE(r.noise_limited);
  EXPECT_LE(r.final_loss, r.noise_floor);
  EXPECT_LT(r.iterations_run, cfg.max_iters);
}

TEST(Bootstrap, ResampleKeepsDrawCountOnMask) {
  RVec mask{0, 1, 1, 0, 1};
  const auto w = resample_pixels(mask, 1.0, 3);
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    sum += w[i];
    if (mask[i] == 0.0) {
      EXPECT_EQ(w[i], 0.0);
    }
  }
  EXPECT_EQ(sum, 3.0);
  EXPECT_EQ(w, resample_pixels(mask, 1.0, 3));
}

TEST(Bootstrap, DeterministicAndCollapsesOnCleanData) {
  const auto s = make_setup(tiny_params());
  const auto clean = synthesize_vacuum_subtracted(s.state, s.model());
  RetrievalConfig cfg;
  cfg.n_modes = 2;
  cfg.max_iters = 600;
  cfg.mask = build_mask(clean, 1e-3);
  const BootstrapSpec b{10, 9, 1.0};
  const auto a = bootstrap_retrieve(clean, s.gate_fn(), cfg, b, &s.state.basis);
  const auto a2 = bootstrap_retrieve(clean, s.gate_fn(), cfg, b, &s.state.basis);
  EXPECT_EQ(a.fidelity.mean, a2.fidelity.mean);
  EXPECT_EQ(a.squeezed.mean, a2.squeezed.mean);
  EXPECT_EQ(a.loss.mean, a2.loss.mean);

  ASSERT_EQ(a.n_success, 10u);
  for (std::size_t q = 0; q < 2; ++q) {
    EXPECT_LT(a.squeezed.stddev[q], 0.01 * a.squeezed.mean[q]);
    EXPECT_LT(a.antisqueezed.stddev[q], 0.01 * a.antisqueezed.mean[q]);
  }
}

TEST(Bootstrap, RejectsBadSpec) {
  EXPECT_THROW((BootstrapSpec{1, 0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((BootstrapSpec{10, 0, 0.0}.validate()), std::invalid_argument);
}
