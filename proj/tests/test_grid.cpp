#include <gtest/gtest.h>

#include <random>

#include "mmgfrog/grid.hpp"

using namespace mmgfrog;

namespace {

CVec random_signal(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  CVec v(n);
  for (auto& x : v) x = cplx(nd(rng), nd(rng));
  return v;
}

// Direct O(n^2) evaluation of dt * sum_j f_j exp(-i w_k t_j).
CVec direct_dft(const TimeGrid& tg, const FreqGrid& fg, const CVec& f) {
  CVec out(tg.n_t());
  for (std::size_t k = 0; k < tg.n_t(); ++k) {
    cplx s = 0.0;
    for (std::size_t j = 0; j < tg.n_t(); ++j) s += f[j] * std::polar(1.0, -fg.omega(k) * tg.time(j));
    out[k] = s * tg.dt();
  }
  return out;
}

}  // namespace

TEST(TimeGrid, RejectsBadSizes) {
  EXPECT_THROW(TimeGrid(100, 1.0), GridError);
  EXPECT_THROW(TimeGrid(2, 1.0), GridError);
  EXPECT_THROW(TimeGrid(64, 0.0), GridError);
  EXPECT_NO_THROW(TimeGrid(1024, 0.5));
}

TEST(TimeGrid, ZeroAtCenterSample) {
  TimeGrid tg(1024, 0.5);
  EXPECT_DOUBLE_EQ(tg.time(512), 0.0);
  EXPECT_DOUBLE_EQ(tg.t0_offset(), -256.0);
  EXPECT_DOUBLE_EQ(tg.span(), 512.0);
}

TEST(FreqGrid, ConjugateSpacing) {
  TimeGrid tg(1024, 0.5);
  auto fg = FreqGrid::conjugate_to(tg, 1.5);
  EXPECT_NEAR(fg.dw(), 2.0 * std::numbers::pi / 512.0, 1e-15);
  EXPECT_DOUBLE_EQ(fg.omega(512), 1.5);
  EXPECT_DOUBLE_EQ(fg.relative(512), 0.0);
}

TEST(DelayGrid, CenteredAndCommensurate) {
  TimeGrid tg(256, 2.0);
  auto dg = DelayGrid::centered(tg, 96, 2);
  EXPECT_DOUBLE_EQ(dg.tau(48), 0.0);
  EXPECT_DOUBLE_EQ(dg.tau(0), -192.0);
  EXPECT_EQ(dg.shift_samples(0, tg), -96);
  EXPECT_NO_THROW(dg.validate_against(tg));
  DelayGrid off(4, 3.0, 0.0);
  EXPECT_THROW(off.validate_against(tg), GridError);
  DelayGrid wide(4, 100.0, -300.0);
  EXPECT_THROW(wide.validate_against(tg), GridError);
}

TEST(Transform, ParsevalHolds) {
  for (double wc : {0.0, 1.8836}) {
    TimeGrid tg(512, 0.7);
    auto fg = FreqGrid::conjugate_to(tg, wc);
    auto f = random_signal(tg.n_t(), 3);
    auto F = forward_transform(tg, fg, f);
    double et = 0.0, ew = 0.0;
    for (auto& v : f) et += std::norm(v) * tg.dt();
    for (auto& v : F) ew += std::norm(v) * fg.dw() / (2.0 * std::numbers::pi);
    EXPECT_NEAR(ew / et, 1.0, 1e-12);
  }
}

TEST(Transform, MatchesDirectSum) {
  TimeGrid tg(64, 1.3);
  auto fg = FreqGrid::conjugate_to(tg, 0.9);
  auto f = random_signal(tg.n_t(), 11);
  auto fast = forward_transform(tg, fg, f);
  auto slow = direct_dft(tg, fg, f);
  double err = 0.0, ref = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    err = std::max(err, std::abs(fast[k] - slow[k]));
    ref = std::max(ref, std::abs(slow[k]));
  }
  EXPECT_LT(err / ref, 1e-12);
}

TEST(Transform, InverseRoundTrip) {
  TimeGrid tg(256, 2.0);
  auto fg = FreqGrid::conjugate_to(tg, 1.8836);
  auto f = random_signal(tg.n_t(), 5);
  auto back = inverse_transform(tg, fg, forward_transform(tg, fg, f));
  for (std::size_t j = 0; j < f.size(); ++j) EXPECT_NEAR(std::abs(back[j] - f[j]), 0.0, 1e-12);
}

TEST(Transform, AdjointIdentity) {
  TimeGrid tg(128, 2.0);
  auto fg = FreqGrid::conjugate_to(tg, 0.4);
  SpectralTransform xf(tg, fg);
  auto a = random_signal(128, 1), b = random_signal(128, 2);
  CVec Fa = a, Hb = b;
  xf.forward(Fa);
  xf.adjoint(Hb);
  cplx lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < 128; ++i) {
    lhs += std::conj(b[i]) * Fa[i];
    rhs += std::conj(Hb[i]) * a[i];
  }
  EXPECT_LT(std::abs(lhs - rhs) / std::abs(lhs), 1e-12);
}

TEST(Transform, GaussianHasGaussianSpectrum) {
  TimeGrid tg(512, 0.5);
  auto fg = FreqGrid::conjugate_to(tg, 0.0);
  CVec f(tg.n_t());
  const double s = 10.0;
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = std::exp(-tg.time(j) * tg.time(j) / (2 * s * s));
  auto F = forward_transform(tg, fg, f);
  for (std::size_t k = 200; k < 312; ++k) {
    const double w = fg.omega(k);
    const double expect = s * std::sqrt(2 * std::numbers::pi) * std::exp(-w * w * s * s / 2);
    EXPECT_NEAR(F[k].real(), expect, 1e-10);
    EXPECT_NEAR(F[k].imag(), 0.0, 1e-10);
  }
}

TEST(Transform, SizeMismatchThrows) {
  TimeGrid tg(64, 1.0);
  auto fg = FreqGrid::conjugate_to(tg, 0.0);
  CVec f(32);
  EXPECT_THROW(forward_transform(tg, fg, f), GridMismatch);
  EXPECT_THROW(SpectralTransform(tg, FreqGrid(64, 0.5, 0.0)), GridMismatch);
}

TEST(Shift, WholeSampleDelay) {
  TimeGrid tg(64, 1.0);
  CVec f(64, 0.0);
  f[32] = 1.0;
  auto r = shift_by_delay(tg, f, 5.0);
  EXPECT_EQ(r.samples[37], cplx(1.0));
  EXPECT_FALSE(r.wrap_warning());
  EXPECT_THROW(shift_by_delay(tg, f, 0.5), GridError);
  f[63] = 1.0;
  auto w = shift_by_delay(tg, f, 2.0);
  EXPECT_TRUE(w.wrap_warning());
  EXPECT_NEAR(w.wrapped_fraction, 0.5, 1e-15);
}
