#pragma once
/**
 * @file gate.hpp
 * @brief The parametric gate: pump envelope, coupling and the derived gain
 * r(t), pump phase theta(t), delta_phi(t) = theta/2 - w_s t and
 * G(t) = exp(-i delta_phi + r).
 */

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

#include "grid.hpp"

namespace mmgfrog {

class GateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GatePulse {
  TimeGrid grid;
  CVec envelope;  // E_g(t), arbitrary units
  double kappa = 1.0;
  double w_s = 0.0;

  double peak_gain_r() const {
    double m = 0.0;
    for (const auto& e : envelope) m = std::max(m, std::abs(e));
    return kappa * m;
  }
};

struct GateFunctions {
  TimeGrid grid;
  double w_s = 0.0;
  RVec r;
  RVec theta;
  RVec delta_phi;
  CVec g;
};

/// Peak r giving a quadrature power gain exp(2 r) of `db` decibels.
inline double gain_db_to_r(double db) { return db / 20.0 * std::log(10.0); }

/**
 * Gaussian pump with intensity FWHM `fwhm_fs` and quadratic phase
 * chirp * t^2 / (2 sigma^2), sigma being the amplitude 1/e^(1/2) width.
 * kappa is set so that max r equals gain_db_to_r(peak_gain_db).
 */
inline GatePulse chirped_gaussian_gate(const TimeGrid& tg, double fwhm_fs, double chirp, double peak_gain_db,
                                       double w_s) {
  if (!(peak_gain_db > 0.0)) throw GateError("peak gain must be positive");
  if (!(fwhm_fs > 4.0 * tg.dt())) throw GateError("gate FWHM is not resolved by the time step");
  if (fwhm_fs > 0.5 * tg.span()) throw GateError("gate FWHM exceeds half the time window");
  const double sigma = fwhm_fs / (2.0 * std::sqrt(std::log(2.0)));
  GatePulse gp;
  gp.grid = tg;
  gp.w_s = w_s;
  gp.envelope.resize(tg.n_t());
  for (std::size_t j = 0; j < tg.n_t(); ++j) {
    const double u = tg.time(j) * tg.time(j) / (2.0 * sigma * sigma);
    gp.envelope[j] = std::exp(-u) * std::polar(1.0, chirp * u);
  }
  double peak = 0.0;
  for (const auto& e : gp.envelope) peak = std::max(peak, std::abs(e));
  gp.kappa = gain_db_to_r(peak_gain_db) / peak;
  return gp;
}

/// Gate from explicit samples of E_g and a coupling constant.
inline GatePulse sampled_gate(const TimeGrid& tg, CVec envelope, double kappa, double w_s) {
  if (envelope.size() != tg.n_t()) throw GridMismatch("gate samples do not match the time grid");
  if (!std::isfinite(kappa)) throw GateError("kappa must be finite");
  for (const auto& e : envelope)
    if (!std::isfinite(e.real()) || !std::isfinite(e.imag())) throw GateError("gate samples must be finite");
  return GatePulse{tg, std::move(envelope), kappa, w_s};
}

/// Phase unwrapped outward from index `anchor`, so the anchor keeps its principal value.
inline RVec unwrap_from(const RVec& wrapped, std::size_t anchor) {
  RVec out = wrapped;
  const double two_pi = 2.0 * std::numbers::pi;
  auto fix = [&](std::size_t prev, std::size_t cur) {
    const double d = wrapped[cur] - wrapped[prev];
    const double k = std::round(d / two_pi);
    out[cur] = out[prev] + (d - k * two_pi);
  };
  for (std::size_t j = anchor + 1; j < out.size(); ++j) fix(j - 1, j);
  for (std::size_t j = anchor; j-- > 0;) fix(j + 1, j);
  return out;
}

inline GateFunctions gate_functions(const GatePulse& gate) {
  const std::size_t n = gate.grid.n_t();
  if (gate.envelope.size() != n) throw GridMismatch("gate envelope does not match its grid");
  GateFunctions gf;
  gf.grid = gate.grid;
  gf.w_s = gate.w_s;
  gf.r.resize(n);
  gf.theta.resize(n);
  gf.delta_phi.resize(n);
  gf.g.resize(n);
  RVec wrapped(n);
  std::size_t peak = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const cplx xi = gate.kappa * gate.envelope[j];
    gf.r[j] = std::abs(xi);
    wrapped[j] = std::arg(xi);
    if (gf.r[j] > gf.r[peak]) peak = j;
  }
  gf.theta = unwrap_from(wrapped, peak);
  for (std::size_t j = 0; j < n; ++j) {
    gf.delta_phi[j] = 0.5 * gf.theta[j] - gate.w_s * gate.grid.time(j);
    gf.g[j] = std::exp(cplx(gf.r[j], -gf.delta_phi[j]));
  }
  return gf;
}

/// FWHM of a sampled nonnegative profile, by linear interpolation at half maximum.
inline double profile_fwhm(const TimeGrid& tg, const RVec& y) {
  const auto it = std::max_element(y.begin(), y.end());
  const std::size_t p = static_cast<std::size_t>(it - y.begin());
  const double half = 0.5 * *it;
  std::size_t lo = p, hi = p;
  while (lo > 0 && y[lo - 1] >= half) --lo;
  while (hi + 1 < y.size() && y[hi + 1] >= half) ++hi;
  if (lo == 0 || hi + 1 == y.size()) throw GateError("profile does not fall to half maximum inside the window");
  const double tl = tg.time(lo - 1) + (half - y[lo - 1]) / (y[lo] - y[lo - 1]) * tg.dt();
  const double th = tg.time(hi) + (y[hi] - half) / (y[hi] - y[hi + 1]) * tg.dt();
  return th - tl;
}

}  // namespace mmgfrog
