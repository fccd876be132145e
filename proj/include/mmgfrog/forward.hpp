#pragma once
/**
 * @file forward.hpp
 * @brief Spectrogram synthesis for a multimode Gaussian state seen through
 * the parametric gate.
 *
 * For mode psi_n and delay tau, with G_tau(t) = G(t - tau) and
 * U_tau(t) = exp(i (delta_phi(t - tau) + w_s tau)):
 *
 *   A_x  = F{ G_tau Im[psi_n U_tau] }        A_p  = F{ G_tau Re[psi_n U_tau] }
 *   A_c1 = F{ G_tau e^{-i delta_phi_tau} psi_n^* }
 *   A_c2 = F{ G_tau e^{+i delta_phi_tau} psi_n }
 *
 *   I = sum_n var_x |A_x|^2 + var_p |A_p|^2 + (|A_c1|^2 + |A_c2|^2) / 8
 *
 * Since |A_x|^2 + |A_p|^2 = (|A_c1|^2 + |A_c2|^2) / 2, a vacuum mode adds
 * (|A_x|^2 + |A_p|^2) / 2, and a complete vacuum basis adds the constant
 * sum |G|^2 dt / 2 at every pixel.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gate.hpp"
#include "grid.hpp"
#include "parallel.hpp"
#include "states.hpp"

namespace mmgfrog {

enum class SpectrogramKind { raw, vacuum, vacuum_subtracted };

inline const char* to_string(SpectrogramKind k) {
  switch (k) {
    case SpectrogramKind::raw: return "raw";
    case SpectrogramKind::vacuum: return "vacuum";
    case SpectrogramKind::vacuum_subtracted: return "vacuum_subtracted";
  }
  return "raw";
}

inline SpectrogramKind kind_from_string(const std::string& s) {
  if (s == "raw") return SpectrogramKind::raw;
  if (s == "vacuum") return SpectrogramKind::vacuum;
  if (s == "vacuum_subtracted") return SpectrogramKind::vacuum_subtracted;
  throw std::invalid_argument("unknown spectrogram kind '" + s + "'");
}

/// Intensity over (omega, tau), stored row-major with omega as the row.
struct Spectrogram {
  SpectrogramGrid grid;
  RVec values;
  SpectrogramKind kind = SpectrogramKind::raw;
  /// Peak divided out by normalize_peak(); 1 when values are unnormalized.
  double normalization = 1.0;

  std::size_t n_w() const { return grid.freq.n_w(); }
  std::size_t n_tau() const { return grid.delay.n_tau(); }
  double& at(std::size_t k, std::size_t m) { return values[k * n_tau() + m]; }
  double at(std::size_t k, std::size_t m) const { return values[k * n_tau() + m]; }

  double max() const { return *std::max_element(values.begin(), values.end()); }
  double min() const { return *std::min_element(values.begin(), values.end()); }
  double max_abs() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }

  /// Divides by the peak |value| and records it.
  void normalize_peak() {
    const double p = max_abs();
    if (!(p > 0.0)) throw std::invalid_argument("cannot peak-normalize an all-zero spectrogram");
    for (auto& v : values) v /= p;
    normalization *= p;
  }
};

inline void require_same_grid(const Spectrogram& a, const Spectrogram& b) {
  if (!(a.grid == b.grid)) throw GridMismatch("spectrograms are on different grids");
  if (a.values.size() != b.values.size()) throw GridMismatch("spectrogram value counts differ");
}

enum Term : std::size_t { term_x = 0, term_p = 1, term_c1 = 2, term_c2 = 3 };

/// Per mode and term, a complex field stored delay-major: index m * n_w + k.
struct TermFields {
  SpectrogramGrid grid;
  std::vector<std::array<CVec, 4>> modes;

  cplx& at(std::size_t n, Term t, std::size_t k, std::size_t m) { return modes[n][t][m * grid.freq.n_w() + k]; }
  cplx at(std::size_t n, Term t, std::size_t k, std::size_t m) const { return modes[n][t][m * grid.freq.n_w() + k]; }
};

/**
 * Gate tables for every delay plus the transform; shared by synthesis and
 * the retrieval gradient. Delay-major buffers are length n_tau * n_t.
 */
class ForwardModel {
 public:
  ForwardModel(const GateFunctions& gate, const DelayGrid& delays)
      : grid_(SpectrogramGrid::make(gate.grid, delays, gate.w_s)),
        w_s_(gate.w_s),
        xf_(grid_.time, grid_.freq) {
    const std::size_t n = grid_.time.n_t(), nt = delays.n_tau();
    gs_.resize(n * nt);
    u_.resize(n * nt);
    ph_.resize(n * nt);
    for (std::size_t m = 0; m < nt; ++m) {
      const long s = delays.shift_samples(m, grid_.time);
      const auto g = roll<cplx>(gate.g, s);
      const auto d = roll<double>(gate.delta_phi, s);
      const double wt = w_s_ * delays.tau(m);
      for (std::size_t j = 0; j < n; ++j) {
        gs_[m * n + j] = g[j];
        u_[m * n + j] = std::polar(1.0, d[j] + wt);
        ph_[m * n + j] = std::polar(1.0, d[j]);
      }
    }
    double e = 0.0;
    for (const auto& v : gate.g) e += std::norm(v);
    vacuum_level_ = 0.5 * e * grid_.time.dt();
    cplx s = 0.0;
    for (const auto& v : gate.g) s += v;
    closed_form_level_ = 0.25 * std::norm(s * grid_.time.dt());
    double lb = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double col = 0.0;
      for (std::size_t m = 0; m < nt; ++m) col += std::norm(gs_[m * n + j]);
      lb = std::max(lb, col);
    }
    lipschitz_ = grid_.time.dt() * grid_.time.dt() * static_cast<double>(n) * lb;
  }

  const SpectrogramGrid& grid() const { return grid_; }
  std::size_t n_t() const { return grid_.time.n_t(); }
  std::size_t n_tau() const { return grid_.delay.n_tau(); }
  std::size_t n_pix() const { return n_t() * n_tau(); }
  double w_s() const { return w_s_; }
  /// sum |G|^2 dt / 2: the per-pixel intensity of a complete vacuum basis.
  double vacuum_level() const { return vacuum_level_; }
  /// |sum G dt|^2 / 4.
  double closed_form_level() const { return closed_form_level_; }
  /// Upper bound on the operator norm squared of psi -> (A_x, A_p).
  double lipschitz() const { return lipschitz_; }

  /// A_x and A_p of one mode, delay-major.
  void quadrature_fields(std::span<const cplx> psi, std::span<cplx> ax, std::span<cplx> ap) const {
    check(psi.size(), ax.size(), ap.size());
    const std::size_t n = n_t();
    parallel_for(n_tau(), [&](std::size_t m) {
      cplx* x = ax.data() + m * n;
      cplx* p = ap.data() + m * n;
      for (std::size_t j = 0; j < n; ++j) {
        const cplx z = psi[j] * u_[m * n + j];
        x[j] = gs_[m * n + j] * z.imag();
        p[j] = gs_[m * n + j] * z.real();
      }
      xf_.forward({x, n});
      xf_.forward({p, n});
    });
  }

  /// A_c1 and A_c2 of one mode, delay-major.
  void conjugate_fields(std::span<const cplx> psi, std::span<cplx> c1, std::span<cplx> c2) const {
    check(psi.size(), c1.size(), c2.size());
    const std::size_t n = n_t();
    parallel_for(n_tau(), [&](std::size_t m) {
      cplx* a = c1.data() + m * n;
      cplx* b = c2.data() + m * n;
      for (std::size_t j = 0; j < n; ++j) {
        const cplx gp = gs_[m * n + j], e = ph_[m * n + j];
        a[j] = gp * std::conj(e) * std::conj(psi[j]);
        b[j] = gp * e * psi[j];
      }
      xf_.forward({a, n});
      xf_.forward({b, n});
    });
  }

  /**
   * Given cotangents dx = dL/dA_x^*, dp = dL/dA_p^* of a real functional L,
   * writes dL/dpsi^* (Wirtinger). Inputs are consumed as scratch.
   */
  void quadrature_adjoint(std::span<cplx> dx, std::span<cplx> dp, std::span<cplx> grad) const {
    check(grad.size(), dx.size(), dp.size());
    const std::size_t n = n_t();
    parallel_for(n_tau(), [&](std::size_t m) {
      cplx* x = dx.data() + m * n;
      cplx* p = dp.data() + m * n;
      xf_.adjoint({x, n});
      xf_.adjoint({p, n});
      for (std::size_t j = 0; j < n; ++j) {
        const cplx cg = std::conj(gs_[m * n + j]), cu = std::conj(u_[m * n + j]);
        x[j] = cplx(0.0, (cg * x[j]).real()) * cu;
        p[j] = (cg * p[j]).real() * cu;
      }
    });
    // reduce over delays in index order
    std::fill(grad.begin(), grad.end(), cplx(0.0));
    for (std::size_t m = 0; m < n_tau(); ++m)
      for (std::size_t j = 0; j < n; ++j) grad[j] += dx[m * n + j] + dp[m * n + j];
  }

  /// Converts a delay-major real array to a Spectrogram (omega-major).
  Spectrogram to_spectrogram(std::span<const double> delay_major, SpectrogramKind kind) const {
    Spectrogram s;
    s.grid = grid_;
    s.kind = kind;
    s.values.resize(n_pix());
    const std::size_t n = n_t(), nt = n_tau();
    for (std::size_t m = 0; m < nt; ++m)
      for (std::size_t k = 0; k < n; ++k) s.values[k * nt + m] = delay_major[m * n + k];
    return s;
  }

  RVec to_delay_major(const Spectrogram& s) const {
    if (!(s.grid == grid_)) throw GridMismatch("spectrogram grid does not match the gate and delay grids");
    RVec out(n_pix());
    const std::size_t n = n_t(), nt = n_tau();
    for (std::size_t m = 0; m < nt; ++m)
      for (std::size_t k = 0; k < n; ++k) out[m * n + k] = s.values[k * nt + m];
    return out;
  }

 private:
  void check(std::size_t psi, std::size_t a, std::size_t b) const {
    if (psi != n_t()) throw GridMismatch("mode length does not match the time grid");
    if (a != n_pix() || b != n_pix()) throw GridMismatch("field buffer has the wrong size");
  }

  SpectrogramGrid grid_;
  double w_s_;
  SpectralTransform xf_;
  CVec gs_, u_, ph_;
  double vacuum_level_ = 0.0;
  double closed_form_level_ = 0.0;
  double lipschitz_ = 0.0;
};

inline void check_state_gate(const GaussianStateSpec& state, const ForwardModel& fm) {
  for (std::size_t n = 0; n < state.n_modes(); ++n)
    if (state.basis.modes[n].samples.size() != fm.n_t())
      throw GridMismatch("mode " + std::to_string(n) + " is not on the gate time grid");
  if (std::abs(state.w_s - fm.w_s()) > 1e-12 * std::max(1.0, std::abs(state.w_s)))
    throw GridMismatch("state and gate disagree on the carrier frequency");
}

inline TermFields synthesize_term_fields(const GaussianStateSpec& state, const ForwardModel& fm) {
  check_state_gate(state, fm);
  TermFields tf;
  tf.grid = fm.grid();
  tf.modes.resize(state.n_modes());
  for (std::size_t n = 0; n < state.n_modes(); ++n) {
    for (auto& f : tf.modes[n]) f.assign(fm.n_pix(), cplx(0.0));
    const auto& psi = state.basis.modes[n].samples;
    fm.quadrature_fields(psi, tf.modes[n][term_x], tf.modes[n][term_p]);
    fm.conjugate_fields(psi, tf.modes[n][term_c1], tf.modes[n][term_c2]);
  }
  return tf;
}

inline TermFields synthesize_term_fields(const GaussianStateSpec& state, const GateFunctions& gate,
                                         const DelayGrid& delays) {
  return synthesize_term_fields(state, ForwardModel(gate, delays));
}

/**
 * Weighted sum of the term fields, modes ascending and terms x, p, c1, c2.
 * With the complement flag the unoccupied part of a complete basis is added
 * as vacuum_level - sum_n (|A_x|^2 + |A_p|^2) / 2.
 */
inline Spectrogram synthesize_spectrogram(const GaussianStateSpec& state, const ForwardModel& fm,
                                          bool include_vacuum_complement) {
  for (std::size_t n = 0; n < state.n_modes(); ++n)
    if (!(state.var_x[n] > 0.0) || !(state.var_p[n] > 0.0))
      throw StateError("variances must be positive to act as spectrogram weights");
  const auto tf = synthesize_term_fields(state, fm);
  RVec acc(fm.n_pix(), include_vacuum_complement ? fm.vacuum_level() : 0.0);
  for (std::size_t n = 0; n < state.n_modes(); ++n) {
    const auto& f = tf.modes[n];
    const double vx = state.var_x[n], vp = state.var_p[n];
    for (std::size_t i = 0; i < acc.size(); ++i) {
      const double x2 = std::norm(f[term_x][i]), p2 = std::norm(f[term_p][i]);
      const double c = 0.125 * (std::norm(f[term_c1][i]) + std::norm(f[term_c2][i]));
      acc[i] += vx * x2 + vp * p2 + c;
      if (include_vacuum_complement) acc[i] -= 0.5 * (x2 + p2);
    }
  }
  return fm.to_spectrogram(acc, SpectrogramKind::raw);
}

inline Spectrogram synthesize_spectrogram(const GaussianStateSpec& state, const GateFunctions& gate,
                                          const DelayGrid& delays, bool include_vacuum_complement) {
  return synthesize_spectrogram(state, ForwardModel(gate, delays), include_vacuum_complement);
}

/// Constant spectrogram at the complete-basis vacuum level sum |G|^2 dt / 2.
inline Spectrogram vacuum_spectrogram(const ForwardModel& fm) {
  Spectrogram s;
  s.grid = fm.grid();
  s.kind = SpectrogramKind::vacuum;
  s.values.assign(fm.n_pix(), fm.vacuum_level());
  return s;
}

inline Spectrogram vacuum_spectrogram(const GateFunctions& gate, const DelayGrid& delays) {
  return vacuum_spectrogram(ForwardModel(gate, delays));
}

/// The alternative closed form |sum G dt|^2 / 4; kept for comparison only.
inline double closed_form_vacuum_level(const GateFunctions& gate) {
  cplx s = 0.0;
  for (const auto& v : gate.g) s += v;
  return 0.25 * std::norm(s * gate.grid.dt());
}

inline Spectrogram vacuum_subtract(const Spectrogram& raw, const Spectrogram& vac) {
  if (raw.kind != SpectrogramKind::raw) throw std::invalid_argument("vacuum_subtract needs a raw spectrogram");
  if (vac.kind != SpectrogramKind::vacuum) throw std::invalid_argument("vacuum_subtract needs a vacuum reference");
  require_same_grid(raw, vac);
  if (raw.normalization != vac.normalization)
    throw std::invalid_argument("raw and vacuum spectrograms carry different normalizations");
  Spectrogram out = raw;
  out.kind = SpectrogramKind::vacuum_subtracted;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= vac.values[i];
  return out;
}

/// Vacuum-subtracted intensity computed directly as sum (v - 1/4) |A|^2,
/// which avoids cancelling against the large vacuum level.
inline Spectrogram synthesize_vacuum_subtracted(const GaussianStateSpec& state, const ForwardModel& fm) {
  check_state_gate(state, fm);
  RVec acc(fm.n_pix(), 0.0);
  CVec ax(fm.n_pix()), ap(fm.n_pix());
  for (std::size_t n = 0; n < state.n_modes(); ++n) {
    fm.quadrature_fields(state.basis.modes[n].samples, ax, ap);
    const double wx = state.var_x[n] - kVacuumVariance, wp = state.var_p[n] - kVacuumVariance;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += wx * std::norm(ax[i]) + wp * std::norm(ap[i]);
  }
  return fm.to_spectrogram(acc, SpectrogramKind::vacuum_subtracted);
}

}  // namespace mmgfrog
