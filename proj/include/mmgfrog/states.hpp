#pragma once
/**
 * @file states.hpp
 * @brief Multimode Gaussian input states: principal temporal modes, their
 * quadrature variances and squeezing angles.
 *
 * Quadratures follow x = (a + a^dag)/2, p = (a - a^dag)/(2i), so the vacuum
 * variance is 1/4. Mode samples are the full complex field on the time grid;
 * a slowly varying envelope is placed on the state carrier with
 * place_on_carrier().
 */

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grid.hpp"

namespace mmgfrog {

/// Raised for states that break a physical or numerical invariant.
class StateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kVacuumVariance = 0.25;

struct TemporalMode {
  CVec samples;
  int label = 0;
};

/// <a|b> = sum conj(a) b dt
inline cplx overlap(const TimeGrid& tg, std::span<const cplx> a, std::span<const cplx> b) {
  if (a.size() != b.size() || a.size() != tg.n_t()) throw GridMismatch("overlap of vectors on different grids");
  cplx s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += std::conj(a[j]) * b[j];
  return s * tg.dt();
}

inline double mode_norm(const TimeGrid& tg, std::span<const cplx> a) { return std::sqrt(energy(tg, a)); }

inline void normalize(const TimeGrid& tg, CVec& a) {
  const double n = mode_norm(tg, a);
  if (!(n > 0.0)) throw StateError("cannot normalize a zero mode");
  for (auto& v : a) v /= n;
}

struct ModeBasis {
  std::vector<TemporalMode> modes;

  std::size_t size() const { return modes.size(); }

  /// Gram matrix G[m][n] = <psi_m | psi_n>.
  std::vector<std::vector<cplx>> gram(const TimeGrid& tg) const {
    std::vector<std::vector<cplx>> g(size(), std::vector<cplx>(size()));
    for (std::size_t m = 0; m < size(); ++m)
      for (std::size_t n = 0; n < size(); ++n) g[m][n] = overlap(tg, modes[m].samples, modes[n].samples);
    return g;
  }

  /// max |G - I| over all entries.
  double orthonormality_error(const TimeGrid& tg) const {
    double worst = 0.0;
    const auto g = gram(tg);
    for (std::size_t m = 0; m < size(); ++m)
      for (std::size_t n = 0; n < size(); ++n) worst = std::max(worst, std::abs(g[m][n] - (m == n ? 1.0 : 0.0)));
    return worst;
  }
};

struct GaussianStateSpec {
  ModeBasis basis;
  RVec var_x;
  RVec var_p;
  RVec angle;  // radians; rotation of the quadrature frame, absorbed as exp(i angle)
  double w_s = 0.0;

  std::size_t n_modes() const { return basis.size(); }

  /// Checks variances, Heisenberg bound and orthonormality.
  void validate(const TimeGrid& tg, double ortho_tol = 1e-8) const {
    const std::size_t m = basis.size();
    if (var_x.size() != m || var_p.size() != m || angle.size() != m)
      throw StateError("per-mode arrays must match the number of modes");
    for (std::size_t n = 0; n < m; ++n) {
      if (basis.modes[n].samples.size() != tg.n_t()) throw GridMismatch("mode " + std::to_string(n) + " has wrong length");
      if (!(var_x[n] > 0.0) || !(var_p[n] > 0.0))
        throw StateError("mode " + std::to_string(n) + ": variances must be positive");
      if (var_x[n] * var_p[n] < 1.0 / 16.0 - 1e-12)
        throw StateError("mode " + std::to_string(n) + ": variances violate the uncertainty bound var_x var_p >= 1/16");
    }
    if (m > 0 && basis.orthonormality_error(tg) > ortho_tol) throw StateError("mode basis is not orthonormal");
  }
};

/// Squeezing in dB (positive = below vacuum) to quadrature variance.
inline double squeezing_db_to_variance(double db) { return kVacuumVariance * std::pow(10.0, -db / 10.0); }

inline double variance_to_squeezing_db(double var) { return -10.0 * std::log10(var / kVacuumVariance); }

/// Normalized Hermite function h_n(x) exp(-x^2/2) evaluated by the stable
/// three-term recurrence (no factorials, no overflow up to high orders).
inline double hermite_function(int order, double x) {
  double h_prev = 0.0;
  double h = std::pow(std::numbers::pi, -0.25) * std::exp(-0.5 * x * x);
  for (int k = 0; k < order; ++k) {
    const double next = std::sqrt(2.0 / (k + 1.0)) * x * h - std::sqrt(static_cast<double>(k) / (k + 1.0)) * h_prev;
    h_prev = h;
    h = next;
  }
  return h;
}

inline constexpr int kMaxHermiteOrder = 20;

/**
 * Chirped Hermite-Gaussian envelope
 *   psi(t) ~ H_n(t/t0) exp(-t^2 / 2 t0^2) exp(i chirp t^2 / 2 t0^2),
 * normalized to unit norm on the grid.
 */
inline TemporalMode hermite_gaussian_mode(const TimeGrid& tg, int order, double t0_fs, double chirp,
                                          int max_order = kMaxHermiteOrder) {
  if (order < 0 || order > max_order) throw StateError("Hermite-Gaussian order out of range: " + std::to_string(order));
  if (!(t0_fs > 4.0 * tg.dt())) throw StateError("mode duration t0 under-resolved: need t0 > 4 dt");
  TemporalMode mode;
  mode.label = order;
  mode.samples.resize(tg.n_t());
  for (std::size_t j = 0; j < tg.n_t(); ++j) {
    const double x = tg.time(j) / t0_fs;
    mode.samples[j] = hermite_function(order, x) / std::sqrt(t0_fs) * std::polar(1.0, 0.5 * chirp * x * x);
  }
  normalize(tg, mode.samples);
  return mode;
}

/// Multiplies an envelope by exp(i w_s t).
inline TemporalMode place_on_carrier(const TimeGrid& tg, TemporalMode mode, double w_s) {
  if (w_s == 0.0) return mode;
  for (std::size_t j = 0; j < tg.n_t(); ++j) mode.samples[j] *= std::polar(1.0, w_s * tg.time(j));
  return mode;
}

/// Inverse of place_on_carrier.
inline TemporalMode strip_carrier(const TimeGrid& tg, TemporalMode mode, double w_s) {
  return place_on_carrier(tg, std::move(mode), -w_s);
}

/// RMS duration of |psi|^2 about its centroid.
inline double rms_duration(const TimeGrid& tg, std::span<const cplx> s) {
  double w = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double p = std::norm(s[j]), t = tg.time(j);
    w += p;
    m1 += p * t;
    m2 += p * t * t;
  }
  if (!(w > 0.0)) return 0.0;
  m1 /= w;
  return std::sqrt(std::max(0.0, m2 / w - m1 * m1));
}

/// Window check: the time span must be at least six times the longest mode.
inline void check_window(const TimeGrid& tg, const ModeBasis& basis, double factor = 6.0) {
  for (const auto& m : basis.modes) {
    const double d = rms_duration(tg, m.samples);
    if (factor * d > tg.span())
      throw StateError("time window " + std::to_string(tg.span()) + " fs is shorter than " + std::to_string(factor) +
                       "x the mode duration " + std::to_string(d) + " fs");
  }
}

/// Folds each squeezing angle into its mode as exp(i angle) and zeroes the angles.
inline GaussianStateSpec apply_squeezing_angle(GaussianStateSpec state) {
  for (std::size_t n = 0; n < state.n_modes(); ++n) {
    if (state.angle[n] != 0.0) {
      const cplx rot = std::polar(1.0, state.angle[n]);
      for (auto& v : state.basis.modes[n].samples) v *= rot;
    }
    state.angle[n] = 0.0;
  }
  return state;
}

/// Pure squeezed state on chirped Hermite-Gaussian modes of orders 0..n-1.
inline GaussianStateSpec hermite_gaussian_state(const TimeGrid& tg, std::span<const double> squeezing_db, double t0_fs,
                                                double chirp, double w_s) {
  GaussianStateSpec st;
  st.w_s = w_s;
  for (std::size_t n = 0; n < squeezing_db.size(); ++n) {
    st.basis.modes.push_back(place_on_carrier(tg, hermite_gaussian_mode(tg, static_cast<int>(n), t0_fs, chirp), w_s));
    st.var_x.push_back(squeezing_db_to_variance(squeezing_db[n]));
    st.var_p.push_back(squeezing_db_to_variance(-squeezing_db[n]));
    st.angle.push_back(0.0);
  }
  return st;
}

}  // namespace mmgfrog
