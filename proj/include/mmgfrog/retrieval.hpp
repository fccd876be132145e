#pragma once
/**
 * @file retrieval.hpp
 * @brief Recovery of mode shapes, quadrature variances and squeezing angles
 * from a measured spectrogram and a known gate.
 *
 * Each iteration projects the model onto the data (amplitude rescaling of
 * the vacuum-completed intensity), refits the variances multiplicatively,
 * moves the modes along the gradient of the amplitude misfit and restores
 * orthonormality by Gram-Schmidt.
 */

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <deque>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "forward.hpp"
#include "random.hpp"
#include "states.hpp"

namespace mmgfrog {

class RetrievalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss is undefined when the reference has no energy under the mask.
class UndefinedLoss : public RetrievalError {
 public:
  using RetrievalError::RetrievalError;
};

enum class StepSchedule {
  fixed,        // projection + gradient step on the field misfit with a constant step
  backtracking, // steepest descent on the amplitude misfit with Armijo backtracking
  lbfgs         // limited-memory quasi-Newton on the amplitude misfit with Armijo backtracking
};

inline const char* to_string(StepSchedule s) {
  switch (s) {
    case StepSchedule::fixed: return "fixed";
    case StepSchedule::backtracking: return "backtracking";
    case StepSchedule::lbfgs: return "lbfgs";
  }
  return "lbfgs";
}

inline StepSchedule schedule_from_string(const std::string& s) {
  if (s == "fixed") return StepSchedule::fixed;
  if (s == "backtracking") return StepSchedule::backtracking;
  if (s == "lbfgs") return StepSchedule::lbfgs;
  throw std::invalid_argument("unknown step schedule '" + s + "'");
}

struct RetrievalConfig {
  std::size_t n_modes = 4;
  std::size_t max_iters = 10000;
  /// Multiplies the step 1 / (L max|v - 1/4|), L bounding the field operator norm.
  double step_size = 1.0;
  StepSchedule step_schedule = StepSchedule::lbfgs;
  std::uint64_t seed = 0;
  /// Per-pixel loss weights in spectrogram layout; 0 masks a pixel out.
  std::optional<RVec> mask;
  double convergence_tol = 1e-7;
  std::size_t convergence_window = 200;
  double success_loss_threshold = 0.10;
  double init_perturbation = 1e-3;
  /// Mode duration of the initial guess; <= 0 estimates it from the data.
  double init_t0 = 0.0;
  std::size_t variance_refit_iters = 20;
  std::size_t lbfgs_memory = 10;
  /// Stop once the loss reaches this multiple of the loss expected from
  /// noise alone (0 disables). Needs noise_sigma or masked-out pixels.
  double noise_floor_stop = 0.0;
  /// Per-pixel noise standard deviation; estimated off the mask if unset.
  std::optional<double> noise_sigma;

  void validate() const {
    if (n_modes < 1) throw std::invalid_argument("retrieval.n_modes must be >= 1");
    if (max_iters < 1) throw std::invalid_argument("retrieval.max_iters must be >= 1");
    if (!(success_loss_threshold > 0.0 && success_loss_threshold <= 1.0))
      throw std::invalid_argument("retrieval.success_loss_threshold must lie in (0, 1]");
    if (!(step_size > 0.0)) throw std::invalid_argument("retrieval.step_size must be positive");
    if (variance_refit_iters < 1) throw std::invalid_argument("retrieval.variance_refit_iters must be >= 1");
    if (!(noise_floor_stop >= 0.0)) throw std::invalid_argument("retrieval.noise_floor_stop must be >= 0");
    if (noise_sigma && !(*noise_sigma >= 0.0)) throw std::invalid_argument("retrieval.noise_sigma must be >= 0");
  }
};

struct RetrievalResult {
  ModeBasis basis;
  RVec var_x;
  RVec var_p;
  RVec angles;
  RVec loss_trace;
  double final_loss = 1.0;
  bool converged = false;
  bool stalled = false;  // loss change fell below convergence_tol
  bool noise_limited = false;  // stopped at the noise floor
  double noise_floor = 0.0;    // loss expected from noise alone, 0 if unknown
  std::size_t iterations_run = 0;
  std::size_t reseeds = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  GaussianStateSpec as_state(double w_s) const {
    GaussianStateSpec s;
    s.basis = basis;
    s.var_x = var_x;
    s.var_p = var_p;
    s.angle.assign(var_x.size(), 0.0);
    s.w_s = w_s;
    return s;
  }
};

// ---------------------------------------------------------------------------
// loss

/// sqrt(sum w (meas - syn)^2) / sqrt(sum w meas^2), over pixels with w > 0.
inline double loss(std::span<const double> measured, std::span<const double> synthesized,
                   std::span<const double> weights = {}) {
  if (measured.size() != synthesized.size()) throw GridMismatch("loss: spectrogram sizes differ");
  if (!weights.empty() && weights.size() != measured.size()) throw GridMismatch("loss: mask size differs");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < measured.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (w == 0.0) continue;
    const double d = measured[i] - synthesized[i];
    num += w * d * d;
    den += w * measured[i] * measured[i];
  }
  if (!(den > 0.0)) throw UndefinedLoss("loss undefined: measured spectrogram is zero under the mask");
  return std::sqrt(num / den);
}

inline double loss(const Spectrogram& measured, const Spectrogram& synthesized, const RVec* mask = nullptr) {
  require_same_grid(measured, synthesized);
  return loss(measured.values, synthesized.values, mask ? std::span<const double>(*mask) : std::span<const double>{});
}

// ---------------------------------------------------------------------------
// mode bookkeeping

inline double mode_fidelity(const TimeGrid& tg, std::span<const cplx> truth, std::span<const cplx> recovered) {
  return std::norm(overlap(tg, truth, recovered));
}

/// Variance-weighted distance of a mode from vacuum; orders Gram-Schmidt.
inline double squeezing_strength(double vx, double vp) { return std::abs(vx + vp - 2.0 * kVacuumVariance); }

/// Source of replacement modes when Gram-Schmidt meets a dependent mode.
struct Reseeder {
  double t0 = 30.0;
  double w_s = 0.0;
  int next_order = 0;

  CVec next(const TimeGrid& tg) {
    const int order = std::min(next_order++, kMaxHermiteOrder);
    return place_on_carrier(tg, hermite_gaussian_mode(tg, order, t0, 0.0), w_s).samples;
  }
};

struct OrthoReport {
  std::size_t reseeded = 0;
  std::vector<std::string> warnings;
};

/**
 * Modified Gram-Schmidt in descending squeezing strength (ties keep index
 * order). A mode whose residual norm falls below 1e-6 of its input norm is
 * replaced from `reseed` and orthogonalized again.
 */
inline OrthoReport orthonormalize(GaussianStateSpec& st, const TimeGrid& tg, Reseeder& reseed) {
  const std::size_t m = st.n_modes();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return squeezing_strength(st.var_x[a], st.var_p[a]) > squeezing_strength(st.var_x[b], st.var_p[b]);
  });
  OrthoReport rep;
  std::vector<std::size_t> done;
  for (std::size_t i : order) {
    auto& v = st.basis.modes[i].samples;
    for (int attempt = 0; attempt < 4; ++attempt) {
      const double before = mode_norm(tg, v);
      for (int pass = 0; pass < 2; ++pass)  // second pass restores orthogonality lost to rounding
        for (std::size_t j : done) {
          const auto& u = st.basis.modes[j].samples;
          const cplx c = overlap(tg, u, v);
          for (std::size_t k = 0; k < v.size(); ++k) v[k] -= c * u[k];
        }
      const double after = mode_norm(tg, v);
      if (std::isfinite(after) && after > 1e-6 * before && after > 0.0) {
        for (auto& x : v) x /= after;
        break;
      }
      v = reseed.next(tg);
      ++rep.reseeded;
      rep.warnings.push_back("mode " + std::to_string(i) + " was linearly dependent and has been reseeded");
    }
    done.push_back(i);
  }
  return rep;
}

struct ModeMatch {
  std::vector<std::size_t> permutation;  // truth index -> recovered index
  RVec fidelity;                         // per truth mode
  RVec phase;                            // arg <truth | recovered> per truth mode
};

/// Greedy assignment by descending fidelity, no reuse.
inline ModeMatch match_modes(const TimeGrid& tg, const ModeBasis& truth, const ModeBasis& recovered) {
  const std::size_t m = truth.size();
  if (recovered.size() != m) throw std::invalid_argument("match_modes needs equal mode counts");
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      pairs.emplace_back(mode_fidelity(tg, truth.modes[i].samples, recovered.modes[j].samples), i, j);
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
  ModeMatch mm;
  mm.permutation.assign(m, m);
  mm.fidelity.assign(m, 0.0);
  mm.phase.assign(m, 0.0);
  std::vector<bool> used(m, false);
  for (const auto& [f, i, j] : pairs) {
    if (mm.permutation[i] != m || used[j]) continue;
    mm.permutation[i] = j;
    used[j] = true;
    mm.fidelity[i] = f;
    mm.phase[i] = std::arg(overlap(tg, truth.modes[i].samples, recovered.modes[j].samples));
  }
  return mm;
}

inline double wrap_mod_pi(double a) {
  const double pi = std::numbers::pi;
  a = std::fmod(a, pi);
  if (a < 0) a += pi;
  return a;
}

/// Distance between two angles taken modulo pi.
inline double angle_distance_mod_pi(double a, double b) {
  const double d = wrap_mod_pi(a - b);
  return std::min(d, std::numbers::pi - d);
}

struct SqueezingAngles {
  RVec angle;       // per mode, in [0, pi)
  RVec relative;    // angle - angle[0], in [0, pi)
  RVec var_x;       // canonical variances, var_x <= var_p
  RVec var_p;
  std::vector<std::array<double, 4>> covariance;  // row-major 2x2 per mode
  std::vector<bool> ambiguous;
  bool single_mode = false;  // angle meaningful only against the gate phase
};

/**
 * Puts every mode in the frame where x is the squeezed quadrature (using
 * (psi, vx, vp) ~ (i psi, vp, vx)) and reads its phase. Without a reference
 * the phase of the largest-magnitude sample defines the angle; with one,
 * the angle is arg <reference_n | psi_n>.
 */
inline SqueezingAngles extract_squeezing_angles(const TimeGrid& tg, const ModeBasis& basis, std::span<const double> var_x,
                                                std::span<const double> var_p, const ModeBasis* reference = nullptr) {
  const std::size_t m = basis.size();
  SqueezingAngles out;
  out.single_mode = (m == 1);
  for (std::size_t n = 0; n < m; ++n) {
    CVec psi = basis.modes[n].samples;
    double vx = var_x[n], vp = var_p[n];
    if (vx > vp) {
      for (auto& v : psi) v *= cplx(0.0, 1.0);
      std::swap(vx, vp);
    }
    double phi = 0.0;
    bool amb = false;
    if (reference) {
      const cplx ov = overlap(tg, reference->modes[n].samples, psi);
      phi = std::arg(ov);
      amb = std::abs(ov) < 0.5;
    } else {
      std::size_t best = 0;
      double mx = 0.0, second = 0.0;
      for (std::size_t j = 0; j < psi.size(); ++j) {
        const double a = std::abs(psi[j]);
        if (a > mx) {
          mx = a;
          best = j;
        }
      }
      for (std::size_t j = 0; j < psi.size(); ++j)
        if (j + 1 < best || j > best + 1) second = std::max(second, std::abs(psi[j]));
      phi = std::arg(psi[best]);
      amb = second > 0.999 * mx;  // flat or doubly peaked mode
    }
    phi = wrap_mod_pi(phi);
    out.angle.push_back(phi);
    out.var_x.push_back(vx);
    out.var_p.push_back(vp);
    out.ambiguous.push_back(amb);
    // quadrature frame rotated by phi: R diag(vx, vp) R^T
    const double c = std::cos(phi), s = std::sin(phi);
    out.covariance.push_back({c * c * vx + s * s * vp, c * s * (vx - vp), c * s * (vx - vp), s * s * vx + c * c * vp});
  }
  for (std::size_t n = 0; n < m; ++n) out.relative.push_back(wrap_mod_pi(out.angle[n] - out.angle[0]));
  return out;
}

// ---------------------------------------------------------------------------
// measured data in the model's layout

/// Robust (median absolute deviation) noise estimate over pixels with mask == 0.
inline std::optional<double> estimate_noise_sigma(std::span<const double> values, std::span<const double> mask) {
  if (values.size() != mask.size()) throw GridMismatch("mask size does not match the spectrogram");
  RVec off;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (mask[i] == 0.0) off.push_back(values[i]);
  if (off.size() < 64) return std::nullopt;
  auto mid = off.begin() + static_cast<long>(off.size() / 2);
  std::nth_element(off.begin(), mid, off.end());
  const double med = *mid;
  for (auto& v : off) v = std::abs(v - med);
  std::nth_element(off.begin(), mid, off.end());
  return *mid / 0.6744897501960817;
}

struct MeasuredData {
  RVec vacsub;   // delay-major vacuum-subtracted intensity
  RVec full;     // vacsub + vacuum level
  RVec weights;  // delay-major loss weights
};

inline MeasuredData prepare_measurement(const Spectrogram& measured, const ForwardModel& fm, const RVec* mask) {
  MeasuredData d;
  if (measured.kind == SpectrogramKind::vacuum)
    throw std::invalid_argument("retrieval input must be a raw or vacuum-subtracted spectrogram");
  if (measured.normalization != 1.0)
    throw std::invalid_argument("retrieval input must be unnormalized (normalization constant 1)");
  d.vacsub = fm.to_delay_major(measured);
  if (measured.kind == SpectrogramKind::raw)
    for (auto& v : d.vacsub) v -= fm.vacuum_level();
  d.full = d.vacsub;
  for (auto& v : d.full) v += fm.vacuum_level();
  if (mask) {
    if (mask->size() != measured.values.size()) throw GridMismatch("mask size does not match the spectrogram");
    Spectrogram m = measured;
    m.values = *mask;
    d.weights = fm.to_delay_major(m);
  } else {
    d.weights.assign(d.vacsub.size(), 1.0);
  }
  for (double w : d.weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("mask weights must be finite and nonnegative");
  double den = 0.0;
  for (std::size_t i = 0; i < d.vacsub.size(); ++i) den += d.weights[i] * d.vacsub[i] * d.vacsub[i];
  if (!(den > 0.0) && mask) throw UndefinedLoss("measured spectrogram is zero under the mask");
  return d;
}

// ---------------------------------------------------------------------------
// initialization

/// RMS width of the delay marginal of |I_vacsub|, minus the gate contribution.
inline double estimate_mode_t0(const MeasuredData& d, const ForwardModel& fm, const GateFunctions& gate, std::size_t n_modes) {
  const std::size_t n = fm.n_t(), nt = fm.n_tau();
  const auto& dg = fm.grid().delay;
  double w = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t m = 0; m < nt; ++m) {
    double col = 0.0;
    for (std::size_t k = 0; k < n; ++k) col += std::abs(d.vacsub[m * n + k]);
    w += col;
    m1 += col * dg.tau(m);
    m2 += col * dg.tau(m) * dg.tau(m);
  }
  const TimeGrid& tg = fm.grid().time;
  const double lo = 4.5 * tg.dt(), hi = tg.span() / 12.0;
  if (!(w > 0.0)) return std::clamp(tg.span() / 16.0, lo, hi);
  m1 /= w;
  const double var_tau = std::max(0.0, m2 / w - m1 * m1);
  // rms width of |G|^2
  double gw = 0.0, g1 = 0.0, g2 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double p = std::norm(gate.g[j]), t = tg.time(j);
    gw += p;
    g1 += p * t;
    g2 += p * t * t;
  }
  g1 /= gw;
  const double var_gate = std::max(0.0, g2 / gw - g1 * g1);
  // a Hermite-Gaussian of order q has <t^2> = (q + 1/2) t0^2; average over the seeds
  const double mean_order = 0.5 * static_cast<double>(n_modes);
  const double t0 = std::sqrt(std::max(var_tau - var_gate, 0.0) / mean_order);
  return std::clamp(t0, lo, hi);
}

inline GaussianStateSpec initialize(const RetrievalConfig& cfg, const MeasuredData& d, const ForwardModel& fm,
                                    const GateFunctions& gate, Reseeder& reseed) {
  const TimeGrid& tg = fm.grid().time;
  const double t0 = cfg.init_t0 > 0.0 ? cfg.init_t0 : estimate_mode_t0(d, fm, gate, cfg.n_modes);
  reseed = Reseeder{t0, fm.w_s(), static_cast<int>(cfg.n_modes)};
  Rng rng(derive_seed(cfg.seed, "init"));
  std::normal_distribution<double> nd;
  GaussianStateSpec st;
  st.w_s = fm.w_s();
  for (std::size_t q = 0; q < cfg.n_modes; ++q) {
    const int order = static_cast<int>(std::min<std::size_t>(q, kMaxHermiteOrder));
    auto mode = place_on_carrier(tg, hermite_gaussian_mode(tg, order, t0, 0.0), fm.w_s());
    double peak = 0.0;
    for (const auto& v : mode.samples) peak = std::max(peak, std::abs(v));
    for (auto& v : mode.samples) {
      const double a = nd(rng), b = nd(rng);
      v += cfg.init_perturbation * peak * cplx(a, b);
    }
    normalize(tg, mode.samples);
    mode.label = static_cast<int>(q);
    st.basis.modes.push_back(std::move(mode));
    st.var_x.push_back(kVacuumVariance);
    st.var_p.push_back(kVacuumVariance);
    st.angle.push_back(0.0);
  }
  orthonormalize(st, tg, reseed);
  return st;
}

// ---------------------------------------------------------------------------
// projection and gradient step

/// Term fields after the data constraint, plus the rescaled remainder of a
/// complete basis (vacuum level minus the occupied modes' vacuum share).
struct Projection {
  TermFields fields;
  RVec complement;  // delay-major
};

/// Intensity sum_n v |A|^2 + (|A_c1|^2 + |A_c2|^2)/8 + complement, delay-major.
inline RVec projected_intensity(const Projection& p, std::span<const double> var_x, std::span<const double> var_p) {
  RVec acc = p.complement;
  for (std::size_t n = 0; n < p.fields.modes.size(); ++n) {
    const auto& f = p.fields.modes[n];
    for (std::size_t i = 0; i < acc.size(); ++i)
      acc[i] += var_x[n] * std::norm(f[term_x][i]) + var_p[n] * std::norm(f[term_p][i]) +
                0.125 * (std::norm(f[term_c1][i]) + std::norm(f[term_c2][i]));
  }
  return acc;
}

/**
 * Rescales every term field at each pixel by sqrt(I_meas / I_syn), where
 * I_meas is the vacuum-completed measurement; the complement is rescaled by
 * the same ratio so the projected intensity equals I_meas. Pixels with zero
 * weight or with I_syn below 1e-12 of the peak are left untouched.
 */
inline Projection data_projection(const TermFields& tf, std::span<const double> var_x, std::span<const double> var_p,
                                  const MeasuredData& d, const ForwardModel& fm) {
  for (std::size_t n = 0; n < tf.modes.size(); ++n)
    if (!(var_x[n] > 0.0) || !(var_p[n] > 0.0)) throw std::invalid_argument("projection weights must be positive");
  Projection p{tf, RVec(fm.n_pix(), fm.vacuum_level())};
  for (const auto& f : tf.modes)
    for (std::size_t i = 0; i < p.complement.size(); ++i)
      p.complement[i] -= 0.5 * (std::norm(f[term_x][i]) + std::norm(f[term_p][i]));
  const RVec syn = projected_intensity(p, var_x, var_p);
  const double peak = *std::max_element(syn.begin(), syn.end());
  RVec scale(syn.size(), 1.0);
  for (std::size_t i = 0; i < syn.size(); ++i) {
    if (d.weights[i] == 0.0 || !(syn[i] > 1e-12 * peak)) continue;
    const double ratio = std::max(d.full[i], 0.0) / syn[i];
    scale[i] = std::sqrt(ratio);
    p.complement[i] *= ratio;
  }
  for (auto& f : p.fields.modes)
    for (auto& term : f)
      for (std::size_t i = 0; i < term.size(); ++i) term[i] *= scale[i];
  return p;
}

/// Wirtinger gradient dZ/dpsi_n^* of Z = sum_{k in x,p} |A_proj - A(psi_n)|^2.
inline CVec field_misfit_gradient(std::span<const cplx> psi, const std::array<CVec, 4>& projected, const ForwardModel& fm) {
  CVec ax(fm.n_pix()), ap(fm.n_pix()), g(fm.n_t());
  fm.quadrature_fields(psi, ax, ap);
  for (std::size_t i = 0; i < ax.size(); ++i) {
    ax[i] -= projected[term_x][i];
    ap[i] -= projected[term_p][i];
  }
  fm.quadrature_adjoint(ax, ap, g);
  return g;
}

inline double field_misfit(std::span<const cplx> psi, const std::array<CVec, 4>& projected, const ForwardModel& fm) {
  CVec ax(fm.n_pix()), ap(fm.n_pix());
  fm.quadrature_fields(psi, ax, ap);
  double z = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) z += std::norm(ax[i] - projected[term_x][i]) + std::norm(ap[i] - projected[term_p][i]);
  return z;
}

/// One multiplicative refit of the variances toward the measurement,
/// holding the mode shapes and their vacuum background fixed.
inline void refit_variances(RVec& vx, RVec& vp, const std::vector<RVec>& x2, const std::vector<RVec>& p2,
                            const MeasuredData& d, double vacuum_level, std::size_t sweeps) {
  const std::size_t m = vx.size(), npix = d.full.size();
  RVec bg(npix, vacuum_level);
  for (std::size_t n = 0; n < m; ++n)
    for (std::size_t i = 0; i < npix; ++i) bg[i] -= kVacuumVariance * (x2[n][i] + p2[n][i]);
  RVec ratio(npix);
  for (std::size_t it = 0; it < sweeps; ++it) {
    RVec is = bg;
    for (std::size_t n = 0; n < m; ++n)
      for (std::size_t i = 0; i < npix; ++i) is[i] += vx[n] * x2[n][i] + vp[n] * p2[n][i];
    for (std::size_t i = 0; i < npix; ++i) ratio[i] = is[i] > 0.0 ? std::max(d.full[i], 0.0) / is[i] : 1.0;
    for (std::size_t n = 0; n < m; ++n) {
      double nx = 0.0, dx = 0.0, np = 0.0, dp = 0.0;
      for (std::size_t i = 0; i < npix; ++i) {
        const double w = d.weights[i];
        nx += w * ratio[i] * x2[n][i];
        dx += w * x2[n][i];
        np += w * ratio[i] * p2[n][i];
        dp += w * p2[n][i];
      }
      if (dx > 0.0) vx[n] = std::clamp(vx[n] * nx / dx, 1e-6, 1e3);
      if (dp > 0.0) vp[n] = std::clamp(vp[n] * np / dp, 1e-6, 1e3);
    }
  }
}

/**
 * Moves every mode against dZ/dpsi^* with step `step` / L (L bounds the
 * field operator norm squared), then refits the variances once.
 */
inline GaussianStateSpec gradient_step(const GaussianStateSpec& st, const Projection& proj, const MeasuredData& d,
                                       const ForwardModel& fm, double step, std::size_t refit_sweeps = 1) {
  if (!(step >= 0.0)) throw std::invalid_argument("gradient step must be nonnegative");
  GaussianStateSpec out = st;
  const double scale = step / fm.lipschitz();
  std::vector<RVec> x2(st.n_modes()), p2(st.n_modes());
  CVec ax(fm.n_pix()), ap(fm.n_pix());
  for (std::size_t n = 0; n < st.n_modes(); ++n) {
    if (step > 0.0) {
      const auto g = field_misfit_gradient(st.basis.modes[n].samples, proj.fields.modes[n], fm);
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (!std::isfinite(g[j].real()) || !std::isfinite(g[j].imag()))
          throw RetrievalError("non-finite gradient in mode " + std::to_string(n));
        out.basis.modes[n].samples[j] -= scale * g[j];
      }
    }
    fm.quadrature_fields(out.basis.modes[n].samples, ax, ap);
    x2[n].resize(fm.n_pix());
    p2[n].resize(fm.n_pix());
    for (std::size_t i = 0; i < fm.n_pix(); ++i) {
      x2[n][i] = std::norm(ax[i]);
      p2[n][i] = std::norm(ap[i]);
    }
  }
  refit_variances(out.var_x, out.var_p, x2, p2, d, fm.vacuum_level(), refit_sweeps);
  return out;
}

// ---------------------------------------------------------------------------
// amplitude misfit Phi = sum w (sqrt(I_syn) - sqrt(I_meas))^2

namespace detail {

struct FieldCache {
  std::vector<CVec> ax, ap;
  std::vector<RVec> x2, p2;
};

inline void compute_fields(const std::vector<CVec>& psi, const ForwardModel& fm, FieldCache& c) {
  const std::size_t m = psi.size();
  c.ax.resize(m);
  c.ap.resize(m);
  c.x2.resize(m);
  c.p2.resize(m);
  for (std::size_t n = 0; n < m; ++n) {
    c.ax[n].resize(fm.n_pix());
    c.ap[n].resize(fm.n_pix());
    c.x2[n].resize(fm.n_pix());
    c.p2[n].resize(fm.n_pix());
    fm.quadrature_fields(psi[n], c.ax[n], c.ap[n]);
    for (std::size_t i = 0; i < fm.n_pix(); ++i) {
      c.x2[n][i] = std::norm(c.ax[n][i]);
      c.p2[n][i] = std::norm(c.ap[n][i]);
    }
  }
}

/// Vacuum-subtracted model intensity sum (v - 1/4) |A|^2.
inline RVec model_vacsub(const FieldCache& c, std::span<const double> vx, std::span<const double> vp) {
  RVec acc(c.x2.empty() ? 0 : c.x2[0].size(), 0.0);
  for (std::size_t n = 0; n < c.x2.size(); ++n) {
    const double wx = vx[n] - kVacuumVariance, wp = vp[n] - kVacuumVariance;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += wx * c.x2[n][i] + wp * c.p2[n][i];
  }
  return acc;
}

inline double amplitude_misfit(const FieldCache& c, std::span<const double> vx, std::span<const double> vp,
                               const MeasuredData& d, double vac, RVec* ratio_out = nullptr) {
  const RVec vs = model_vacsub(c, vx, vp);
  double phi = 0.0;
  if (ratio_out) ratio_out->resize(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const double is = std::max(vac + vs[i], 1e-300);
    const double r = std::sqrt(is), m = std::sqrt(std::max(d.full[i], 0.0));
    phi += d.weights[i] * (r - m) * (r - m);
    if (ratio_out) (*ratio_out)[i] = m / r;
  }
  return phi;
}

/// dPhi/dpsi_n^* for every mode; uses the ratio from amplitude_misfit.
inline std::vector<CVec> amplitude_misfit_gradient(const FieldCache& c, std::span<const double> vx, std::span<const double> vp,
                                                   const RVec& ratio, const MeasuredData& d, const ForwardModel& fm) {
  std::vector<CVec> g(c.ax.size(), CVec(fm.n_t()));
  CVec dx(fm.n_pix()), dp(fm.n_pix());
  for (std::size_t n = 0; n < c.ax.size(); ++n) {
    const double wx = vx[n] - kVacuumVariance, wp = vp[n] - kVacuumVariance;
    for (std::size_t i = 0; i < fm.n_pix(); ++i) {
      const double f = d.weights[i] * (1.0 - ratio[i]);
      dx[i] = f * wx * c.ax[n][i];
      dp[i] = f * wp * c.ap[n][i];
    }
    fm.quadrature_adjoint(dx, dp, g[n]);
  }
  return g;
}

inline double real_dot(const std::vector<CVec>& a, const std::vector<CVec>& b) {
  double s = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t j = 0; j < a[n].size(); ++j) s += a[n][j].real() * b[n][j].real() + a[n][j].imag() * b[n][j].imag();
  return s;
}

inline void axpy(double a, const std::vector<CVec>& x, std::vector<CVec>& y) {
  for (std::size_t n = 0; n < x.size(); ++n)
    for (std::size_t j = 0; j < x[n].size(); ++j) y[n][j] += a * x[n][j];
}

inline std::vector<CVec> diff(const std::vector<CVec>& a, const std::vector<CVec>& b) {
  auto out = a;
  axpy(-1.0, b, out);
  return out;
}

}  // namespace detail

/// Phi and its Wirtinger gradient for a candidate state; exposed for testing.
inline std::pair<double, std::vector<CVec>> amplitude_misfit_and_gradient(const GaussianStateSpec& st, const MeasuredData& d,
                                                                          const ForwardModel& fm) {
  std::vector<CVec> psi;
  for (const auto& m : st.basis.modes) psi.push_back(m.samples);
  detail::FieldCache c;
  detail::compute_fields(psi, fm, c);
  RVec ratio;
  const double phi = detail::amplitude_misfit(c, st.var_x, st.var_p, d, fm.vacuum_level(), &ratio);
  return {phi, detail::amplitude_misfit_gradient(c, st.var_x, st.var_p, ratio, d, fm)};
}

// ---------------------------------------------------------------------------
// driver

using ProgressFn = std::function<void(std::size_t iteration, double loss)>;

inline RetrievalResult retrieve(const Spectrogram& measured, const GateFunctions& gate, const RetrievalConfig& cfg,
                                const ProgressFn& progress = {}) {
  cfg.validate();
  const ForwardModel fm(gate, measured.grid.delay);
  const MeasuredData d = prepare_measurement(measured, fm, cfg.mask ? &*cfg.mask : nullptr);
  const TimeGrid& tg = fm.grid().time;
  const double vac = fm.vacuum_level();

  RetrievalResult res;
  res.seed = cfg.seed;
  Reseeder reseed;
  GaussianStateSpec st = initialize(cfg, d, fm, gate, reseed);

  auto modes_of = [](const GaussianStateSpec& s) {
    std::vector<CVec> p;
    for (const auto& m : s.basis.modes) p.push_back(m.samples);
    return p;
  };
  auto set_modes = [](GaussianStateSpec& s, const std::vector<CVec>& p) {
    for (std::size_t n = 0; n < p.size(); ++n) s.basis.modes[n].samples = p[n];
  };
  // A vacuum-only measurement has no vacuum-subtracted energy; its loss is
  // normalized by the full intensity instead.
  double ref_energy = 0.0;
  for (std::size_t i = 0; i < d.vacsub.size(); ++i) ref_energy += d.weights[i] * d.vacsub[i] * d.vacsub[i];
  const bool full_reference = !(ref_energy > 0.0);
  if (full_reference) res.warnings.push_back("measurement equals the vacuum level; loss is relative to the full intensity");
  auto current_loss = [&](const detail::FieldCache& c) {
    RVec syn = detail::model_vacsub(c, st.var_x, st.var_p);
    if (!full_reference) return loss(d.vacsub, syn, d.weights);
    for (auto& v : syn) v += vac;
    return loss(d.full, syn, d.weights);
  };
  if (cfg.noise_floor_stop > 0.0 && !full_reference) {
    std::optional<double> sigma = cfg.noise_sigma;
    if (!sigma && cfg.mask) sigma = estimate_noise_sigma(measured.values, *cfg.mask);
    if (sigma) {
      double wsum = 0.0;
      for (double w : d.weights) wsum += w;
      res.noise_floor = *sigma * std::sqrt(wsum / ref_energy);
    } else {
      res.warnings.push_back("noise floor unknown: no noise_sigma and too few masked-out pixels");
    }
  }
  auto step_scale = [&] {
    double w = 0.0;
    for (std::size_t n = 0; n < st.n_modes(); ++n)
      w = std::max({w, std::abs(st.var_x[n] - kVacuumVariance), std::abs(st.var_p[n] - kVacuumVariance)});
    return 2.0 * cfg.step_size / (fm.lipschitz() * std::max(w, 1e-3));
  };
  auto reorthonormalize = [&](std::vector<CVec>& p) {
    set_modes(st, p);
    const auto rep = orthonormalize(st, tg, reseed);
    res.reseeds += rep.reseeded;
    for (const auto& w : rep.warnings) res.warnings.push_back(w);
    p = modes_of(st);
    return rep.reseeded > 0;
  };

  std::vector<CVec> psi = modes_of(st);
  detail::FieldCache cache;
  detail::compute_fields(psi, fm, cache);
  std::deque<std::pair<std::vector<CVec>, std::vector<CVec>>> memory;
  RVec ratio;

  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    refit_variances(st.var_x, st.var_p, cache.x2, cache.p2, d, vac, cfg.variance_refit_iters);
    const double lcur = current_loss(cache);
    res.loss_trace.push_back(lcur);
    res.iterations_run = it + 1;
    if (progress) progress(it, lcur);
    if (!std::isfinite(lcur)) throw RetrievalError("loss became non-finite at iteration " + std::to_string(it));
    const std::size_t win = cfg.convergence_window;
    if (win > 0 && res.loss_trace.size() > win &&
        std::abs(res.loss_trace[res.loss_trace.size() - 1 - win] - lcur) < cfg.convergence_tol) {
      res.stalled = true;
      break;
    }
    if (res.noise_floor > 0.0 && lcur <= cfg.noise_floor_stop * res.noise_floor) {
      res.noise_limited = true;
      break;
    }
    if (it + 1 == cfg.max_iters) break;

    if (cfg.step_schedule == StepSchedule::fixed) {
      TermFields tf;
      tf.grid = fm.grid();
      tf.modes.resize(st.n_modes());
      for (std::size_t n = 0; n < st.n_modes(); ++n) {
        auto& f = tf.modes[n];
        f[term_x] = cache.ax[n];
        f[term_p] = cache.ap[n];
        f[term_c1].assign(fm.n_pix(), 0.0);
        f[term_c2].assign(fm.n_pix(), 0.0);
        fm.conjugate_fields(psi[n], f[term_c1], f[term_c2]);
      }
      const auto proj = data_projection(tf, st.var_x, st.var_p, d, fm);
      st = gradient_step(st, proj, d, fm, cfg.step_size, cfg.variance_refit_iters);
      psi = modes_of(st);
      reorthonormalize(psi);
      detail::compute_fields(psi, fm, cache);
      continue;
    }

    const double phi = detail::amplitude_misfit(cache, st.var_x, st.var_p, d, vac, &ratio);
    const auto g = detail::amplitude_misfit_gradient(cache, st.var_x, st.var_p, ratio, d, fm);
    for (const auto& gn : g)
      for (const auto& v : gn)
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
          throw RetrievalError("non-finite gradient at iteration " + std::to_string(it));

    // search direction
    std::vector<CVec> dir = g;
    if (cfg.step_schedule == StepSchedule::lbfgs && !memory.empty()) {
      std::vector<double> alpha(memory.size());
      for (std::size_t k = memory.size(); k-- > 0;) {
        const auto& [s, y] = memory[k];
        alpha[k] = detail::real_dot(s, dir) / detail::real_dot(y, s);
        detail::axpy(-alpha[k], y, dir);
      }
      const auto& [sl, yl] = memory.back();
      const double gamma = detail::real_dot(sl, yl) / detail::real_dot(yl, yl);
      for (auto& v : dir)
        for (auto& x : v) x *= gamma;
      for (std::size_t k = 0; k < memory.size(); ++k) {
        const auto& [s, y] = memory[k];
        const double beta = detail::real_dot(y, dir) / detail::real_dot(y, s);
        detail::axpy(alpha[k] - beta, s, dir);
      }
    } else {
      const double sc = step_scale();
      for (auto& v : dir)
        for (auto& x : v) x *= sc;
    }
    for (auto& v : dir)
      for (auto& x : v) x = -x;
    double slope = detail::real_dot(g, dir);
    if (!(slope < 0.0)) {
      memory.clear();
      dir = g;
      const double sc = -step_scale();
      for (auto& v : dir)
        for (auto& x : v) x *= sc;
      slope = detail::real_dot(g, dir);
    }

    // Armijo backtracking; slope is d Phi along dir up to the factor 2 of the real gradient
    double t = 1.0;
    std::vector<CVec> trial;
    detail::FieldCache tc;
    for (int bt = 0; bt < 40; ++bt) {
      trial = psi;
      detail::axpy(t, dir, trial);
      detail::compute_fields(trial, fm, tc);
      const double pn = detail::amplitude_misfit(tc, st.var_x, st.var_p, d, vac);
      if (pn <= phi + 1e-4 * t * 2.0 * slope) break;
      t *= 0.5;
    }
    const bool reseeded = reorthonormalize(trial);
    detail::compute_fields(trial, fm, tc);
    if (cfg.step_schedule == StepSchedule::lbfgs) {
      RVec r2;
      detail::amplitude_misfit(tc, st.var_x, st.var_p, d, vac, &r2);
      const auto gn = detail::amplitude_misfit_gradient(tc, st.var_x, st.var_p, r2, d, fm);
      auto s = detail::diff(trial, psi);
      auto y = detail::diff(gn, g);
      const double sy = detail::real_dot(s, y);
      if (reseeded) {
        memory.clear();
      } else if (sy > 1e-12 * std::sqrt(detail::real_dot(s, s) * detail::real_dot(y, y))) {
        memory.emplace_back(std::move(s), std::move(y));
        if (memory.size() > cfg.lbfgs_memory) memory.pop_front();
      }
    }
    psi = std::move(trial);
    cache = std::move(tc);
  }

  set_modes(st, psi);
  res.final_loss = current_loss(cache);
  res.basis = st.basis;
  res.var_x = st.var_x;
  res.var_p = st.var_p;
  const auto ang = extract_squeezing_angles(tg, res.basis, res.var_x, res.var_p);
  res.angles = ang.relative;
  res.converged = res.final_loss <= cfg.success_loss_threshold;
  // trend diagnostic: loss rising across a 100-iteration window
  for (std::size_t i = 100; i < res.loss_trace.size(); i += 100)
    if (res.loss_trace[i] > res.loss_trace[i - 100] * (1.0 + 1e-3)) {
      res.warnings.push_back("loss increased between iterations " + std::to_string(i - 100) + " and " + std::to_string(i));
      break;
    }
  return res;
}

}  // namespace mmgfrog
