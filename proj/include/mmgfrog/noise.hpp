#pragma once
/**
 * @file noise.hpp
 * @brief Additive Gaussian detector noise at a target SNR, significance
 * masks and pixel-bootstrap error bars for retrievals.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "random.hpp"
#include "retrieval.hpp"

namespace mmgfrog {

enum class SnrDefinition { rms, peak };

inline const char* to_string(SnrDefinition d) { return d == SnrDefinition::rms ? "rms" : "peak"; }

inline SnrDefinition snr_definition_from_string(const std::string& s) {
  if (s == "rms") return SnrDefinition::rms;
  if (s == "peak") return SnrDefinition::peak;
  throw std::invalid_argument("unknown SNR definition '" + s + "'");
}

struct NoiseSpec {
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  SnrDefinition definition = SnrDefinition::rms;
};

struct BootstrapSpec {
  std::size_t n_replicas = 100;
  std::uint64_t seed = 0;
  double resample_fraction = 1.0;

  void validate() const {
    if (n_replicas < 2) throw std::invalid_argument("bootstrap.n_replicas must be >= 2");
    if (!(resample_fraction > 0.0 && resample_fraction <= 1.0))
      throw std::invalid_argument("bootstrap.resample_fraction must lie in (0, 1]");
  }
};

/// Noise standard deviation for `values` at the requested SNR.
inline double noise_sigma(std::span<const double> values, const NoiseSpec& spec) {
  if (std::isinf(spec.snr_db) && spec.snr_db > 0) return 0.0;
  if (!std::isfinite(spec.snr_db)) throw std::invalid_argument("snr_db must be finite or +inf");
  double ref = 0.0;
  if (spec.definition == SnrDefinition::rms) {
    for (double v : values) ref += v * v;
    ref = std::sqrt(ref / static_cast<double>(values.size()));
  } else {
    ref = *std::max_element(values.begin(), values.end());
  }
  return ref * std::pow(10.0, -spec.snr_db / 20.0);
}

/// Adds i.i.d. zero-mean Gaussian noise; +inf dB returns the input.
inline Spectrogram add_noise(const Spectrogram& in, const NoiseSpec& spec) {
  if (in.kind == SpectrogramKind::vacuum) throw std::invalid_argument("noise is added to raw or vacuum-subtracted data");
  const double sigma = noise_sigma(in.values, spec);
  Spectrogram out = in;
  if (sigma == 0.0) return out;
  Rng rng(derive_seed(spec.seed, "noise"));
  std::normal_distribution<double> nd(0.0, sigma);
  for (auto& v : out.values) v += nd(rng);
  return out;
}

/**
 * 1 where the 3x3 moving average of |values| reaches threshold * its
 * maximum, then dilated by `dilate` pixels in (omega, tau).
 */
inline RVec build_mask(const Spectrogram& s, double threshold_fraction, std::size_t dilate = 2) {
  if (!(threshold_fraction > 0.0 && threshold_fraction < 1.0))
    throw std::invalid_argument("mask threshold must lie in (0, 1)");
  const long nw = static_cast<long>(s.n_w()), nt = static_cast<long>(s.n_tau());
  RVec avg(s.values.size(), 0.0);
  for (long k = 0; k < nw; ++k)
    for (long m = 0; m < nt; ++m) {
      double acc = 0.0;
      int cnt = 0;
      for (long dk = -1; dk <= 1; ++dk)
        for (long dm = -1; dm <= 1; ++dm) {
          const long kk = k + dk, mm = m + dm;
          if (kk < 0 || kk >= nw || mm < 0 || mm >= nt) continue;
          acc += std::abs(s.values[kk * nt + mm]);
          ++cnt;
        }
      avg[k * nt + m] = acc / cnt;
    }
  const double peak = *std::max_element(avg.begin(), avg.end());
  RVec core(avg.size(), 0.0);
  bool any = false;
  for (std::size_t i = 0; i < avg.size(); ++i)
    if (peak > 0.0 && avg[i] >= threshold_fraction * peak) {
      core[i] = 1.0;
      any = true;
    }
  if (!any) throw std::invalid_argument("mask is empty: no pixel reaches the threshold");
  RVec mask(core.size(), 0.0);
  const long r = static_cast<long>(dilate);
  for (long k = 0; k < nw; ++k)
    for (long m = 0; m < nt; ++m) {
      if (core[k * nt + m] == 0.0) continue;
      for (long dk = -r; dk <= r; ++dk)
        for (long dm = -r; dm <= r; ++dm) {
          const long kk = k + dk, mm = m + dm;
          if (kk >= 0 && kk < nw && mm >= 0 && mm < nt) mask[kk * nt + mm] = 1.0;
        }
    }
  return mask;
}

inline double mask_fraction(const RVec& mask) {
  double c = 0.0;
  for (double v : mask) c += v > 0.0 ? 1.0 : 0.0;
  return c / static_cast<double>(mask.size());
}

/// Pixel weights from resampling the masked pixels with replacement.
inline RVec resample_pixels(const RVec& mask, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] > 0.0) idx.push_back(i);
  if (idx.empty()) throw std::invalid_argument("cannot resample an empty mask");
  RVec w(mask.size(), 0.0);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
  const auto draws = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
  for (std::size_t i = 0; i < std::max<std::size_t>(draws, 1); ++i) w[idx[pick(rng)]] += 1.0;
  return w;
}

struct Moments {
  RVec mean;
  RVec stddev;
};

inline Moments column_moments(const std::vector<RVec>& rows) {
  Moments m;
  if (rows.empty()) return m;
  const std::size_t n = rows[0].size();
  m.mean.assign(n, 0.0);
  m.stddev.assign(n, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < n; ++j) m.mean[j] += r[j];
  for (auto& v : m.mean) v /= static_cast<double>(rows.size());
  if (rows.size() > 1) {
    for (const auto& r : rows)
      for (std::size_t j = 0; j < n; ++j) m.stddev[j] += (r[j] - m.mean[j]) * (r[j] - m.mean[j]);
    for (auto& v : m.stddev) v = std::sqrt(v / static_cast<double>(rows.size() - 1));
  }
  return m;
}

/// One retrieval, reduced to gauge-independent numbers against a reference basis.
struct ReplicaOutcome {
  double loss = 1.0;
  bool success = false;
  RVec fidelity;     // per reference mode
  RVec squeezed;     // min(var_x, var_p) per reference mode
  RVec antisqueezed; // max(var_x, var_p)
  std::vector<RVec> intensity;  // |psi|^2 per reference mode
};

inline ReplicaOutcome summarize_against(const TimeGrid& tg, const ModeBasis& reference, const RetrievalResult& r) {
  ReplicaOutcome o;
  o.loss = r.final_loss;
  o.success = r.converged;
  if (reference.size() != r.basis.size()) throw std::invalid_argument("reference and result mode counts differ");
  const auto mm = match_modes(tg, reference, r.basis);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const std::size_t j = mm.permutation[i];
    o.fidelity.push_back(mm.fidelity[i]);
    o.squeezed.push_back(std::min(r.var_x[j], r.var_p[j]));
    o.antisqueezed.push_back(std::max(r.var_x[j], r.var_p[j]));
    RVec inten;
    for (const auto& v : r.basis.modes[j].samples) inten.push_back(std::norm(v));
    o.intensity.push_back(std::move(inten));
  }
  return o;
}

struct BootstrapSummary {
  std::size_t n_replicas = 0;
  std::size_t n_success = 0;
  double success_fraction = 0.0;
  bool empty_success = false;
  RetrievalResult reference;  // retrieval on the unresampled data
  std::vector<ReplicaOutcome> replicas;
  // statistics over successful replicas, per reference mode
  Moments fidelity;
  Moments squeezed;
  Moments antisqueezed;
  Moments loss;
  std::vector<Moments> intensity;
};

/**
 * Retrieves once on the full masked data, then on `n_replicas` pixel
 * resamplings of it. Replica modes are matched to the full-data result, or
 * to `truth` when given (fidelities are then against truth).
 */
inline BootstrapSummary bootstrap_retrieve(const Spectrogram& noisy, const GateFunctions& gate, const RetrievalConfig& cfg,
                                           const BootstrapSpec& bspec, const ModeBasis* truth = nullptr) {
  bspec.validate();
  cfg.validate();
  const TimeGrid& tg = gate.grid;
  const RVec base = cfg.mask ? *cfg.mask : RVec(noisy.values.size(), 1.0);
  // resampling zero-weights in-mask pixels, so the noise level comes from the original mask
  RetrievalConfig rcfg = cfg;
  if (cfg.noise_floor_stop > 0.0 && !cfg.noise_sigma && cfg.mask) rcfg.noise_sigma = estimate_noise_sigma(noisy.values, base);
  BootstrapSummary out;
  out.n_replicas = bspec.n_replicas;
  out.reference = retrieve(noisy, gate, rcfg);
  const ModeBasis& ref = truth ? *truth : out.reference.basis;

  out.replicas.resize(bspec.n_replicas);
  parallel_for(bspec.n_replicas, [&](std::size_t i) {
    RetrievalConfig c = rcfg;
    c.mask = resample_pixels(base, bspec.resample_fraction, derive_seed(bspec.seed, "bootstrap", i));
    out.replicas[i] = summarize_against(tg, ref, retrieve(noisy, gate, c));
  });

  std::vector<RVec> fid, sq, asq, ls;
  std::vector<std::vector<RVec>> inten(ref.size());
  for (const auto& r : out.replicas) {
    if (!r.success) continue;
    ++out.n_success;
    fid.push_back(r.fidelity);
    sq.push_back(r.squeezed);
    asq.push_back(r.antisqueezed);
    ls.push_back({r.loss});
    for (std::size_t q = 0; q < ref.size(); ++q) inten[q].push_back(r.intensity[q]);
  }
  out.success_fraction = static_cast<double>(out.n_success) / static_cast<double>(out.n_replicas);
  out.empty_success = out.n_success == 0;
  out.fidelity = column_moments(fid);
  out.squeezed = column_moments(sq);
  out.antisqueezed = column_moments(asq);
  out.loss = column_moments(ls);
  for (auto& rows : inten) out.intensity.push_back(column_moments(rows));
  return out;
}

struct NoiseLevelSummary {
  double snr_db = 0.0;
  std::vector<ReplicaOutcome> runs;
  std::vector<RVec> loss_traces;
  double success_fraction = 0.0;
  Moments fidelity;  // over successful runs
  Moments squeezed;
  Moments antisqueezed;
};

struct NoiseSweepOptions {
  std::size_t repeats = 20;
  double mask_threshold = 0.1;
  SnrDefinition definition = SnrDefinition::rms;
  std::uint64_t seed = 0;
  bool keep_traces = false;
  /// Passed to RetrievalConfig::noise_floor_stop for noisy levels.
  double noise_floor_stop = 1.0;
};

/**
 * For each SNR level, `repeats` independent noise draws of the clean
 * vacuum-subtracted spectrogram, each retrieved with its own initialization
 * seed and scored against the true basis.
 */
inline std::vector<NoiseLevelSummary> noise_sweep(const Spectrogram& clean, const GateFunctions& gate,
                                                  const GaussianStateSpec& truth, const RetrievalConfig& cfg,
                                                  const std::vector<double>& snr_db, const NoiseSweepOptions& opt) {
  if (snr_db.empty()) throw std::invalid_argument("noise sweep needs at least one SNR level");
  std::vector<NoiseLevelSummary> levels;
  for (std::size_t l = 0; l < snr_db.size(); ++l) {
    NoiseLevelSummary lv;
    lv.snr_db = snr_db[l];
    lv.runs.resize(opt.repeats);
    lv.loss_traces.resize(opt.repeats);
    parallel_for(opt.repeats, [&](std::size_t r) {
      NoiseSpec ns{snr_db[l], derive_seed(opt.seed, "noise", l * 1000003 + r), opt.definition};
      const Spectrogram noisy = add_noise(clean, ns);
      RetrievalConfig c = cfg;
      c.seed = derive_seed(opt.seed, "init", l * 1000003 + r);
      if (std::isfinite(snr_db[l])) {
        c.mask = build_mask(noisy, opt.mask_threshold);
        c.noise_floor_stop = opt.noise_floor_stop;
      }
      const auto res = retrieve(noisy, gate, c);
      lv.runs[r] = summarize_against(gate.grid, truth.basis, res);
      if (opt.keep_traces) lv.loss_traces[r] = res.loss_trace;
    });
    std::vector<RVec> fid, sq, asq;
    std::size_t ok = 0;
    for (const auto& r : lv.runs)
      if (r.success) {
        ++ok;
        fid.push_back(r.fidelity);
        sq.push_back(r.squeezed);
        asq.push_back(r.antisqueezed);
      }
    lv.success_fraction = static_cast<double>(ok) / static_cast<double>(opt.repeats);
    lv.fidelity = column_moments(fid);
    lv.squeezed = column_moments(sq);
    lv.antisqueezed = column_moments(asq);
    levels.push_back(std::move(lv));
  }
  return levels;
}

}  // namespace mmgfrog
