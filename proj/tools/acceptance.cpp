// Acceptance runner: one PASS/FAIL line per criterion, with the measured
// numbers indented above it. Exits 0 once every check has run; a FAIL line
// is a measured result, not a crash. Exit 1 means a check could not run.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <exception>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "mmgfrog/bench.hpp"
#include "mmgfrog/noise.hpp"
#include "mmgfrog/presets.hpp"
#include "mmgfrog/retrieval.hpp"

using namespace mmgfrog;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void note(const char* fmt, auto... args) {
  std::printf("    ");
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

struct Verdict {
  bool pass = false;
  std::string summary;
};

double rel_dev(double got, double want) { return std::abs(got - want) / std::abs(want); }

CVec random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd;
  CVec v(n);
  for (auto& x : v) x = cplx(nd(rng), nd(rng));
  return v;
}

double max_rel_err(const RVec& a, const RVec& b) {
  double e = 0.0, r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    e = std::max(e, std::abs(a[i] - b[i]));
    r = std::max(r, std::abs(b[i]));
  }
  return e / r;
}

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

// Four-mode noiseless run, shared by the round-trip and zero-angle checks.
struct FourModeRun {
  Setup setup;
  RetrievalResult result;
  ModeMatch match;
  double seconds = 0.0;
};

FourModeRun run_four_mode() {
  FourModeRun r;
  r.setup = make_setup(four_mode_params());
  const auto meas = synthesize_vacuum_subtracted(r.setup.state, r.setup.model());
  RetrievalConfig cfg;
  cfg.n_modes = 4;
  cfg.max_iters = 10000;
  cfg.seed = 0;
  const auto t0 = Clock::now();
  r.result = retrieve(meas, r.setup.gate_fn(), cfg);
  r.seconds = seconds_since(t0);
  r.match = match_modes(r.setup.tg, r.setup.state.basis, r.result.basis);
  return r;
}

Verdict round_trip(const FourModeRun& r) {
  const auto& st = r.setup.state;
  bool ok = r.result.final_loss <= 0.01 && r.seconds <= 20 * 60;
  note("iterations %zu, final loss %.3e, %.1f s", r.result.iterations_run, r.result.final_loss, r.seconds);
  double worst_f = 1.0, worst_v = 0.0;
  for (std::size_t i = 0; i < st.n_modes(); ++i) {
    const std::size_t j = r.match.permutation[i];
    const double sq = std::min(r.result.var_x[j], r.result.var_p[j]);
    const double asq = std::max(r.result.var_x[j], r.result.var_p[j]);
    const double dsq = rel_dev(sq, st.var_x[i]), dasq = rel_dev(asq, st.var_p[i]);
    note("mode %zu: fidelity %.6f, squeezed %.5f (truth %.5f), anti-squeezed %.5f (truth %.5f)", i, r.match.fidelity[i], sq,
         st.var_x[i], asq, st.var_p[i]);
    worst_f = std::min(worst_f, r.match.fidelity[i]);
    worst_v = std::max({worst_v, dsq, dasq});
  }
  ok = ok && worst_f >= 0.99 && worst_v <= 0.05;
  char buf[200];
  std::snprintf(buf, sizeof buf, "loss %.2e <= 0.01, min fidelity %.5f >= 0.99, max variance error %.2f%% <= 5%%, %.0f s <= 1200 s",
                r.result.final_loss, worst_f, 100 * worst_v, r.seconds);
  return {ok, buf};
}

Verdict vacuum_flatness() {
  struct GateCase {
    double fwhm, chirp, gain_db;
  };
  bool synth_ok = true, closed_ok = true;
  double worst_synth = 0.0, worst_closed = 0.0;
  for (const GateCase g : {GateCase{100.0, 4.0, 50.0}, GateCase{60.0, 0.0, 30.0}, GateCase{150.0, -2.0, 40.0}}) {
    auto p = four_mode_params();
    p.gate_fwhm = g.fwhm;
    p.gate_chirp = g.chirp;
    p.gain_db = g.gain_db;
    p.mode_t0 = 20.0;
    p.mode_chirp = 0.0;
    p.squeezing_db = {0.0, 0.0, 0.0};  // modes at variance 1/4
    auto s = make_setup(p);
    const auto fm = s.model();
    const auto synth = synthesize_spectrogram(s.state, fm, true);
    const auto flat = vacuum_spectrogram(fm);
    double e = 0.0;
    for (std::size_t i = 0; i < synth.values.size(); ++i) e = std::max(e, rel_dev(synth.values[i], flat.values[i]));

    // completeness sum of 40 vacuum modes at the central pixel
    GaussianStateSpec many;
    many.w_s = p.w_s;
    for (int n = 0; n < 40; ++n) {
      many.basis.modes.push_back(place_on_carrier(s.tg, hermite_gaussian_mode(s.tg, n, 20.0, 0.0, 40), p.w_s));
      many.var_x.push_back(kVacuumVariance);
      many.var_p.push_back(kVacuumVariance);
      many.angle.push_back(0.0);
    }
    const double sum40 = synthesize_spectrogram(many, fm, false).at(fm.n_t() / 2, fm.n_tau() / 2);
    const double closed = closed_form_vacuum_level(s.gate_fn());
    const double dc = rel_dev(closed, sum40);
    note("gate %.0f fs, chirp %+.0f, %.0f dB: synthesis vs flat %.1e; 40-mode sum %.6e, |sum G dt|^2/4 = %.6e (%.1f%% off), "
         "sum |G|^2 dt/2 = %.6e (%.2f%% off)",
         g.fwhm, g.chirp, g.gain_db, e, sum40, closed, 100 * dc, fm.vacuum_level(), 100 * rel_dev(fm.vacuum_level(), sum40));
    worst_synth = std::max(worst_synth, e);
    worst_closed = std::max(worst_closed, dc);
    synth_ok = synth_ok && e <= 1e-9;
    closed_ok = closed_ok && dc <= 0.01;
  }
  char buf[220];
  std::snprintf(buf, sizeof buf, "vacuum synthesis vs flat %.1e <= 1e-9 (%s); |sum G dt|^2/4 vs 40-mode sum %.0f%% <= 1%% (%s)",
                worst_synth, synth_ok ? "ok" : "not met", 100 * worst_closed, closed_ok ? "ok" : "not met");
  return {synth_ok && closed_ok, buf};
}

Verdict negativity() {
  auto s = make_setup(three_mode_params());
  const auto fm = s.model();
  const auto sq = synthesize_vacuum_subtracted(s.state, fm);
  auto st = s.state;
  for (auto& v : st.var_x) v = kVacuumVariance;
  const auto anti = synthesize_vacuum_subtracted(st, fm);
  const double peak = anti.max_abs();
  note("squeezed: min %.4e, max %.4e", sq.min(), sq.max());
  note("variances >= 1/4: min %.4e, peak %.4e, min/peak %.2e", anti.min(), peak, anti.min() / peak);
  const bool ok = sq.min() < 0.0 && anti.min() >= -1e-9 * peak;
  char buf[160];
  std::snprintf(buf, sizeof buf, "squeezed minimum %.3e < 0; unsqueezed minimum/peak %.1e >= -1e-9", sq.min(), anti.min() / peak);
  return {ok, buf};
}

Verdict noise_robustness() {
  const auto s = make_setup(three_mode_params());
  const auto clean = synthesize_vacuum_subtracted(s.state, s.model());
  RetrievalConfig cfg;
  cfg.n_modes = 3;
  cfg.max_iters = 10000;
  NoiseSweepOptions opt;
  opt.repeats = 20;
  opt.mask_threshold = 0.1;
  opt.noise_floor_stop = 1.0;
  opt.seed = 1;
  const std::vector<double> levels{5, 10, 15, 20, 30};
  const auto t0 = Clock::now();
  const auto sweep = noise_sweep(clean, s.gate_fn(), s.state, cfg, levels, opt);
  note("%zu levels x %zu runs in %.0f s", levels.size(), opt.repeats, seconds_since(t0));
  bool monotone = true;
  for (std::size_t l = 0; l < sweep.size(); ++l) {
    note("%4.0f dB: success %.2f", sweep[l].snr_db, sweep[l].success_fraction);
    if (l > 0 && sweep[l].success_fraction < sweep[l - 1].success_fraction) monotone = false;
  }
  const auto& at15 = sweep[2];
  bool fid_ok = !at15.fidelity.mean.empty(), var_ok = fid_ok;
  double worst_f = 1.0, worst_v = 0.0;
  for (std::size_t i = 0; i < at15.fidelity.mean.size(); ++i) {
    const double dsq = rel_dev(at15.squeezed.mean[i], s.state.var_x[i]);
    const double dasq = rel_dev(at15.antisqueezed.mean[i], s.state.var_p[i]);
    note("15 dB mode %zu: fidelity %.4f, squeezed %.4f (truth %.4f, %+.1f%%), anti-squeezed %.4f (truth %.4f, %+.1f%%)", i,
         at15.fidelity.mean[i], at15.squeezed.mean[i], s.state.var_x[i],
         100 * (at15.squeezed.mean[i] / s.state.var_x[i] - 1), at15.antisqueezed.mean[i], s.state.var_p[i],
         100 * (at15.antisqueezed.mean[i] / s.state.var_p[i] - 1));
    worst_f = std::min(worst_f, at15.fidelity.mean[i]);
    worst_v = std::max({worst_v, dsq, dasq});
  }
  fid_ok = fid_ok && worst_f >= 0.85;
  var_ok = var_ok && worst_v <= 0.10;
  char buf[220];
  std::snprintf(buf, sizeof buf, "15 dB mean fidelity %.3f >= 0.85 (%s), variance error %.1f%% <= 10%% (%s), success monotone (%s)",
                worst_f, fid_ok ? "ok" : "not met", 100 * worst_v, var_ok ? "ok" : "not met", monotone ? "ok" : "not met");
  return {fid_ok && var_ok && monotone, buf};
}

Verdict squeezing_angles(const FourModeRun& four) {
  double worst = 0.0;
  for (double theta : {std::numbers::pi / 2, std::numbers::pi / 4}) {
    auto p = four_mode_params();
    p.squeezing_db = {3.0};
    auto s = make_setup(p);
    const ModeBasis reference = s.state.basis;
    s.state.angle[0] = theta;
    const auto rotated = apply_squeezing_angle(s.state);
    const auto meas = synthesize_vacuum_subtracted(rotated, s.model());
    RetrievalConfig cfg;
    cfg.n_modes = 1;
    cfg.seed = 0;
    const auto r = retrieve(meas, s.gate_fn(), cfg);
    const auto a = extract_squeezing_angles(s.tg, r.basis, r.var_x, r.var_p, &reference);
    const double d = angle_distance_mod_pi(a.angle[0], theta);
    note("rotated by %.4f: recovered %.4f (error %.4f rad), loss %.2e", theta, a.angle[0], d, r.final_loss);
    worst = std::max(worst, d);
  }
  // unrotated four-mode state: every relative angle is 0
  const auto& r = four.result;
  ModeBasis aligned;
  RVec vx, vp;
  for (std::size_t j : four.match.permutation) {
    aligned.modes.push_back(r.basis.modes[j]);
    vx.push_back(r.var_x[j]);
    vp.push_back(r.var_p[j]);
  }
  const auto a = extract_squeezing_angles(four.setup.tg, aligned, vx, vp, &four.setup.state.basis);
  for (std::size_t n = 1; n < a.relative.size(); ++n) {
    const double d = angle_distance_mod_pi(a.relative[n], 0.0);
    note("four-mode relative angle %zu: %.4f (error %.4f rad)", n, a.relative[n], d);
    worst = std::max(worst, d);
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "max angle error %.4f rad <= 0.05 rad (mod pi)", worst);
  return {worst <= 0.05, buf};
}

Verdict property_suite() {
  const auto t0 = Clock::now();
  bool ok = true;

  double parseval = 0.0;
  for (double wc : {0.0, kDefaultCarrier}) {
    TimeGrid tg(512, 0.7);
    const auto fg = FreqGrid::conjugate_to(tg, wc);
    const auto f = random_vector(tg.n_t(), 3);
    const auto F = forward_transform(tg, fg, f);
    const auto back = inverse_transform(tg, fg, F);
    double et = 0.0, ew = 0.0, rt = 0.0;
    for (const auto& v : f) et += std::norm(v) * tg.dt();
    for (const auto& v : F) ew += std::norm(v) * fg.dw() / (2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < f.size(); ++i) rt = std::max(rt, std::abs(back[i] - f[i]));
    parseval = std::max({parseval, std::abs(ew / et - 1.0), rt});
  }
  note("Parseval and inverse round trip: %.1e", parseval);
  ok = ok && parseval <= 1e-12;

  auto s4 = make_setup(four_mode_params());
  for (std::size_t n = 0; n < 4; ++n) {
    const auto r = random_vector(s4.tg.n_t(), 100 + n);
    for (std::size_t j = 0; j < r.size(); ++j) s4.state.basis.modes[n].samples[j] += 0.3 * r[j];
  }
  Reseeder rs{30.0, s4.state.w_s, 4};
  orthonormalize(s4.state, s4.tg, rs);
  const double ortho = s4.state.basis.orthonormality_error(s4.tg);
  note("Gram-Schmidt orthonormality: %.1e", ortho);
  ok = ok && ortho <= 1e-10;

  const auto s = make_setup(tiny_params());
  const auto fm = s.model();
  const auto meas = synthesize_vacuum_subtracted(s.state, fm);
  const auto d = prepare_measurement(meas, fm, nullptr);
  GaussianStateSpec st = s.state;
  st.var_x = {0.2, 0.4};
  st.var_p = {0.6, 0.15};
  for (std::size_t n = 0; n < 2; ++n) {
    const auto r = random_vector(fm.n_t(), 20 + n);
    for (std::size_t j = 0; j < r.size(); ++j) st.basis.modes[n].samples[j] += 0.05 * r[j];
  }
  const auto [phi, g] = amplitude_misfit_and_gradient(st, d, fm);
  RVec fd, an;
  const double h = 1e-6;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < fm.n_t(); ++j)
      for (cplx dir : {cplx(1, 0), cplx(0, 1)}) {
        auto a = st, b = st;
        a.basis.modes[n].samples[j] += h * dir;
        b.basis.modes[n].samples[j] -= h * dir;
        fd.push_back((amplitude_misfit_and_gradient(a, d, fm).first - amplitude_misfit_and_gradient(b, d, fm).first) / (2 * h));
        an.push_back(2.0 * (std::conj(dir) * g[n][j]).real());
      }
  const double grad = max_rel_err(fd, an);
  note("Wirtinger gradient vs finite differences (n_t 64, M 2): %.1e", grad);
  ok = ok && grad <= 1e-6;

  auto guess = s.state;
  guess.var_x = {0.3, 0.2};
  guess.var_p = {0.3, 0.35};
  for (auto& m : guess.basis.modes)
    for (std::size_t j = 0; j < m.samples.size(); ++j) m.samples[j] *= std::polar(1.0, 0.01 * static_cast<double>(j));
  const auto proj = data_projection(synthesize_term_fields(guess, fm), guess.var_x, guess.var_p, d, fm);
  const double pe = max_rel_err(projected_intensity(proj, guess.var_x, guess.var_p), d.full);
  note("projection exactness: %.1e", pe);
  ok = ok && pe <= 1e-10;

  const auto sm = make_setup(small_params());
  const auto smeas = synthesize_vacuum_subtracted(sm.state, sm.model());
  RetrievalConfig cfg;
  cfg.n_modes = 3;
  cfg.max_iters = 30;
  cfg.seed = 9;
  const unsigned saved = thread_count();
  std::vector<RetrievalResult> runs;
  for (unsigned th : {1u, 2u, 4u}) {
    set_thread_count(th);
    runs.push_back(retrieve(smeas, sm.gate_fn(), cfg));
  }
  set_thread_count(saved);
  bool same = true;
  for (const auto& r : runs) {
    same = same && r.loss_trace == runs[0].loss_trace && r.var_x == runs[0].var_x && r.var_p == runs[0].var_p;
    for (std::size_t n = 0; n < 3; ++n) same = same && r.basis.modes[n].samples == runs[0].basis.modes[n].samples;
  }
  note("bit-identical across 1, 2, 4 threads: %s", same ? "yes" : "no");
  ok = ok && same;

  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  char buf[120];
  std::snprintf(buf, sizeof buf, "all properties within tolerance (%s), %.1f s < 60 s", ok ? "ok" : "not met", secs);
  return {ok, buf};
}

Verdict scaling() {
  constexpr std::size_t iters = 40, repeats = 3;
  const auto base = make_setup(four_mode_params());
  std::vector<double> m, tm;
  for (std::size_t k : {1, 2, 4, 8, 16}) {
    const auto p = time_iterations(base, k, iters, repeats);
    note("M %2zu, %zux%zu: %.3f ms/iteration", k, p.n_w, p.n_tau, 1e3 * p.seconds_per_iteration);
    m.push_back(static_cast<double>(k));
    tm.push_back(p.seconds_per_iteration);
  }
  std::vector<double> px, tp;
  for (auto [nt, ntau] : {std::pair<std::size_t, std::size_t>{256, 96}, {512, 96}, {512, 192}}) {
    auto prm = four_mode_params();
    prm.n_t = nt;
    prm.n_tau = ntau;
    const auto p = time_iterations(make_setup(prm), 4, iters, repeats);
    note("M 4, %zux%zu: %.3f ms/iteration", p.n_w, p.n_tau, 1e3 * p.seconds_per_iteration);
    px.push_back(static_cast<double>(nt * ntau));
    tp.push_back(p.seconds_per_iteration);
  }
  const double sm = loglog_slope(m, tm), sg = loglog_slope(px, tp);
  const bool ok = std::abs(sm - 1.0) <= 0.2 && std::abs(sg - 1.0) <= 0.2;
  char buf[160];
  std::snprintf(buf, sizeof buf, "log-log slope in M %.3f, in N_w*N_tau %.3f, both within [0.8, 1.2]", sm, sg);
  return {ok, buf};
}

}  // namespace

int main() {
  int passed = 0, total = 0;
  auto report = [&](int n, const char* name, const std::function<Verdict()>& check) {
    std::printf("criterion %d (%s)\n", n, name);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    const Verdict v = check();
    ++total;
    passed += v.pass;
    std::printf("%s criterion %d %s: %s [%.0f s]\n", v.pass ? "PASS" : "FAIL", n, name, v.summary.c_str(), seconds_since(t0));
    std::fflush(stdout);
  };
  try {
    FourModeRun four;
    report(1, "noiseless round trip", [&] {
      four = run_four_mode();
      return round_trip(four);
    });
    report(2, "vacuum flatness", vacuum_flatness);
    report(3, "negativity indicator", negativity);
    report(4, "noise robustness", noise_robustness);
    report(5, "squeezing angles", [&] { return squeezing_angles(four); });
    report(6, "property suite", property_suite);
    report(7, "scaling", scaling);
  } catch (const std::exception& e) {
    std::printf("ERROR: %s\n", e.what());
    return 1;
  }
  std::printf("%d of %d criteria passed\n", passed, total);
  return 0;
}
