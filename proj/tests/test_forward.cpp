#include <gtest/gtest.h>

#include "mmgfrog/forward.hpp"
#include "mmgfrog/presets.hpp"

using namespace mmgfrog;

namespace {

// Independent evaluation of the spectrogram: direct DFT sums, gate samples
// indexed at t - tau, no precomputed tables and no FFT.
struct Oracle {
  std::vector<std::array<CVec, 4>> fields;  // [mode][term][m * n + k]
  RVec intensity;                           // [m * n + k]
};

Oracle brute_force(const GaussianStateSpec& st, const GateFunctions& gf, const DelayGrid& dg) {
  const TimeGrid& tg = gf.grid;
  const std::size_t n = tg.n_t(), nt = dg.n_tau();
  const auto fg = FreqGrid::conjugate_to(tg, gf.w_s);
  Oracle o;
  o.fields.resize(st.n_modes());
  o.intensity.assign(n * nt, 0.0);
  for (std::size_t q = 0; q < st.n_modes(); ++q) {
    for (auto& f : o.fields[q]) f.assign(n * nt, 0.0);
    const auto& psi = st.basis.modes[q].samples;
    for (std::size_t m = 0; m < nt; ++m) {
      const double tau = dg.tau(m);
      const long s = std::lround(tau / tg.dt());
      std::array<CVec, 4> f;
      for (auto& v : f) v.assign(n, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = static_cast<std::size_t>(((static_cast<long>(j) - s) % static_cast<long>(n) + n) % n);
        const cplx G = gf.g[src];
        const double dphi = gf.delta_phi[src];
        const cplx z = psi[j] * std::exp(cplx(0.0, dphi + gf.w_s * tau));
        f[0][j] = G * z.imag();
        f[1][j] = G * z.real();
        f[2][j] = G * std::exp(cplx(0.0, -dphi)) * std::conj(psi[j]);
        f[3][j] = G * std::exp(cplx(0.0, dphi)) * psi[j];
      }
      for (std::size_t k = 0; k < n; ++k) {
        std::array<cplx, 4> acc{};
        for (std::size_t j = 0; j < n; ++j) {
          const cplx e = std::exp(cplx(0.0, -fg.omega(k) * tg.time(j)));
          for (int t = 0; t < 4; ++t) acc[t] += f[t][j] * e;
        }
        for (int t = 0; t < 4; ++t) o.fields[q][t][m * n + k] = acc[t] * tg.dt();
        o.intensity[m * n + k] += st.var_x[q] * std::norm(acc[0] * tg.dt()) + st.var_p[q] * std::norm(acc[1] * tg.dt()) +
                                  0.125 * (std::norm(acc[2] * tg.dt()) + std::norm(acc[3] * tg.dt()));
      }
    }
  }
  return o;
}

SetupParams oracle_params() {
  SetupParams p = three_mode_params();
  p.n_t = 128;
  p.dt = 4.0;
  p.n_tau = 24;
  p.delay_step = 2;
  return p;
}

double max_rel(const RVec& a, const RVec& b) {
  double e = 0.0, r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    e = std::max(e, std::abs(a[i] - b[i]));
    r = std::max(r, std::abs(b[i]));
  }
  return e / r;
}

}  // namespace

TEST(Forward, MatchesBruteForceEvaluation) {
  const auto s = make_setup(oracle_params());
  const auto gf = s.gate_fn();
  const auto fm = ForwardModel(gf, s.dg);
  const auto oracle = brute_force(s.state, gf, s.dg);
  const auto tf = synthesize_term_fields(s.state, fm);
  for (std::size_t q = 0; q < s.state.n_modes(); ++q)
    for (int t = 0; t < 4; ++t) {
      double e = 0.0, r = 0.0;
      for (std::size_t i = 0; i < fm.n_pix(); ++i) {
        e = std::max(e, std::abs(tf.modes[q][t][i] - oracle.fields[q][t][i]));
        r = std::max(r, std::abs(oracle.fields[q][t][i]));
      }
      EXPECT_LT(e / r, 1e-12) << "mode " << q << " term " << t;
    }
  const auto spec = synthesize_spectrogram(s.state, fm, false);
  EXPECT_LT(max_rel(fm.to_delay_major(spec), oracle.intensity), 1e-12);
}

TEST(Forward, TermIdentityBetweenQuadratureAndConjugateFields) {
  const auto s = make_setup(oracle_params());
  const auto tf = synthesize_term_fields(s.state, s.model());
  for (const auto& f : tf.modes)
    for (std::size_t i = 0; i < f[0].size(); ++i) {
      const double lhs = std::norm(f[term_x][i]) + std::norm(f[term_p][i]);
      const double rhs = 0.5 * (std::norm(f[term_c1][i]) + std::norm(f[term_c2][i]));
      EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, rhs));
    }
}

TEST(Forward, VacuumStateIsFlat) {
  auto p = four_mode_params();
  p.squeezing_db = {0.0, 0.0, 0.0, 0.0};
  const auto s = make_setup(p);
  const auto fm = s.model();
  const auto syn = synthesize_spectrogram(s.state, fm, true);
  const auto vac = vacuum_spectrogram(fm);
  EXPECT_EQ(vac.kind, SpectrogramKind::vacuum);
  for (std::size_t i = 0; i < syn.values.size(); ++i)
    EXPECT_NEAR(syn.values[i] / vac.values[i], 1.0, 1e-9);
}

TEST(Forward, LinearInEachVariance) {
  auto s = make_setup(oracle_params());
  const auto fm = s.model();
  const auto base = synthesize_spectrogram(s.state, fm, false);
  const auto tf = synthesize_term_fields(s.state, fm);
  const double vx = s.state.var_x[1];
  s.state.var_x[1] = 2 * vx;
  const auto doubled = synthesize_spectrogram(s.state, fm, false);
  const auto b = fm.to_delay_major(base), d = fm.to_delay_major(doubled);
  const double peak = *std::max_element(b.begin(), b.end());
  for (std::size_t i = 0; i < b.size(); ++i)
    EXPECT_NEAR(d[i] - b[i], vx * std::norm(tf.modes[1][term_x][i]), 1e-12 * peak);
}

TEST(Forward, QuarterTurnSwapsQuadratures) {
  auto s = make_setup(oracle_params());
  const auto fm = s.model();
  const auto base = synthesize_spectrogram(s.state, fm, true);
  std::swap(s.state.var_x[0], s.state.var_p[0]);
  for (auto& v : s.state.basis.modes[0].samples) v *= cplx(0.0, 1.0);
  const auto turned = synthesize_spectrogram(s.state, fm, true);
  EXPECT_LT(max_rel(turned.values, base.values), 1e-10);
}

TEST(Forward, GatePhaseEqualsHalfAngleModeRotation) {
  // A global pump phase phi0 shifts delta_phi by phi0/2, which rotates the
  // measured quadrature like rotating every mode by exp(i phi0/2).
  auto s = make_setup(oracle_params());
  const double phi0 = 0.9;
  auto gp = s.gate;
  for (auto& e : gp.envelope) e *= std::polar(1.0, phi0);
  const ForwardModel rotated_gate(gate_functions(gp), s.dg);
  const auto a = synthesize_spectrogram(s.state, rotated_gate, true);
  const auto tfa = synthesize_term_fields(s.state, rotated_gate);
  const auto tfb0 = synthesize_term_fields(s.state, s.model());
  auto st = s.state;
  for (auto& m : st.basis.modes)
    for (auto& v : m.samples) v *= std::polar(1.0, phi0 / 2);
  const auto b = synthesize_spectrogram(st, s.model(), true);
  EXPECT_LT(max_rel(a.values, b.values), 1e-10);
  for (std::size_t q = 0; q < tfa.modes.size(); ++q)
    for (Term t : {term_c1, term_c2})
      for (std::size_t i = 0; i < tfa.modes[q][t].size(); ++i)
        EXPECT_NEAR(std::abs(tfa.modes[q][t][i]), std::abs(tfb0.modes[q][t][i]), 1e-10 * (1 + std::abs(tfb0.modes[q][t][i])));
}

TEST(Forward, UnitGateConjugateTermIgnoresDelay) {
  TimeGrid tg(128, 2.0);
  const double ws = 1.1;
  auto gf = gate_functions(sampled_gate(tg, CVec(tg.n_t(), 0.0), 1.0, ws));
  auto dg = DelayGrid::centered(tg, 16, 3);
  std::vector<double> db{3.0};
  auto st = hermite_gaussian_state(tg, db, 12.0, 0.5, ws);
  auto tf = synthesize_term_fields(st, gf, dg);
  const std::size_t n = tg.n_t();
  for (std::size_t m = 1; m < dg.n_tau(); ++m)
    for (std::size_t k = 0; k < n; ++k)
      EXPECT_NEAR(std::abs(tf.modes[0][term_c2][m * n + k]), std::abs(tf.modes[0][term_c2][k]), 1e-10);
}

TEST(Forward, RealModeWithFlatPhaseHasNoXTerm) {
  TimeGrid tg(128, 2.0);
  auto gf = gate_functions(chirped_gaussian_gate(tg, 60.0, 0.0, 30.0, 0.0));
  auto dg = DelayGrid::centered(tg, 16, 2);
  std::vector<double> db{3.0, 1.0};
  auto st = hermite_gaussian_state(tg, db, 12.0, 0.0, 0.0);
  auto tf = synthesize_term_fields(st, gf, dg);
  for (const auto& f : tf.modes)
    for (const auto& v : f[term_x]) EXPECT_EQ(std::abs(v), 0.0);
}

TEST(Forward, SqueezingGivesNegativeSubtractedMinimum) {
  const auto s = make_setup(three_mode_params());
  const auto fm = s.model();
  const auto raw = synthesize_spectrogram(s.state, fm, true);
  const auto sub = vacuum_subtract(raw, vacuum_spectrogram(fm));
  EXPECT_EQ(sub.kind, SpectrogramKind::vacuum_subtracted);
  EXPECT_LT(sub.min(), 0.0);
  const auto direct = synthesize_vacuum_subtracted(s.state, fm);
  EXPECT_LT(direct.min(), 0.0);
  for (std::size_t i = 0; i < sub.values.size(); ++i)
    EXPECT_NEAR(sub.values[i], direct.values[i], 1e-9 * raw.max());
}

TEST(Forward, AntiSqueezedOnlyStaysNonNegative) {
  auto s = make_setup(three_mode_params());
  for (std::size_t q = 0; q < 3; ++q) s.state.var_x[q] = s.state.var_p[q] = 1.0;
  const auto fm = s.model();
  const auto sub = synthesize_vacuum_subtracted(s.state, fm);
  EXPECT_GE(sub.min(), -1e-9 * sub.max());
}

TEST(Forward, SubtractingVacuumFromItselfIsZero) {
  const auto s = make_setup(oracle_params());
  const auto fm = s.model();
  auto vac = vacuum_spectrogram(fm);
  auto raw = vac;
  raw.kind = SpectrogramKind::raw;
  const auto z = vacuum_subtract(raw, vac);
  for (double v : z.values) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(vacuum_subtract(vac, vac), std::invalid_argument);
}

TEST(Forward, CompleteBasisReachesVacuumLevel) {
  auto p = four_mode_params();
  p.mode_t0 = 20.0;
  p.mode_chirp = 0.0;
  p.squeezing_db.clear();
  auto s = make_setup(p);
  for (int n = 0; n < 40; ++n) {
    s.state.basis.modes.push_back(place_on_carrier(s.tg, hermite_gaussian_mode(s.tg, n, 20.0, 0.0, 40), p.w_s));
    s.state.var_x.push_back(0.25);
    s.state.var_p.push_back(0.25);
    s.state.angle.push_back(0.0);
  }
  const auto fm = s.model();
  const auto sum = synthesize_spectrogram(s.state, fm, false);
  // center frequency, zero delay
  const double centre = sum.at(fm.n_t() / 2, fm.n_tau() / 2);
  EXPECT_NEAR(centre / fm.vacuum_level(), 1.0, 0.01);
}

TEST(Forward, PeakNormalizationIsRecorded) {
  const auto s = make_setup(oracle_params());
  auto spec = synthesize_spectrogram(s.state, s.model(), true);
  const double peak = spec.max();
  spec.normalize_peak();
  EXPECT_DOUBLE_EQ(spec.max(), 1.0);
  EXPECT_DOUBLE_EQ(spec.normalization, peak);
}

TEST(Forward, RejectsMismatchAndBadWeights) {
  auto s = make_setup(oracle_params());
  const auto fm = s.model();
  auto bad = s.state;
  bad.var_x[0] = -0.1;
  EXPECT_THROW(synthesize_spectrogram(bad, fm, true), StateError);
  auto other = s.state;
  other.basis.modes[0].samples.resize(64);
  EXPECT_THROW(synthesize_term_fields(other, fm), GridMismatch);
  auto wrong_carrier = s.state;
  wrong_carrier.w_s = 0.5;
  EXPECT_THROW(synthesize_term_fields(wrong_carrier, fm), GridMismatch);
}
