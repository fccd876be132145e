#pragma once
// Ready-made simulation setups used by the CLI defaults, tests and the
// acceptance runner.

#include <vector>

#include "forward.hpp"
#include "gate.hpp"
#include "states.hpp"

namespace mmgfrog {

/// Carrier of a 1 um state, rad/fs.
inline constexpr double kDefaultCarrier = 1.8836515673088532;

struct Setup {
  TimeGrid tg;
  DelayGrid dg;
  GatePulse gate;
  GaussianStateSpec state;

  GateFunctions gate_fn() const { return gate_functions(gate); }
  ForwardModel model() const { return ForwardModel(gate_fn(), dg); }
};

struct SetupParams {
  std::size_t n_t = 256;
  double dt = 2.0;
  std::size_t n_tau = 96;
  std::size_t delay_step = 2;  // samples
  double w_s = kDefaultCarrier;
  double gate_fwhm = 100.0;
  double gate_chirp = 4.0;
  double gain_db = 50.0;
  double mode_t0 = 30.0;
  double mode_chirp = 1.0;
  std::vector<double> squeezing_db{3.0, 5.0, 2.0, 4.0};
};

inline Setup make_setup(const SetupParams& p) {
  Setup s;
  s.tg = TimeGrid(p.n_t, p.dt);
  s.dg = DelayGrid::centered(s.tg, p.n_tau, p.delay_step);
  s.gate = chirped_gaussian_gate(s.tg, p.gate_fwhm, p.gate_chirp, p.gain_db, p.w_s);
  s.state = hermite_gaussian_state(s.tg, p.squeezing_db, p.mode_t0, p.mode_chirp, p.w_s);
  return s;
}

/// Four 30-fs chirped modes (orders 0-3) with distinct squeezing, 100-fs gate at 50 dB.
inline SetupParams four_mode_params() { return SetupParams{}; }

/// Three 25-fs modes squeezed by 3, 4 and 2 dB.
inline SetupParams three_mode_params() {
  SetupParams p;
  p.mode_t0 = 25.0;
  p.squeezing_db = {3.0, 4.0, 2.0};
  return p;
}

/// Reduced grid and three modes, sized for repeated noisy retrievals.
inline SetupParams small_params() {
  SetupParams p;
  p.n_t = 128;
  p.dt = 4.0;
  p.n_tau = 48;
  p.delay_step = 2;
  p.squeezing_db = {3.0, 5.0, 2.0};
  return p;
}

}  // namespace mmgfrog
