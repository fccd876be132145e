#pragma once
// Wall-clock cost of retrieval iterations, for the scaling benchmark.

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "presets.hpp"
#include "retrieval.hpp"

namespace mmgfrog {

struct BenchPoint {
  std::size_t n_modes = 0;
  std::size_t n_w = 0;
  std::size_t n_tau = 0;
  std::size_t iterations = 0;
  double seconds_per_iteration = 0.0;
};

/**
 * Times `iterations` retrieval iterations with M modes on the setup's
 * noiseless spectrogram. Uses the fixed schedule, whose cost per iteration
 * does not depend on line-search luck; convergence stopping is off.
 * Best of `repeats` runs.
 */
inline BenchPoint time_iterations(const Setup& s, std::size_t n_modes, std::size_t iterations, std::size_t repeats = 3) {
  if (n_modes < 1 || iterations < 1 || repeats < 1) throw std::invalid_argument("bench needs M, iterations and repeats >= 1");
  const auto gate = s.gate_fn();
  const auto meas = synthesize_vacuum_subtracted(s.state, ForwardModel(gate, s.dg));
  RetrievalConfig cfg;
  cfg.n_modes = n_modes;
  cfg.max_iters = iterations + 1;  // the last pass only records the loss
  cfg.step_schedule = StepSchedule::fixed;
  cfg.convergence_window = 0;
  cfg.variance_refit_iters = 1;
  BenchPoint p{n_modes, meas.n_w(), meas.n_tau(), iterations, 0.0};
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)retrieve(meas, gate, cfg);
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  p.seconds_per_iteration = best / static_cast<double>(iterations);
  return p;
}

/// Least-squares slope of log y against log x; 1 means linear scaling.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("slope needs two or more matching points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace mmgfrog
