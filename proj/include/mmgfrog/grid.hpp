#pragma once
/**
 * @file grid.hpp
 * @brief Sampling grids shared by every module and the discrete Fourier
 * transform used for all spectra.
 *
 * Conventions: time in femtoseconds, angular frequency in rad/fs. Time
 * samples are t_j = (j - n_t/2) dt, frequencies w_k = w_center + (k - n_t/2) dw
 * with dw = 2 pi / (n_t dt). The transform approximates the continuous
 * F{f}(w) = \int f(t) exp(-i w t) dt, which makes
 *   sum |f|^2 dt == sum |F|^2 dw / (2 pi)
 * hold exactly.
 */

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmgfrog {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;
using RVec = std::vector<double>;

/// Raised when two objects that must share a grid do not.
class GridMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for grids that violate their construction invariants.
class GridError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline bool is_power_of_two(std::size_t n) { return n >= 4 && (n & (n - 1)) == 0; }

class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(std::size_t n_t, double dt_fs) : n_t_(n_t), dt_(dt_fs) {
    if (!is_power_of_two(n_t)) throw GridError("time grid size must be a power of two >= 4, got " + std::to_string(n_t));
    if (!(dt_fs > 0.0) || !std::isfinite(dt_fs)) throw GridError("time step must be positive");
  }

  std::size_t n_t() const { return n_t_; }
  double dt() const { return dt_; }
  /// Time of the first sample; t = 0 sits at index n_t/2.
  double t0_offset() const { return -static_cast<double>(n_t_ / 2) * dt_; }
  double time(std::size_t j) const { return (static_cast<double>(j) - static_cast<double>(n_t_ / 2)) * dt_; }
  double span() const { return static_cast<double>(n_t_) * dt_; }
  RVec times() const {
    RVec t(n_t_);
    for (std::size_t j = 0; j < n_t_; ++j) t[j] = time(j);
    return t;
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  std::size_t n_t_ = 0;
  double dt_ = 0.0;
};

class FreqGrid {
 public:
  FreqGrid() = default;
  FreqGrid(std::size_t n_w, double dw, double w_center) : n_w_(n_w), dw_(dw), w_center_(w_center) {
    if (n_w == 0 || !(dw > 0.0)) throw GridError("frequency grid needs n_w > 0 and dw > 0");
  }
  /// The DFT-conjugate grid of `tg`, reported relative to `w_center`.
  static FreqGrid conjugate_to(const TimeGrid& tg, double w_center) {
    return FreqGrid(tg.n_t(), 2.0 * std::numbers::pi / tg.span(), w_center);
  }

  std::size_t n_w() const { return n_w_; }
  double dw() const { return dw_; }
  double w_center() const { return w_center_; }
  /// Frequency relative to the center.
  double relative(std::size_t k) const { return (static_cast<double>(k) - static_cast<double>(n_w_ / 2)) * dw_; }
  double omega(std::size_t k) const { return w_center_ + relative(k); }

  bool operator==(const FreqGrid&) const = default;

 private:
  std::size_t n_w_ = 0;
  double dw_ = 0.0;
  double w_center_ = 0.0;
};

/// Gate delays tau_m = tau_min + m * dtau. Delays must land on time samples.
class DelayGrid {
 public:
  DelayGrid() = default;
  DelayGrid(std::size_t n_tau, double dtau_fs, double tau_min_fs)
      : n_tau_(n_tau), dtau_(dtau_fs), tau_min_(tau_min_fs) {
    if (n_tau == 0) throw GridError("delay grid must have at least one delay");
    if (!(dtau_fs > 0.0)) throw GridError("delay step must be positive");
  }
  /// Centered grid tau_m = (m - n_tau/2) * step * dt.
  static DelayGrid centered(const TimeGrid& tg, std::size_t n_tau, std::size_t step_samples) {
    if (step_samples == 0) throw GridError("delay step must be at least one sample");
    const double dtau = static_cast<double>(step_samples) * tg.dt();
    return DelayGrid(n_tau, dtau, -static_cast<double>(n_tau / 2) * dtau);
  }

  std::size_t n_tau() const { return n_tau_; }
  double dtau() const { return dtau_; }
  double tau_min() const { return tau_min_; }
  double tau(std::size_t m) const { return tau_min_ + static_cast<double>(m) * dtau_; }

  /// Integer sample shift for delay m. Throws if the delay is not a whole
  /// number of time steps.
  long shift_samples(std::size_t m, const TimeGrid& tg) const {
    const double s = tau(m) / tg.dt();
    const double r = std::round(s);
    if (std::abs(s - r) > 1e-9 * std::max(1.0, std::abs(s)))
      throw GridError("delay " + std::to_string(tau(m)) + " fs is not a multiple of dt");
    return static_cast<long>(r);
  }
  void validate_against(const TimeGrid& tg) const {
    for (std::size_t m = 0; m < n_tau_; ++m) (void)shift_samples(m, tg);
    const double half = 0.5 * tg.span();
    if (std::abs(tau(0)) >= half || std::abs(tau(n_tau_ - 1)) >= half)
      throw GridError("delay range exceeds half the time window");
  }

  bool operator==(const DelayGrid&) const = default;

 private:
  std::size_t n_tau_ = 0;
  double dtau_ = 0.0;
  double tau_min_ = 0.0;
};

/// The three grids that describe a spectrogram.
struct SpectrogramGrid {
  TimeGrid time;
  FreqGrid freq;
  DelayGrid delay;

  static SpectrogramGrid make(const TimeGrid& tg, const DelayGrid& dg, double w_center) {
    dg.validate_against(tg);
    return {tg, FreqGrid::conjugate_to(tg, w_center), dg};
  }
  bool operator==(const SpectrogramGrid&) const = default;
};

namespace detail {

// FFTW plans are created once per (size, direction) and then executed with
// new-array execute, which is thread-safe. Planning itself is not, hence the lock.
inline fftw_plan cached_plan(std::size_t n, int sign) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, int>, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto key = std::make_pair(n, sign);
  if (auto it = plans.find(key); it != plans.end()) return it->second;
  std::vector<fftw_complex> a(n);
  // in-place plan: execution always transforms a buffer onto itself
  fftw_plan p = fftw_plan_dft_1d(static_cast<int>(n), a.data(), a.data(), sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!p) throw std::runtime_error("FFTW planning failed");
  plans.emplace(key, p);
  return p;
}

}  // namespace detail

/**
 * Precomputed transform between a TimeGrid and its conjugate FreqGrid.
 * `forward` evaluates dt * sum_j f_j exp(-i w_k t_j); `adjoint` is its exact
 * Hermitian adjoint (not the inverse). Both operate in place.
 */
class SpectralTransform {
 public:
  SpectralTransform(const TimeGrid& tg, const FreqGrid& fg) : n_(tg.n_t()), pre_(n_), post_(n_) {
    if (fg.n_w() != tg.n_t()) throw GridMismatch("frequency grid size differs from time grid size");
    if (std::abs(fg.dw() * tg.span() - 2.0 * std::numbers::pi) > 1e-9)
      throw GridMismatch("frequency grid is not conjugate to the time grid");
    // exp(-i w_k t_j) = exp(-2 pi i k j / n) (-1)^j (-1)^k exp(-i wc t_j) for n divisible by 4
    for (std::size_t j = 0; j < n_; ++j) {
      const double sgn = (j % 2 == 0) ? 1.0 : -1.0;
      pre_[j] = sgn * std::polar(1.0, -fg.w_center() * tg.time(j));
      post_[j] = sgn * tg.dt();
    }
    fwd_ = detail::cached_plan(n_, FFTW_FORWARD);
    bwd_ = detail::cached_plan(n_, FFTW_BACKWARD);
  }

  std::size_t size() const { return n_; }

  void forward(std::span<cplx> buf) const {
    check(buf.size());
    for (std::size_t j = 0; j < n_; ++j) buf[j] *= pre_[j];
    exec(fwd_, buf);
    for (std::size_t k = 0; k < n_; ++k) buf[k] *= post_[k];
  }

  void adjoint(std::span<cplx> buf) const {
    check(buf.size());
    for (std::size_t k = 0; k < n_; ++k) buf[k] *= post_[k];
    exec(bwd_, buf);
    for (std::size_t j = 0; j < n_; ++j) buf[j] *= std::conj(pre_[j]);
  }

 private:
  void check(std::size_t len) const {
    if (len != n_) throw GridMismatch("signal length " + std::to_string(len) + " != grid size " + std::to_string(n_));
  }
  static void exec(fftw_plan p, std::span<cplx> buf) {
    auto* ptr = reinterpret_cast<fftw_complex*>(buf.data());
    fftw_execute_dft(p, ptr, ptr);
  }

  std::size_t n_;
  CVec pre_;
  RVec post_;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

/// Spectrum of `signal` on the conjugate frequency grid.
inline CVec forward_transform(const TimeGrid& tg, const FreqGrid& fg, std::span<const cplx> signal) {
  if (signal.size() != tg.n_t()) throw GridMismatch("signal length does not match time grid");
  CVec out(signal.begin(), signal.end());
  SpectralTransform(tg, fg).forward(out);
  return out;
}

/// Inverse of forward_transform: f_j = (dw / 2 pi) sum_k F_k exp(i w_k t_j).
inline CVec inverse_transform(const TimeGrid& tg, const FreqGrid& fg, std::span<const cplx> spectrum) {
  if (spectrum.size() != tg.n_t()) throw GridMismatch("spectrum length does not match time grid");
  CVec out(spectrum.begin(), spectrum.end());
  SpectralTransform(tg, fg).adjoint(out);
  const double scale = 1.0 / (tg.dt() * tg.dt() * static_cast<double>(tg.n_t()));
  for (auto& v : out) v *= scale;
  return out;
}

/// Circular shift: out[j] = in[j - steps]; a feature at t moves to t + steps*dt.
template <class T>
std::vector<T> roll(std::span<const T> in, long steps) {
  const long n = static_cast<long>(in.size());
  std::vector<T> out(in.size());
  if (n == 0) return out;
  long s = steps % n;
  if (s < 0) s += n;
  for (long j = 0; j < n; ++j) out[static_cast<std::size_t>((j + s) % n)] = in[static_cast<std::size_t>(j)];
  return out;
}

struct ShiftResult {
  CVec samples;
  /// Energy carried across the window edge, relative to the total.
  double wrapped_fraction = 0.0;
  bool wrap_warning() const { return wrapped_fraction > 1e-10; }
};

/// Delays `signal` by `tau_fs`, which must be a whole number of samples.
inline ShiftResult shift_by_delay(const TimeGrid& tg, std::span<const cplx> signal, double tau_fs) {
  if (signal.size() != tg.n_t()) throw GridMismatch("signal length does not match time grid");
  const double s = tau_fs / tg.dt();
  const double r = std::round(s);
  if (std::abs(s - r) > 1e-9 * std::max(1.0, std::abs(s)))
    throw GridError("delay " + std::to_string(tau_fs) + " fs is not a multiple of dt");
  const long steps = static_cast<long>(r);
  ShiftResult res{roll<cplx>(signal, steps), 0.0};
  const long n = static_cast<long>(tg.n_t());
  double total = 0.0, wrapped = 0.0;
  for (long j = 0; j < n; ++j) {
    const double e = std::norm(signal[static_cast<std::size_t>(j)]);
    total += e;
    const long dest = j + steps;
    if (dest < 0 || dest >= n) wrapped += e;
  }
  res.wrapped_fraction = total > 0.0 ? wrapped / total : 0.0;
  return res;
}

inline double energy(const TimeGrid& tg, std::span<const cplx> s) {
  double e = 0.0;
  for (const auto& v : s) e += std::norm(v);
  return e * tg.dt();
}

}  // namespace mmgfrog
