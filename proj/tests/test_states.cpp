#include <gtest/gtest.h>

#include "mmgfrog/states.hpp"

using namespace mmgfrog;

namespace {

// Physicists' Hermite polynomials written out, for comparison with the recurrence.
double hermite_poly(int n, double x) {
  switch (n) {
    case 0: return 1.0;
    case 1: return 2 * x;
    case 2: return 4 * x * x - 2;
    case 3: return 8 * x * x * x - 12 * x;
    case 4: return 16 * std::pow(x, 4) - 48 * x * x + 12;
  }
  return 0.0;
}

}  // namespace

TEST(Squeezing, DecibelConversion) {
  EXPECT_NEAR(squeezing_db_to_variance(3.0), 0.12529, 1e-5);
  EXPECT_NEAR(squeezing_db_to_variance(-3.0), 0.49881, 1e-5);
  EXPECT_DOUBLE_EQ(squeezing_db_to_variance(0.0), 0.25);
  EXPECT_NEAR(variance_to_squeezing_db(squeezing_db_to_variance(4.2)), 4.2, 1e-12);
}

TEST(Hermite, RecurrenceMatchesClosedForm) {
  const double pi = std::numbers::pi;
  const double fact[] = {1, 1, 2, 6, 24};
  for (int n = 0; n <= 4; ++n)
    for (double x : {-2.3, -0.4, 0.0, 0.7, 3.1}) {
      const double ref = hermite_poly(n, x) * std::exp(-x * x / 2) / std::sqrt(std::pow(2.0, n) * fact[n] * std::sqrt(pi));
      EXPECT_NEAR(hermite_function(n, x), ref, 1e-13) << n << " " << x;
    }
}

TEST(Hermite, GroundStatePeak) {
  TimeGrid tg(1024, 0.5);
  auto m = hermite_gaussian_mode(tg, 0, 30.0, 0.0);
  EXPECT_NEAR(std::abs(m.samples[512]), std::pow(std::numbers::pi * 900.0, -0.25), 1e-12);
}

TEST(Hermite, ChirpedBasisOrthonormal) {
  TimeGrid tg(1024, 0.5);
  ModeBasis b;
  for (int n = 0; n < 8; ++n) b.modes.push_back(hermite_gaussian_mode(tg, n, 30.0, 1.5));
  EXPECT_LT(b.orthonormality_error(tg), 1e-10);
}

TEST(Hermite, OrderAndResolutionLimits) {
  TimeGrid tg(256, 2.0);
  EXPECT_THROW(hermite_gaussian_mode(tg, -1, 30.0, 0.0), StateError);
  EXPECT_THROW(hermite_gaussian_mode(tg, kMaxHermiteOrder + 1, 30.0, 0.0), StateError);
  EXPECT_THROW(hermite_gaussian_mode(tg, 0, 5.0, 0.0), StateError);
}

TEST(State, HeisenbergBound) {
  TimeGrid tg(256, 2.0);
  std::vector<double> db{3.0};
  auto st = hermite_gaussian_state(tg, db, 30.0, 0.0, 0.0);
  EXPECT_NO_THROW(st.validate(tg));
  st.var_x[0] = 0.1;
  st.var_p[0] = 0.625;
  EXPECT_NO_THROW(st.validate(tg));
  st.var_p[0] = 2.0;
  EXPECT_NO_THROW(st.validate(tg));
  st.var_p[0] = 0.6;
  EXPECT_THROW(st.validate(tg), StateError);
  st.var_x[0] = -0.1;
  st.var_p[0] = 1.0;
  EXPECT_THROW(st.validate(tg), StateError);
}

TEST(Hermite, OddOrderVanishesAtCenter) {
  TimeGrid tg(256, 2.0);
  EXPECT_EQ(std::abs(hermite_gaussian_mode(tg, 1, 30.0, 0.0).samples[128]), 0.0);
  auto a = hermite_gaussian_mode(tg, 0, 30.0, 0.8), b = hermite_gaussian_mode(tg, 2, 30.0, 0.8);
  EXPECT_LT(std::abs(overlap(tg, a.samples, b.samples)), 1e-10);
}

TEST(Squeezing, PartnerProductIsQuarterSquared) {
  for (double db : {0.5, 3.0, 10.0}) EXPECT_NEAR(squeezing_db_to_variance(db) * squeezing_db_to_variance(-db), 1.0 / 16, 1e-17);
  EXPECT_NEAR(squeezing_db_to_variance(10 * std::log10(2.0)), 0.125, 1e-15);
  EXPECT_NEAR(squeezing_db_to_variance(4.0), 0.09953, 1e-5);
}

TEST(State, PureSqueezedSaturatesBound) {
  TimeGrid tg(256, 2.0);
  std::vector<double> db{3.0, 5.0};
  auto st = hermite_gaussian_state(tg, db, 30.0, 1.0, 1.8836);
  for (std::size_t n = 0; n < 2; ++n) EXPECT_NEAR(st.var_x[n] * st.var_p[n], 1.0 / 16.0, 1e-15);
  EXPECT_NO_THROW(st.validate(tg));
}

TEST(State, NonOrthogonalBasisRejected) {
  TimeGrid tg(256, 2.0);
  std::vector<double> db{3.0, 2.0};
  auto st = hermite_gaussian_state(tg, db, 30.0, 0.0, 0.0);
  st.basis.modes[1] = st.basis.modes[0];
  EXPECT_THROW(st.validate(tg), StateError);
}

TEST(State, CarrierRoundTrip) {
  TimeGrid tg(256, 2.0);
  auto m = hermite_gaussian_mode(tg, 2, 30.0, 0.7);
  auto back = strip_carrier(tg, place_on_carrier(tg, m, 1.8836), 1.8836);
  for (std::size_t j = 0; j < tg.n_t(); ++j) EXPECT_NEAR(std::abs(back.samples[j] - m.samples[j]), 0.0, 1e-15);
}

TEST(State, AngleFoldedIntoPhase) {
  TimeGrid tg(256, 2.0);
  std::vector<double> db{3.0};
  auto st = hermite_gaussian_state(tg, db, 30.0, 0.0, 0.0);
  const auto before = st.basis.modes[0].samples;
  st.angle[0] = std::numbers::pi / 2;
  st = apply_squeezing_angle(st);
  EXPECT_EQ(st.angle[0], 0.0);
  for (std::size_t j = 0; j < tg.n_t(); ++j)
    EXPECT_NEAR(std::abs(st.basis.modes[0].samples[j] - cplx(0, 1) * before[j]), 0.0, 1e-15);
}

TEST(State, WindowCheck) {
  TimeGrid tg(128, 2.0);
  ModeBasis b;
  b.modes.push_back(hermite_gaussian_mode(tg, 3, 30.0, 0.0));
  EXPECT_THROW(check_window(tg, b), StateError);
  TimeGrid wide(512, 2.0);
  ModeBasis c;
  c.modes.push_back(hermite_gaussian_mode(wide, 3, 30.0, 0.0));
  EXPECT_NO_THROW(check_window(wide, c));
}
