#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "homlab/errors.hpp"
#include "homlab/stark.hpp"

using namespace homlab;
using namespace homlab::stark;

TEST_CASE("stark_branch") {
  StarkModel zero;
  for (double e : {-50.0, 0.0, 3.0}) {
    CHECK(stark_branch(zero, e, Branch::plus) == 0.0);
    CHECK(stark_branch(zero, e, Branch::minus) == 0.0);
  }
  StarkModel lin;
  lin.mu_tin = 2.5e6;
  CHECK(stark_branch(lin, 4.0, Branch::plus) == doctest::Approx(-1e7));
  CHECK(stark_branch(lin, 5.0, Branch::plus) - stark_branch(lin, 4.0, Branch::plus) == doctest::Approx(-2.5e6));

  StarkModel m;
  m.mu_tin = 1.0;
  m.alpha = 2.0;
  m.trap_field = 0.5;
  CHECK(stark_branch(m, 1.0, Branch::plus) == doctest::Approx(-3.75).epsilon(1e-15));
  CHECK(stark_branch(m, 1.0, Branch::minus) == doctest::Approx(-0.75).epsilon(1e-15));
}

TEST_CASE("trap_occupation") {
  TrapParams t;
  t.a0 = 4.0;
  t.mu_trap = 0.5;
  CHECK(trap_occupation(t, -4.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(trap_occupation(t, 1e6) == 0.0);
  CHECK(trap_occupation(t, -1e6) == 1.0);
  CHECK(trap_occupation(t, 1e300) == 0.0);
  CHECK_FALSE(std::isnan(trap_occupation(t, -1e300)));

  TrapParams flat;
  flat.a0 = 1.0;
  flat.mu_trap = 0.0;
  flat.thermal_energy = 1.0;
  for (double e : {-100.0, 0.0, 100.0}) CHECK(trap_occupation(flat, e) == doctest::Approx(0.268941).epsilon(1e-6));

  double prev = 2.0;
  for (int i = -200; i <= 200; ++i) {
    const double p = trap_occupation(fixtures::kinked_trap(), i * 0.5);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(p <= prev);
    prev = p;
  }
  TrapParams bad;
  bad.thermal_energy = 0.0;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("stark_total") {
  const StarkModel m = fixtures::kinked_model();
  const TrapParams t = fixtures::kinked_trap();

  SUBCASE("midpoint mixes branches equally") {
    const double v = kink_voltage(m, t);
    CHECK(v == doctest::Approx(-50.0).epsilon(1e-14));
    CHECK(trap_occupation(t, m.field(v)) == 0.5);
    const double mean = 0.5 * (stark_branch(m, m.field(v), Branch::plus) + stark_branch(m, m.field(v), Branch::minus));
    CHECK(stark_total(m, t, v) == doctest::Approx(mean).epsilon(1e-14));
  }
  SUBCASE("no trap field: total equals either branch") {
    StarkModel flat = m;
    flat.trap_field = 0.0;
    for (int v = -100; v <= 130; v += 7) {
      CHECK(stark_total(flat, t, v) == stark_branch(flat, flat.field(v), Branch::plus));
    }
  }
  SUBCASE("slope changes by more than 2x across the kink") {
    const auto slope = [&](double v) { return (stark_total(m, t, v + 0.01) - stark_total(m, t, v - 0.01)) / 0.02; };
    const double outside = slope(-70.0);
    const double inside = slope(-50.0);
    CHECK(std::abs(outside) > 0.0);
    CHECK((std::abs(inside / outside) > 2.0 || std::abs(outside / inside) > 2.0 || inside * outside < 0.0));
    CHECK(outside == doctest::Approx(4.68e6).epsilon(0.01));
    CHECK(inside == doctest::Approx(-5.83e6).epsilon(0.01));
  }
  SUBCASE("continuity on a 1 mV grid") {
    double max_step = 0.0;
    for (int i = -100000; i < 130000; i += 10) {
      const double a = stark_total(m, t, i * 1e-3);
      const double b = stark_total(m, t, (i + 1) * 1e-3);
      max_step = std::max(max_step, std::abs(b - a));
    }
    double max_step_half = 0.0;
    for (int i = -100000; i < 130000; i += 10) {
      const double a = stark_total(m, t, i * 1e-3);
      const double b = stark_total(m, t, (i + 0.5) * 1e-3);
      max_step_half = std::max(max_step_half, std::abs(b - a));
    }
    CHECK(max_step < 1e5);
    CHECK(max_step_half == doctest::Approx(0.5 * max_step).epsilon(0.05));
  }
  SUBCASE("field mapping") {
    StarkModel scaled = m;
    scaled.voltage_to_field = 2.0;
    scaled.field_offset = 10.0;
    CHECK(stark_total(scaled, t, 5.0) == doctest::Approx(stark_total(m, t, 20.0)));
  }
}

TEST_CASE("tuning range of the synthetic model") {
  const double range = tuning_range(fixtures::kinked_model(), fixtures::kinked_trap(), -100.0, 130.0);
  CHECK(range == doctest::Approx(4.158e9).epsilon(1e-3));
  CHECK(range <= 4.5e9);
  CHECK_THROWS_AS(tuning_range(fixtures::kinked_model(), fixtures::kinked_trap(), 1.0, 1.0), DomainError);
}

TEST_CASE("voltage_for_detuning") {
  SUBCASE("fixed point") {
    const StarkModel m = fixtures::kinked_model();
    const TrapParams t = fixtures::kinked_trap();
    const double target = stark_total(m, t, 0.0);
    const auto sol = voltage_for_detuning(m, t, target, {-20.0, 20.0});
    CHECK(std::abs(sol.voltage) < 1e-3);
    CHECK(std::abs(sol.residual_hz) < kDetuningTolerance);
  }
  SUBCASE("linear inversion") {
    StarkModel lin;
    lin.mu_tin = 1e7;
    const auto sol = voltage_for_detuning(lin, {}, 800e6, {-130.0, 130.0});
    CHECK(sol.voltage == doctest::Approx(-80.0).epsilon(1e-9));
    CHECK(sol.unique);
  }
  SUBCASE("kinked model agrees with a dense grid scan") {
    const StarkModel m = fixtures::kinked_model();
    const TrapParams t = fixtures::kinked_trap();
    // 140 MHz is crossed on the rising branch and twice more around the kink
    const double target = 140e6;
    const std::pair<double, double> bracket{-100.0, -42.0};
    const auto sol = voltage_for_detuning(m, t, target, bracket);
    // brute force: first sign change on a 1e6-point grid
    const int n = 1000000;
    const double h = (bracket.second - bracket.first) / n;
    double grid_root = NAN;
    double prev = stark_total(m, t, bracket.first) - target;
    for (int i = 1; i <= n; ++i) {
      const double v = bracket.first + i * h;
      const double f = stark_total(m, t, v) - target;
      if ((prev < 0.0) != (f < 0.0) || f == 0.0) {
        grid_root = v - h * f / (f - prev);
        break;
      }
      prev = f;
    }
    CHECK(std::abs(sol.voltage - grid_root) < 1e-3);
    CHECK(std::abs(sol.residual_hz) < kDetuningTolerance);
    CHECK_FALSE(sol.unique);

    // a bracket holding only the crossing just past the kink
    const auto far = voltage_for_detuning(m, t, 150e6, {-48.0, -35.0});
    CHECK(far.unique);
    CHECK(far.voltage > -48.0);
    CHECK(far.voltage < -40.0);
    CHECK(std::abs(stark_total(m, t, far.voltage) - 150e6) < kDetuningTolerance);
  }
  SUBCASE("several crossings: nearest the lower end, flagged") {
    StarkModel cubic;  // 1e4 v^3 - 3e6 v: roots at 0 and +/-sqrt(300)
    cubic.mu_tin = 3e6;
    cubic.beta = -6e4;
    const auto sol = voltage_for_detuning(cubic, {}, 0.0, {-30.0, 30.0});
    CHECK_FALSE(sol.unique);
    CHECK(std::abs(sol.voltage + std::sqrt(300.0)) < kDetuningTolerance / 6e6);  // slope 6 MHz/V at the root
  }
  SUBCASE("no bracket") {
    StarkModel lin;
    lin.mu_tin = 1e7;
    CHECK_THROWS_AS(voltage_for_detuning(lin, {}, 5e9, {-100.0, 130.0}), RootNotBracketed);
    CHECK_THROWS_AS(voltage_for_detuning(lin, {}, 0.0, {5.0, -5.0}), DomainError);
  }
}

TEST_CASE("model validation") {
  StarkModel m;
  m.voltage_to_field = 0.0;
  CHECK_THROWS_AS(m.validate(), DomainError);
  m.voltage_to_field = 1.0;
  m.alpha = NAN;
  CHECK_THROWS_AS(m.validate(), DomainError);
  CHECK_THROWS_AS(kink_voltage(fixtures::kinked_model(), TrapParams{}), DomainError);
}

TEST_CASE("tuning curve CSV") {
  const auto curve = fixtures::tuning_curve(fixtures::kinked_model(), fixtures::kinked_trap(), -100, 130, 47, 2e6);
  std::stringstream io;
  write_tuning_csv(curve, io);
  const auto back = read_tuning_csv(io);
  REQUIRE(back.points.size() == curve.points.size());
  CHECK(back.has_sigma);
  for (std::size_t i = 0; i < back.points.size(); ++i) {
    CHECK(back.points[i].voltage == curve.points[i].voltage);
    CHECK(back.points[i].detuning == curve.points[i].detuning);
    CHECK(back.points[i].sigma == curve.points[i].sigma);
  }

  std::stringstream two("voltage_V,detuning_Hz\n-1,5\n0,0\n2,-10\n");
  const auto plain = read_tuning_csv(two);
  CHECK_FALSE(plain.has_sigma);
  CHECK(plain.points.size() == 3);

  std::stringstream bad_header("volts,hz\n1,2\n");
  CHECK_THROWS_AS(read_tuning_csv(bad_header), FormatError);

  const std::string text = "voltage_V,detuning_Hz\n-1,5\n0,abc\n";
  std::stringstream bad_row(text);
  try {
    read_tuning_csv(bad_row);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.byte_offset() == text.find("0,abc"));
  }

  std::stringstream unsorted("voltage_V,detuning_Hz\n1,5\n0,0\n");
  CHECK_THROWS(read_tuning_csv(unsorted));
}
