#include "homlab/stark.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "homlab/errors.hpp"

namespace homlab::stark {

namespace {

constexpr double kLogisticSaturation = 700.0;
constexpr int kScanIntervals = 4096;

double polynomial_shift(const StarkModel& m, double x) {
  const double x2 = x * x;
  return -m.mu_tin * x - 0.5 * m.alpha * x2 - (m.beta / 6.0) * x2 * x - (m.gamma_4 / 24.0) * x2 * x2;
}

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

void StarkModel::validate() const {
  for (double v : {mu_tin, alpha, beta, gamma_4, field_offset, trap_field, voltage_to_field}) {
    if (!std::isfinite(v)) throw DomainError("StarkModel: coefficients must be finite");
  }
  if (voltage_to_field == 0.0) throw DomainError("StarkModel: voltage_to_field must be non-zero");
}

void TrapParams::validate() const {
  if (!std::isfinite(a0) || !std::isfinite(mu_trap)) throw DomainError("TrapParams: non-finite value");
  if (!(thermal_energy > 0.0) || !std::isfinite(thermal_energy)) {
    throw DomainError("TrapParams: thermal_energy must be > 0");
  }
}

double stark_branch(const StarkModel& model, double field, Branch branch) {
  const double x = branch == Branch::plus ? field + model.trap_field : field - model.trap_field;
  return polynomial_shift(model, x);
}

double trap_occupation(const TrapParams& trap, double field) {
  trap.validate();
  const double exponent = (trap.a0 + 2.0 * trap.mu_trap * field) / trap.thermal_energy;
  if (exponent > kLogisticSaturation) return 0.0;
  if (exponent < -kLogisticSaturation) return 1.0;
  return 1.0 / (1.0 + std::exp(exponent));
}

double stark_total(const StarkModel& model, const TrapParams& trap, double voltage) {
  model.validate();
  const double e = model.field(voltage);
  const double p = trap_occupation(trap, e);
  const double minus = stark_branch(model, e, Branch::minus);
  return minus + p * (stark_branch(model, e, Branch::plus) - minus);
}

double kink_voltage(const StarkModel& model, const TrapParams& trap) {
  model.validate();
  trap.validate();
  if (trap.mu_trap == 0.0) throw DomainError("kink_voltage: mu_trap is zero, occupation has no midpoint");
  const double field = -trap.a0 / (2.0 * trap.mu_trap);
  return (field - model.field_offset) / model.voltage_to_field;
}

double tuning_range(const StarkModel& model, const TrapParams& trap, double vmin, double vmax,
                    int samples) {
  if (samples < 2 || !(vmax > vmin)) throw DomainError("tuning_range: need vmax > vmin and >= 2 samples");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int i = 0; i < samples; ++i) {
    const double v = vmin + (vmax - vmin) * i / (samples - 1);
    const double s = stark_total(model, trap, v);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return hi - lo;
}

VoltageSolution voltage_for_detuning(const StarkModel& model, const TrapParams& trap, double target_hz,
                                     std::pair<double, double> bracket) {
  auto [vmin, vmax] = bracket;
  if (!(vmax > vmin)) throw DomainError("voltage_for_detuning: bracket must satisfy vmin < vmax");
  const auto residual = [&](double v) { return stark_total(model, trap, v) - target_hz; };

  const double f_lo = residual(vmin);
  const double f_hi = residual(vmax);
  if (sign_of(f_lo) * sign_of(f_hi) > 0) {
    std::ostringstream msg;
    msg << "target " << target_hz << " Hz is not bracketed by [" << vmin << ", " << vmax << "] V";
    throw RootNotBracketed(msg.str());
  }

  // Scan for every crossing; refine the first one.
  double a = vmin;
  double fa = f_lo;
  double first_a = vmin;
  double first_b = vmax;
  double first_fa = f_lo;
  double first_fb = f_hi;
  int crossings = 0;
  for (int i = 1; i <= kScanIntervals; ++i) {
    const double b = (i == kScanIntervals) ? vmax : vmin + (vmax - vmin) * i / kScanIntervals;
    const double fb = (i == kScanIntervals) ? f_hi : residual(b);
    if (sign_of(fa) == 0 || sign_of(fa) * sign_of(fb) < 0) {
      if (crossings == 0) {
        first_a = a;
        first_b = b;
        first_fa = fa;
        first_fb = fb;
      }
      ++crossings;
    }
    a = b;
    fa = fb;
  }
  if (sign_of(fa) == 0) ++crossings;

  VoltageSolution sol;
  sol.unique = crossings <= 1;
  if (std::abs(first_fa) < kDetuningTolerance) {
    sol.voltage = first_a;
    sol.residual_hz = first_fa;
    return sol;
  }

  // Secant step guarded by bisection.
  double lo = first_a, hi = first_b, flo = first_fa, fhi = first_fb;
  for (int it = 1; it <= 200; ++it) {
    double x = lo - flo * (hi - lo) / (fhi - flo);
    if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
    const double fx = residual(x);
    sol.iterations = it;
    sol.voltage = x;
    sol.residual_hz = fx;
    if (std::abs(fx) < kDetuningTolerance) return sol;
    if (sign_of(fx) == sign_of(flo)) {
      lo = x;
      flo = fx;
    } else {
      hi = x;
      fhi = fx;
    }
    // Keep the bracket shrinking when secant stalls on one side.
    if (it % 3 == 0) {
      const double mid = 0.5 * (lo + hi);
      const double fm = residual(mid);
      if (std::abs(fm) < kDetuningTolerance) {
        sol.voltage = mid;
        sol.residual_hz = fm;
        return sol;
      }
      if (sign_of(fm) == sign_of(flo)) {
        lo = mid;
        flo = fm;
      } else {
        hi = mid;
        fhi = fm;
      }
    }
  }
  throw AccuracyError("voltage_for_detuning: failed to reach 1 kHz tolerance");
}

void TuningCurve::validate() const {
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (!(points[i].voltage > points[i - 1].voltage)) {
      throw PreconditionError("TuningCurve: voltages must be strictly increasing (point " +
                              std::to_string(i) + ")");
    }
  }
}

void write_tuning_csv(const TuningCurve& curve, std::ostream& out) {
  out << (curve.has_sigma ? "voltage_V,detuning_Hz,sigma_Hz\n" : "voltage_V,detuning_Hz\n");
  out << std::setprecision(17);
  for (const auto& p : curve.points) {
    out << p.voltage << ',' << p.detuning;
    if (curve.has_sigma) out << ',' << p.sigma;
    out << '\n';
  }
}

void write_tuning_csv(const TuningCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tuning_csv(curve, out);
}

TuningCurve read_tuning_csv(std::istream& in) {
  TuningCurve curve;
  std::string line;
  std::uint64_t offset = 0;
  if (!std::getline(in, line)) throw FormatError("tuning CSV: missing header", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line == "voltage_V,detuning_Hz,sigma_Hz") {
    curve.has_sigma = true;
  } else if (line != "voltage_V,detuning_Hz") {
    throw FormatError("tuning CSV: unexpected header '" + line + "'", 0);
  }
  offset += line.size() + 1;
  std::uint64_t row = 0;
  while (std::getline(in, line)) {
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    TuningPoint p;
    char comma1 = 0, comma2 = 0;
    fields >> p.voltage >> comma1 >> p.detuning;
    bool ok = !fields.fail() && comma1 == ',';
    if (ok && curve.has_sigma) {
      fields >> comma2 >> p.sigma;
      ok = !fields.fail() && comma2 == ',' && p.sigma > 0.0;
    }
    if (!ok) throw FormatError("tuning CSV: malformed row", line_offset, row);
    curve.points.push_back(p);
    ++row;
  }
  try {
    curve.validate();
  } catch (const PreconditionError& e) {
    throw FormatError(e.what(), offset);
  }
  return curve;
}

TuningCurve read_tuning_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tuning_csv(in);
}

}  // namespace homlab::stark
