#pragma once

// Stark tuning of an optical transition in the presence of a single charge
// trap. The trap shifts the local field by +/- trap_field depending on its
// occupation; the observed shift is the occupation-weighted mix of the two
// fourth-order polynomial branches.
//
// Shifts are in Hz (Planck's constant absorbed into the coefficients).

#include <filesystem>
#include <iosfwd>
#include <utility>
#include <vector>

namespace homlab::stark {

struct StarkModel {
  double mu_tin = 0.0;        // linear coefficient [Hz / field-unit]
  double alpha = 0.0;         // second order [Hz / field-unit^2]
  double beta = 0.0;          // third order
  double gamma_4 = 0.0;       // fourth order
  double field_offset = 0.0;  // static internal field [field-units]
  double trap_field = 0.0;    // field offset produced by the trap [field-units]
  double voltage_to_field = 1.0;

  /// Throws DomainError if voltage_to_field == 0 or any coefficient is non-finite.
  void validate() const;

  /// Field seen by the emitter at an applied voltage.
  double field(double voltage) const { return voltage_to_field * voltage + field_offset; }
};

struct TrapParams {
  double a0 = 0.0;              // population bias [energy units]
  double mu_trap = 0.0;         // trap dipole moment [energy / field-unit]
  double thermal_energy = 1.0;  // k_B T [energy units]

  void validate() const;
};

enum class Branch { plus, minus };

/// -mu x - (alpha/2) x^2 - (beta/6) x^3 - (gamma/24) x^4 with x = field +/- trap_field.
double stark_branch(const StarkModel& model, double field, Branch branch);

/// Probability of the "plus" (filled) configuration:
/// 1 / (1 + exp((a0 + 2 mu_trap E) / kT)). Saturates to exactly 0 or 1 once
/// the exponent magnitude exceeds 700.
double trap_occupation(const TrapParams& trap, double field);

/// p * shift_plus + (1 - p) * shift_minus at the field produced by `voltage`.
double stark_total(const StarkModel& model, const TrapParams& trap, double voltage);

/// Voltage at which the trap occupation is 1/2.
double kink_voltage(const StarkModel& model, const TrapParams& trap);

/// max - min of stark_total sampled on `samples` points over [vmin, vmax].
double tuning_range(const StarkModel& model, const TrapParams& trap, double vmin, double vmax,
                    int samples = 2301);

struct VoltageSolution {
  double voltage = 0.0;
  double residual_hz = 0.0;  // stark_total(voltage) - target
  bool unique = true;        // false when the bracket holds more than one crossing
  int iterations = 0;
};

inline constexpr double kDetuningTolerance = 1e3;  // [Hz]

/// Solves stark_total(v) = target inside `bracket`. When several crossings
/// exist, returns the one nearest bracket.first and marks the result non-unique.
/// Throws RootNotBracketed when the endpoint values do not straddle the target.
VoltageSolution voltage_for_detuning(const StarkModel& model, const TrapParams& trap, double target_hz,
                                     std::pair<double, double> bracket);

struct TuningPoint {
  double voltage = 0.0;   // [V]
  double detuning = 0.0;  // [Hz]
  double sigma = 0.0;     // [Hz]; 0 when the file carries no uncertainty column
};

struct TuningCurve {
  std::vector<TuningPoint> points;
  bool has_sigma = false;

  /// Throws PreconditionError unless voltages are strictly increasing.
  void validate() const;
};

/// CSV with header `voltage_V,detuning_Hz[,sigma_Hz]`.
void write_tuning_csv(const TuningCurve& curve, std::ostream& out);
void write_tuning_csv(const TuningCurve& curve, const std::filesystem::path& path);
TuningCurve read_tuning_csv(std::istream& in);
TuningCurve read_tuning_csv(const std::filesystem::path& path);

}  // namespace homlab::stark
