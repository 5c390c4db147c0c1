#pragma once

#include <numbers>
#include <string_view>

namespace homlab::units {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline constexpr double kPicosecond = 1e-12;
inline constexpr double kNanosecond = 1e-9;

constexpr double ps_to_s(double ps) { return ps * kPicosecond; }
constexpr double s_to_ps(double s) { return s / kPicosecond; }

// Quantity parsers accept a bare number (interpreted in the base unit of the
// quantity) or a number followed by a unit suffix: "512ps", "100 ns", "800MHz", "-50V".
// Malformed text raises std::invalid_argument.

/// Returns picoseconds. Suffixes: fs, ps, ns, us, ms, s.
double parse_time_ps(std::string_view text);

/// Returns hertz. Suffixes: Hz, kHz, MHz, GHz, THz.
double parse_frequency_hz(std::string_view text);

/// Returns volts. Suffixes: uV, mV, V, kV.
double parse_voltage_v(std::string_view text);

}  // namespace homlab::units
