#include "homlab/units.hpp"

#include <cctype>
#include <charconv>
#include <stdexcept>
#include <string>
#include <utility>

namespace homlab::units {

namespace {

struct Suffix {
  std::string_view name;
  double scale;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <std::size_t N>
double parse_quantity(std::string_view text, const Suffix (&suffixes)[N], const char* what) {
  const std::string_view s = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr == s.data()) {
    throw std::invalid_argument("cannot parse " + std::string(what) + " from '" + std::string(text) + "'");
  }
  const std::string_view unit = trim(std::string_view(ptr, s.data() + s.size() - ptr));
  if (unit.empty()) return value;
  for (const auto& suffix : suffixes) {
    if (unit == suffix.name) return value * suffix.scale;
  }
  throw std::invalid_argument("unknown " + std::string(what) + " unit '" + std::string(unit) + "'");
}

}  // namespace

double parse_time_ps(std::string_view text) {
  static constexpr Suffix kSuffixes[] = {
      {"fs", 1e-3}, {"ps", 1.0}, {"ns", 1e3}, {"us", 1e6}, {"ms", 1e9}, {"s", 1e12}};
  return parse_quantity(text, kSuffixes, "time");
}

double parse_frequency_hz(std::string_view text) {
  static constexpr Suffix kSuffixes[] = {
      {"Hz", 1.0}, {"kHz", 1e3}, {"MHz", 1e6}, {"GHz", 1e9}, {"THz", 1e12}};
  return parse_quantity(text, kSuffixes, "frequency");
}

double parse_voltage_v(std::string_view text) {
  static constexpr Suffix kSuffixes[] = {{"uV", 1e-6}, {"mV", 1e-3}, {"V", 1.0}, {"kV", 1e3}};
  return parse_quantity(text, kSuffixes, "voltage");
}

}  // namespace homlab::units
