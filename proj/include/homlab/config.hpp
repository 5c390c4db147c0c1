#pragma once

// JSON configuration files.
//
// Quantities are bare numbers in base units or strings with a unit suffix.
// Bare times are picoseconds except the experiment-level `duration` and
// `slice_duration`, which are seconds. Frequencies are Hz, voltages V.
// Angular rates (dephasing_rate, rabi_frequency) take bare numbers in rad/s.
// Unknown keys are rejected; every error names the offending field path.

#include <filesystem>
#include <utility>

#include <json.hpp>

#include "homlab/fit_models.hpp"
#include "homlab/montecarlo.hpp"
#include "homlab/stark.hpp"

namespace homlab::config {

/// Parses a JSON file; syntax errors become ConfigError naming the file.
nlohmann::json load_json(const std::filesystem::path& path);

/// `detector` sets both ports; `detectors` (array of two) overrides per port.
mc::ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const mc::ExperimentConfig& config);

struct StarkSetup {
  stark::StarkModel model;
  stark::TrapParams trap;
  std::pair<double, double> voltage_range{-100.0, 130.0};
};

/// {"model": {...}, "trap": {...}, "voltage_range": [vmin, vmax]}
StarkSetup stark_from_json(const nlohmann::json& j);
nlohmann::json stark_to_json(const StarkSetup& setup);

fit::HomFitInit hom_init_from_json(const nlohmann::json& j);
fit::RabiFitInit rabi_init_from_json(const nlohmann::json& j);
fit::StarkFitInit stark_init_from_json(const nlohmann::json& j);

}  // namespace homlab::config
