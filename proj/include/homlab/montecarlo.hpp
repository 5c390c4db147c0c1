#pragma once

// Monte Carlo model of the two-node interference experiment: incoherently
// pumped emitters (renewal processes) with spectral diffusion, a beam splitter
// that routes time-overlapping photon pairs with the two-photon interference
// probability, and two imperfect detectors feeding a time tagger.
//
// Times are kept in picoseconds, frequencies in Hz.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "homlab/model.hpp"
#include "homlab/tagproc.hpp"

namespace homlab::mc {

struct DetectorModel {
  double efficiency = 0.6;
  double timing_jitter_sigma = 350.0;  // [ps], Gaussian
  double dead_time = 22000.0;          // [ps], non-paralysable
  double dark_rate = 100.0;            // [counts/s]
  double resolution = 1.0;             // tag quantum [ps]

  void validate() const;  // throws ConfigError with a field path relative to the detector
};

struct PhotonRecord {
  int source_id = 0;
  double emission_time = 0.0;    // [ps]
  double frequency_offset = 0.0; // [Hz], centre + diffusion draw
  double envelope_decay = 0.0;   // 1/T1 [1/s]
  bool background = false;       // uncorrelated, non-interfering photon
};

struct SourceConfig {
  model::EmitterParams emitter;
  model::SourceRates rates;            // detected rates; the pump rate is derived from signal_rate
  double sd_correlation_time = 0.0;    // [ps]; 0 draws each photon's frequency independently
};

enum class MixingMode { interfering, distinguishable };

struct ExperimentConfig {
  std::vector<SourceConfig> sources;   // one source: HBT autocorrelation; two: HOM
  std::array<DetectorModel, 2> detectors{};  // output ports -> channels 1 and 2
  MixingMode mixing_mode = MixingMode::interfering;
  double eta = 1.0;
  double duration = 1.0;               // [s]
  std::uint64_t seed = 1;
  double slice_duration = 1.0;         // [s]; independent sub-seeded trials
  double coherence_window_t1 = 10.0;   // pair window in units of the longer T1

  void validate() const;  // throws ConfigError
  std::size_t slice_count() const;
  double mean_efficiency() const;
};

struct SimulationStats {
  std::array<std::uint64_t, 2> signal_photons{};
  std::array<std::uint64_t, 2> background_photons{};
  std::uint64_t dark_counts = 0;
  std::uint64_t detected = 0;
  std::uint64_t interfering_pairs = 0;
  std::uint64_t triple_overlaps = 0;   // photons with more than one candidate partner

  std::uint64_t generated() const;
  SimulationStats& operator+=(const SimulationStats& other);
};

struct SimulationResult {
  tags::TagStream tags;
  SimulationStats stats;
};

/// Pump rate R for which a two-level emitter with lifetime T1 yields
/// `detected_rate` after detection efficiency `efficiency`.
/// Throws DomainError if the rate exceeds the saturated emission rate.
double excitation_rate_for(const model::EmitterParams& emitter, double detected_rate, double efficiency);

/// Emission record of one source over [start, start + duration) ps: renewal
/// process with exponential re-excitation (rate R) and exponential emission
/// delay (T1), plus Poisson background photons. Sorted by emission time.
std::vector<PhotonRecord> simulate_stream(const SourceConfig& source, int source_id, double mean_efficiency,
                                          double start_ps, double duration_ps, std::uint64_t seed);

/// Beam splitter, detectors and tagger for one time slice. Streams must be
/// sorted by emission time (PreconditionError otherwise). The result is
/// time-sorted but not yet dead-time filtered or quantized; see finalize_tags.
tags::TagStream interfere_and_detect(std::span<const std::vector<PhotonRecord>> streams,
                                     const ExperimentConfig& config, double start_ps, double end_ps,
                                     std::uint64_t seed, SimulationStats* stats = nullptr);

/// Sorts, quantizes to the detector resolution, drops tags outside
/// [0, duration) and applies per-channel dead time.
void finalize_tags(tags::TagStream& stream, const ExperimentConfig& config, SimulationStats* stats = nullptr);

/// Slices [first, first + count) of the experiment, OpenMP-parallel over slices.
SimulationResult simulate_slices(const ExperimentConfig& config, std::size_t first, std::size_t count);

/// The full experiment; identical output for any thread count.
SimulationResult simulate_experiment(const ExperimentConfig& config);

/// Single-threaded reference for simulate_experiment.
SimulationResult simulate_experiment_serial(const ExperimentConfig& config);

/// Analytic counterpart of a two-source configuration (detuning from the
/// centre offsets, combined diffusion width, derived pump rates).
model::TpiConfig to_tpi_config(const ExperimentConfig& config);

/// Pump rate the simulator uses for source i.
double pump_rate(const ExperimentConfig& config, std::size_t source);

/// Sub-seed for slice `index` of stream `stream` under master seed `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);

}  // namespace homlab::mc
