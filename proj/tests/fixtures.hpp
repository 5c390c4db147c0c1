#pragma once

// Shared parameter sets and small helpers for the test binaries.

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "homlab/model.hpp"
#include "homlab/montecarlo.hpp"
#include "homlab/stark.hpp"
#include "homlab/tagproc.hpp"

namespace fixtures {

// Kinked Stark model: logistic midpoint at -50 V, ~4.16 GHz span over [-100, 130] V.
inline homlab::stark::StarkModel kinked_model() {
  homlab::stark::StarkModel m;
  m.mu_tin = 1e7;
  m.alpha = 3e5;
  m.beta = 2e3;
  m.gamma_4 = 20.0;
  m.trap_field = 12.0;
  return m;
}

inline homlab::stark::TrapParams kinked_trap() {
  homlab::stark::TrapParams t;
  t.a0 = 25.0;
  t.mu_trap = 0.25;
  t.thermal_energy = 1.0;
  return t;
}

inline homlab::stark::TuningCurve tuning_curve(const homlab::stark::StarkModel& m,
                                               const homlab::stark::TrapParams& t, double vmin, double vmax,
                                               int n, double noise_hz = 0.0, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  homlab::stark::TuningCurve c;
  c.has_sigma = noise_hz > 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = vmin + (vmax - vmin) * i / (n - 1);
    const double y = homlab::stark::stark_total(m, t, v) + (noise_hz > 0.0 ? noise_hz * normal(rng) : 0.0);
    c.points.push_back({v, y, noise_hz});
  }
  return c;
}

// Balanced, Fourier-limited, background-free TPI configuration.
inline homlab::model::TpiConfig ideal_tpi(double eta, double detuning_hz, double sigma_hz, double t1 = 5.6e-9) {
  homlab::model::TpiConfig cfg;
  cfg.source1.emitter.radiative_lifetime = t1;
  cfg.source2.emitter.radiative_lifetime = t1;
  cfg.eta = eta;
  cfg.detuning = 2.0 * M_PI * detuning_hz;
  cfg.sd_sigma_combined = 2.0 * M_PI * sigma_hz;
  return cfg;
}

inline homlab::mc::DetectorModel ideal_detector() {
  homlab::mc::DetectorModel d;
  d.efficiency = 1.0;
  d.timing_jitter_sigma = 0.0;
  d.dead_time = 0.0;
  d.dark_rate = 0.0;
  d.resolution = 1.0;
  return d;
}

// Two-source HOM experiment with equal detected signal rates.
inline homlab::mc::ExperimentConfig hom_experiment(double eta, double detuning_hz, double sigma_each_hz,
                                                   double rate, double duration, std::uint64_t seed) {
  homlab::mc::ExperimentConfig c;
  for (int i = 0; i < 2; ++i) {
    homlab::mc::SourceConfig s;
    s.emitter.radiative_lifetime = 5.6e-9;
    s.emitter.center_frequency_offset = i == 0 ? detuning_hz : 0.0;
    s.emitter.spectral_diffusion_sigma = sigma_each_hz;
    s.rates.signal_rate = rate;
    s.rates.total_rate = rate;
    c.sources.push_back(s);
  }
  c.detectors = {ideal_detector(), ideal_detector()};
  c.eta = eta;
  c.duration = duration;
  c.seed = seed;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("homlab-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
