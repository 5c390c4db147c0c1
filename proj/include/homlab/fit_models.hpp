#pragma once

// Adapters that fit the three model families to measured curves:
// two-photon interference g2 (diffusion-averaged), single-emitter g2 and
// Stark tuning curves with a charge-trap kink.
//
// Inside the fits delays are in ns and frequencies in GHz so that all free
// parameters are of order one. Public inputs stay in SI units.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "homlab/fit.hpp"
#include "homlab/model.hpp"
#include "homlab/stark.hpp"
#include "homlab/tagproc.hpp"

namespace homlab::fit {

struct BeatSpectrum {
  std::vector<double> frequency_hz;
  std::vector<double> magnitude;
};

/// One-sided |DFT| of g2 - 1 over the curve's uniform bins.
BeatSpectrum beat_spectrum(const tags::G2Curve& curve);

/// Frequency of the largest spectral component at or above min_frequency_hz.
double beat_peak_frequency(const tags::G2Curve& curve, double min_frequency_hz);

struct HomFitInit {
  double t1_1 = 5.6e-9;  // [s]
  double t1_2 = 5.6e-9;
  double eta = 0.8;
  std::optional<double> detuning;  // [Hz]; default: beat spectrum peak (or 0)
  std::optional<double> sd_sigma;  // [Hz] combined kernel width; default: multi-start
  double rho1 = 1.0;               // S/I of each source
  double rho2 = 1.0;
  double weight1 = 0.5;            // c1 = I1/(I1 + I2)
  double pump1 = 0.0;              // incoherent pump rates [1/s]
  double pump2 = 0.0;
  double irf_sigma = 0.0;          // combined timing jitter [s]
  double fit_window = 0.0;         // half-width of the fitted delay range [s]; 0 = 12 max(T1)
  int subsamples = 4;
  bool reweight = true;            // second pass with model-based Poisson sigmas
  std::set<std::string> free{"eta", "detuning_GHz", "sigma_GHz"};
};

/// Parameters: eta, detuning_GHz, sigma_GHz, gamma1_per_ns, gamma2_per_ns, rho1, rho2
/// (gamma_i = 1/T1_i). Derived: v_hom (model at tau = 0, with sigma),
/// v_hom_binned (model zero bin), v_hom_bin0 (measured zero bin against the
/// model reference) and bin_width_ps.
FitResult fit_g2_hom(const tags::G2Curve& curve, const HomFitInit& init = {}, const FitOptions& options = {});

/// Prediction of the HOM adapter at parameter vector `params` (same order as
/// fit_g2_hom) for the given bin centres [ns].
std::vector<double> hom_model(std::span<const double> params, std::span<const double> tau_ns,
                              const HomFitInit& init, double bin_width_ns);

struct RabiFitInit {
  model::G2Mode mode = model::G2Mode::coherent_drive;
  double t1 = 5.6e-9;            // [s]
  double rabi_frequency = 1e9;   // [rad/s]
  double dephasing_rate = 0.0;   // [1/s]
  double pump = 0.0;             // [1/s]
  double rho = 1.0;
  double irf_sigma = 0.0;        // [s]
  double fit_window = 0.0;       // [s]; 0 = whole curve
  int subsamples = 4;
  std::set<std::string> free;    // empty = mode default
};

/// coherent_drive parameters: rabi_per_ns, gamma_per_ns, dephasing_per_ns, rho
/// (default free: rabi, gamma, rho). rate_equation parameters: pump_per_ns,
/// gamma_per_ns, rho (default free: gamma, rho). Derived: g2_zero.
FitResult fit_g2_single(const tags::G2Curve& curve, const RabiFitInit& init = {},
                        const FitOptions& options = {});

struct StarkFitInit {
  std::optional<stark::StarkModel> model;  // default: quartic least squares with no trap
  std::optional<stark::TrapParams> trap;   // absent: trap disabled and not fitted
  std::set<std::string> fixed{"thermal_energy", "voltage_to_field", "field_offset"};
};

/// Parameters: mu_tin, alpha, beta, gamma_4, trap_field, a0, mu_trap,
/// thermal_energy, voltage_to_field, field_offset. Derived: kink_voltage,
/// tuning_range_hz over the data span. Without a sigma column the residual
/// scatter sets the parameter uncertainties.
FitResult fit_stark(const stark::TuningCurve& curve, const StarkFitInit& init = {},
                    const FitOptions& options = {});

stark::StarkModel stark_model_from(const FitResult& result);
stark::TrapParams trap_from(const FitResult& result);

}  // namespace homlab::fit
