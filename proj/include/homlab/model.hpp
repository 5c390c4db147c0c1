#pragma once

// Analytic correlation functions for single emitters and for two-photon
// interference between two independent emitters.
//
// Units: times in seconds, linewidths/rates in 1/s, angular frequencies in
// rad/s, ordinary frequencies in Hz. All functions are pure.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace homlab::model {

struct EmitterParams {
  double radiative_lifetime = 5.6e-9;     // T1 [s]
  double dephasing_rate = 0.0;            // pure dephasing [rad/s]
  double center_frequency_offset = 0.0;   // [Hz], relative to a shared reference
  double spectral_diffusion_sigma = 0.0;  // std-dev of the diffusing line centre [Hz]
  double excitation_rate = 0.0;           // incoherent pump R [1/s]
  double rabi_frequency = 0.0;            // coherent drive Omega [rad/s]

  /// Throws DomainError on T1 <= 0 or any negative rate.
  void validate() const;

  /// Radiative decay rate Gamma = 1/T1.
  double decay_rate() const { return 1.0 / radiative_lifetime; }

  /// Homogeneous coherence rate gamma = 1/tau_coh = 1/(2 T1) + dephasing.
  double coherence_rate() const { return 0.5 / radiative_lifetime + dephasing_rate; }
};

struct SourceRates {
  double signal_rate = 4000.0;  // S [counts/s]
  double total_rate = 4000.0;   // I [counts/s], signal + background

  /// Throws DomainError unless 0 <= S <= I and I > 0.
  void validate() const;

  /// Signal fraction S/I.
  double signal_fraction() const { return signal_rate / total_rate; }
};

enum class G2Mode { rate_equation, coherent_drive };

struct TpiSource {
  EmitterParams emitter;
  SourceRates rates;
};

struct TpiConfig {
  TpiSource source1;
  TpiSource source2;
  double eta = 1.0;                // visibility reduction factor
  double detuning = 0.0;           // omega1 - omega2 [rad/s]; centre of the diffusion kernel
  double sd_sigma_combined = 0.0;  // std-dev of the detuning kernel [rad/s]
  G2Mode single_mode = G2Mode::rate_equation;

  void validate() const;

  /// Normalized intensity ratios c_i = I_i / (I_1 + I_2).
  std::array<double, 2> intensity_weights() const;
};

/// Width of the detuning kernel [rad/s] for two independently diffusing emitters:
/// 2*pi*sqrt(sigma1^2 + sigma2^2) with per-emitter sigmas in Hz.
double combined_sd_sigma(const EmitterParams& a, const EmitterParams& b);

struct InhomogeneousDist {
  double mean_offset = 1.6e9;  // [Hz]
  double sigma = 4.0e9;        // [Hz]
};

/// Fourier-limited FWHM linewidth 1/(2 pi T1) in Hz. Throws DomainError if t1 <= 0.
double fourier_limit(double t1);

/// |g1(tau)| = exp(-gamma |tau| / 2). Throws DomainError for gamma < 0.
double eval_g1_mag(double gamma, double tau);

/// Single-emitter intensity autocorrelation.
///
/// rate_equation: 1 - exp(-(R + Gamma)|tau|), the renewal result for an
/// incoherently pumped two-level system.
///
/// coherent_drive: rho_ee(|tau| | ground) / rho_ee(steady state) from the
/// resonantly driven two-level optical Bloch equations with decay Gamma = 1/T1
/// and coherence decay Gamma/2 + dephasing_rate.
double eval_g2_single(const EmitterParams& params, double tau, G2Mode mode);

/// Vectorised form of eval_g2_single; reuses the Bloch propagator setup.
std::vector<double> eval_g2_single_curve(const EmitterParams& params, std::span<const double> taus,
                                         G2Mode mode);

/// Autocorrelation of a source whose detected stream contains a fraction
/// S/I of signal photons and uncorrelated background:
/// 1 + (S/I)^2 (g2_single - 1).
double observed_g2_single(const TpiSource& source, double tau, G2Mode mode);

/// Assembles the two-photon-interference correlation from its ingredients.
/// `overlap` is eta * (S1 S2 / I1 I2) |g1_11||g1_22| cos(dw tau).
/// Throws std::logic_error if c1 + c2 != 1.
double combine_tpi(std::array<double, 2> weights, double g2_11, double g2_22, double overlap);

/// Cross-correlation of the two beam-splitter outputs at fixed detuning cfg.detuning.
double eval_g2_tpi(const TpiConfig& cfg, double tau);

/// Same as eval_g2_tpi with the detuning replaced by `detuning` [rad/s].
double eval_g2_tpi(const TpiConfig& cfg, double tau, double detuning);

struct QuadratureSpec {
  int nodes = 129;            // Gauss-Legendre nodes per panel
  double span_sigmas = 6.0;   // half-width of the integration span in kernel sigmas
  bool adaptive = true;       // add panels as the integrand oscillates faster (grows with |tau|)
  int oscillations_per_panel = 16;
};

/// Gauss-Legendre nodes/weights on [-1, 1].
struct GaussLegendreRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Cached rule with n nodes; thread-safe.
const GaussLegendreRule& gauss_legendre(int n);

/// Expectation of cos(x tau) over x ~ N(centre, sigma^2), by composite
/// Gauss-Legendre quadrature over centre +/- span_sigmas*sigma.
/// Throws AccuracyError if span_sigmas < 6 and DomainError if sigma < 0.
double diffusion_averaged_beat(double centre, double sigma, double tau, const QuadratureSpec& quad);

/// Convolution of eval_g2_tpi over a Gaussian detuning kernel of width
/// cfg.sd_sigma_combined centred on cfg.detuning. Reduces exactly to
/// eval_g2_tpi when the width is zero.
double eval_g2_sd(const TpiConfig& cfg, double tau, const QuadratureSpec& quad = {});

/// eval_g2_sd over a grid of delays, OpenMP-parallel over tau.
std::vector<double> eval_g2_sd_curve(const TpiConfig& cfg, std::span<const double> taus,
                                     const QuadratureSpec& quad = {});

/// Single-threaded reference for eval_g2_sd_curve.
std::vector<double> eval_g2_sd_curve_serial(const TpiConfig& cfg, std::span<const double> taus,
                                            const QuadratureSpec& quad = {});

/// n i.i.d. Gaussian draws [Hz]; deterministic for a fixed seed.
/// Throws DomainError for n == 0 or sigma <= 0.
std::vector<double> sample_inhomogeneous(const InhomogeneousDist& dist, std::size_t n,
                                         std::uint64_t seed);

}  // namespace homlab::model
