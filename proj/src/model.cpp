#include "homlab/model.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>

#include "homlab/errors.hpp"
#include "homlab/units.hpp"

namespace homlab::model {

namespace {

void require_finite_nonnegative(double value, const char* name) {
  if (!std::isfinite(value) || value < 0.0) {
    throw DomainError(std::string(name) + " must be finite and non-negative");
  }
}

// Resonantly driven two-level system in Bloch form, y = (v, w):
//   v' = -G2 v - Omega w
//   w' =  Omega v - Gamma (w + 1)
// with G2 = Gamma/2 + pure dephasing. rho_ee = (1 + w)/2.
class BlochPropagator {
 public:
  explicit BlochPropagator(const EmitterParams& p) {
    const double gamma = p.decay_rate();
    const double g2 = 0.5 * gamma + p.dephasing_rate;
    const double omega = p.rabi_frequency;
    if (!(omega > 0.0)) {
      throw DomainError("coherent_drive mode requires rabi_frequency > 0");
    }
    generator_ << -g2, -omega, omega, -gamma;
    const Eigen::Vector2d source(0.0, -gamma);
    steady_ = -generator_.inverse() * source;
    initial_offset_ = Eigen::Vector2d(0.0, -1.0) - steady_;
    excited_steady_ = 0.5 * (1.0 + steady_(1));
  }

  double g2(double tau) const {
    const Eigen::Matrix2d step = (generator_ * std::abs(tau)).exp();
    const Eigen::Vector2d y = steady_ + step * initial_offset_;
    return 0.5 * (1.0 + y(1)) / excited_steady_;
  }

 private:
  Eigen::Matrix2d generator_;
  Eigen::Vector2d steady_;
  Eigen::Vector2d initial_offset_;
  double excited_steady_ = 0.0;
};

double rate_equation_g2(const EmitterParams& p, double tau) {
  return -std::expm1(-(p.excitation_rate + p.decay_rate()) * std::abs(tau));
}

GaussLegendreRule build_gauss_legendre(int n) {
  GaussLegendreRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    // Tricomi initial guess, then Newton on P_n.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

double overlap_amplitude(const TpiConfig& cfg, double tau) {
  const double g1a = eval_g1_mag(cfg.source1.emitter.coherence_rate(), tau);
  const double g1b = eval_g1_mag(cfg.source2.emitter.coherence_rate(), tau);
  return cfg.eta * cfg.source1.rates.signal_fraction() * cfg.source2.rates.signal_fraction() * g1a * g1b;
}

double g2_sd_at(const TpiConfig& cfg, const std::array<double, 2>& weights, double tau,
                const QuadratureSpec& quad) {
  const double g11 = observed_g2_single(cfg.source1, tau, cfg.single_mode);
  const double g22 = observed_g2_single(cfg.source2, tau, cfg.single_mode);
  // The integrand is affine in cos(dw' tau); the kernel average acts on the beat factor only.
  const double beat = diffusion_averaged_beat(cfg.detuning, cfg.sd_sigma_combined, tau, quad);
  return combine_tpi(weights, g11, g22, overlap_amplitude(cfg, tau) * beat);
}

}  // namespace

void EmitterParams::validate() const {
  if (!std::isfinite(radiative_lifetime) || radiative_lifetime <= 0.0) {
    throw DomainError("radiative_lifetime must be > 0");
  }
  require_finite_nonnegative(dephasing_rate, "dephasing_rate");
  require_finite_nonnegative(spectral_diffusion_sigma, "spectral_diffusion_sigma");
  require_finite_nonnegative(excitation_rate, "excitation_rate");
  require_finite_nonnegative(rabi_frequency, "rabi_frequency");
  if (!std::isfinite(center_frequency_offset)) {
    throw DomainError("center_frequency_offset must be finite");
  }
}

void SourceRates::validate() const {
  if (!std::isfinite(total_rate) || total_rate <= 0.0) {
    throw DomainError("total_rate must be > 0");
  }
  if (!std::isfinite(signal_rate) || signal_rate < 0.0 || signal_rate > total_rate) {
    throw DomainError("signal_rate must lie in [0, total_rate]");
  }
}

void TpiConfig::validate() const {
  source1.emitter.validate();
  source2.emitter.validate();
  source1.rates.validate();
  source2.rates.validate();
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("eta must lie in [0, 1]");
  if (!std::isfinite(detuning)) throw DomainError("detuning must be finite");
  if (!std::isfinite(sd_sigma_combined) || sd_sigma_combined < 0.0) {
    throw DomainError("sd_sigma_combined must be >= 0");
  }
}

std::array<double, 2> TpiConfig::intensity_weights() const {
  const double total = source1.rates.total_rate + source2.rates.total_rate;
  return {source1.rates.total_rate / total, source2.rates.total_rate / total};
}

double combined_sd_sigma(const EmitterParams& a, const EmitterParams& b) {
  return units::kTwoPi * std::hypot(a.spectral_diffusion_sigma, b.spectral_diffusion_sigma);
}

double fourier_limit(double t1) {
  if (!(t1 > 0.0) || !std::isfinite(t1)) throw DomainError("fourier_limit: t1 must be > 0");
  return 1.0 / (units::kTwoPi * t1);
}

double eval_g1_mag(double gamma, double tau) {
  if (!(gamma >= 0.0)) throw DomainError("eval_g1_mag: gamma must be >= 0");
  return std::exp(-0.5 * gamma * std::abs(tau));
}

double eval_g2_single(const EmitterParams& params, double tau, G2Mode mode) {
  params.validate();
  if (mode == G2Mode::rate_equation) return rate_equation_g2(params, tau);
  return BlochPropagator(params).g2(tau);
}

std::vector<double> eval_g2_single_curve(const EmitterParams& params, std::span<const double> taus,
                                         G2Mode mode) {
  params.validate();
  std::vector<double> out(taus.size());
  if (mode == G2Mode::rate_equation) {
    for (std::size_t i = 0; i < taus.size(); ++i) out[i] = rate_equation_g2(params, taus[i]);
    return out;
  }
  const BlochPropagator bloch(params);
  for (std::size_t i = 0; i < taus.size(); ++i) out[i] = bloch.g2(taus[i]);
  return out;
}

double observed_g2_single(const TpiSource& source, double tau, G2Mode mode) {
  const double rho = source.rates.signal_fraction();
  const double g2 = mode == G2Mode::rate_equation ? rate_equation_g2(source.emitter, tau)
                                                  : eval_g2_single(source.emitter, tau, mode);
  return 1.0 + rho * rho * (g2 - 1.0);
}

double combine_tpi(std::array<double, 2> weights, double g2_11, double g2_22, double overlap) {
  const auto [c1, c2] = weights;
  if (std::abs(c1 + c2 - 1.0) > 1e-12 || c1 < 0.0 || c2 < 0.0) {
    throw std::logic_error("combine_tpi: intensity weights must be non-negative and sum to 1");
  }
  return c1 * c1 * g2_11 + c2 * c2 * g2_22 + 2.0 * c1 * c2 * (1.0 - overlap);
}

double eval_g2_tpi(const TpiConfig& cfg, double tau) { return eval_g2_tpi(cfg, tau, cfg.detuning); }

double eval_g2_tpi(const TpiConfig& cfg, double tau, double detuning) {
  cfg.validate();
  const double g11 = observed_g2_single(cfg.source1, tau, cfg.single_mode);
  const double g22 = observed_g2_single(cfg.source2, tau, cfg.single_mode);
  return combine_tpi(cfg.intensity_weights(), g11, g22,
                     overlap_amplitude(cfg, tau) * std::cos(detuning * tau));
}

const GaussLegendreRule& gauss_legendre(int n) {
  if (n < 1) throw DomainError("gauss_legendre: need at least one node");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<GaussLegendreRule>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<GaussLegendreRule>(build_gauss_legendre(n));
  return *slot;
}

double diffusion_averaged_beat(double centre, double sigma, double tau, const QuadratureSpec& quad) {
  if (!(sigma >= 0.0)) throw DomainError("spectral diffusion sigma must be >= 0");
  if (sigma == 0.0) return std::cos(centre * tau);
  if (quad.span_sigmas < 6.0) {
    throw AccuracyError("quadrature span must cover at least 6 sigma");
  }
  const GaussLegendreRule& rule = gauss_legendre(quad.nodes);
  const double half = quad.span_sigmas * sigma;
  int panels = 1;
  if (quad.adaptive) {
    const double oscillations = 2.0 * half * std::abs(tau) / units::kTwoPi;
    panels = std::max(1, static_cast<int>(std::ceil(oscillations / quad.oscillations_per_panel)));
  }
  const double panel_width = 2.0 * half / panels;
  const double inv_two_var = 0.5 / (sigma * sigma);
  double mass = 0.0;
  double beat = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = -half + (p + 0.5) * panel_width;
    const double hw = 0.5 * panel_width;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      const double u = mid + hw * rule.nodes[k];
      const double w = rule.weights[k] * std::exp(-u * u * inv_two_var);
      mass += w;
      beat += w * std::cos((centre + u) * tau);
    }
  }
  return beat / mass;
}

double eval_g2_sd(const TpiConfig& cfg, double tau, const QuadratureSpec& quad) {
  cfg.validate();
  if (cfg.sd_sigma_combined == 0.0) return eval_g2_tpi(cfg, tau);
  return g2_sd_at(cfg, cfg.intensity_weights(), tau, quad);
}

std::vector<double> eval_g2_sd_curve(const TpiConfig& cfg, std::span<const double> taus,
                                     const QuadratureSpec& quad) {
  cfg.validate();
  if (cfg.sd_sigma_combined > 0.0 && quad.span_sigmas < 6.0) {
    throw AccuracyError("quadrature span must cover at least 6 sigma");
  }
  gauss_legendre(quad.nodes);
  const auto weights = cfg.intensity_weights();
  std::vector<double> out(taus.size());
  const auto n = static_cast<std::ptrdiff_t>(taus.size());
#pragma omp parallel for schedule(dynamic, 32)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[i] = g2_sd_at(cfg, weights, taus[i], quad);
  }
  return out;
}

std::vector<double> eval_g2_sd_curve_serial(const TpiConfig& cfg, std::span<const double> taus,
                                            const QuadratureSpec& quad) {
  std::vector<double> out(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) out[i] = eval_g2_sd(cfg, taus[i], quad);
  return out;
}

std::vector<double> sample_inhomogeneous(const InhomogeneousDist& dist, std::size_t n,
                                         std::uint64_t seed) {
  if (n == 0) throw DomainError("sample_inhomogeneous: empty request");
  if (!(dist.sigma > 0.0)) throw DomainError("sample_inhomogeneous: sigma must be > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(dist.mean_offset, dist.sigma);
  std::vector<double> out(n);
  for (auto& v : out) v = normal(rng);
  return out;
}

}  // namespace homlab::model
