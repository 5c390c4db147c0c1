#include "homlab/fit_models.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

#include "homlab/errors.hpp"
#include "homlab/instrument.hpp"
#include "homlab/units.hpp"

namespace homlab::fit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Sorted {
  std::vector<double> tau_ns;
  std::vector<double> g2;
  std::vector<double> sigma;
  std::vector<double> counts;
};

// Sorts the curve by delay and keeps bins with |tau| <= window (window <= 0 keeps all).
Sorted sorted_window(const tags::G2Curve& curve, double window_ns) {
  std::vector<std::size_t> order(curve.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return curve.tau_ps[a] < curve.tau_ps[b]; });
  Sorted s;
  for (std::size_t i : order) {
    const double t = curve.tau_ps[i] * 1e-3;
    if (window_ns > 0.0 && std::abs(t) > window_ns * (1.0 + 1e-12)) continue;
    s.tau_ns.push_back(t);
    s.g2.push_back(curve.g2[i]);
    s.sigma.push_back(curve.sigma[i]);
    s.counts.push_back(i < curve.counts.size() ? static_cast<double>(curve.counts[i]) : 0.0);
  }
  return s;
}

double curve_bin_width_ns(const tags::G2Curve& curve, const Sorted& s) {
  if (curve.bin_width_ps > 0.0) return curve.bin_width_ps * 1e-3;
  if (s.tau_ns.size() >= 2) return s.tau_ns[1] - s.tau_ns[0];
  throw PreconditionError("curve has fewer than two bins and no bin width");
}

// Uncertainty of a derived quantity from the covariance of the free parameters.
double propagate(const FitResult& result, const std::vector<bool>& fixed,
                 const std::function<double(std::span<const double>)>& f) {
  const std::size_t n = result.params.size();
  std::vector<double> grad(n, 0.0);
  std::vector<double> p = result.params;
  for (std::size_t j = 0; j < n; ++j) {
    if (fixed[j]) continue;
    const double h = 1e-6 * std::max(std::abs(p[j]), 1e-3);
    p[j] = result.params[j] + h;
    const double up = f(p);
    p[j] = result.params[j] - h;
    const double down = f(p);
    p[j] = result.params[j];
    grad[j] = (up - down) / (2.0 * h);
  }
  const double scale = std::max(std::abs(f(result.params)), 1e-12);
  for (std::size_t j = 0; j < n; ++j) {
    if (fixed[j]) continue;
    const bool unidentifiable =
        std::find(result.unidentifiable.begin(), result.unidentifiable.end(), result.names[j]) !=
        result.unidentifiable.end();
    if (unidentifiable && std::abs(grad[j]) * std::max(std::abs(p[j]), 1e-3) > 1e-6 * scale) return kNaN;
  }
  double var = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) var += grad[a] * result.covariance(a, b) * grad[b];
  }
  return std::sqrt(std::max(var, 0.0));
}

std::vector<bool> fixed_from_free(const std::vector<std::string>& names, const std::set<std::string>& free) {
  for (const auto& f : free) {
    if (std::find(names.begin(), names.end(), f) == names.end()) {
      throw ConfigError("free", "unknown parameter '" + f + "'");
    }
  }
  std::vector<bool> fixed(names.size());
  for (std::size_t j = 0; j < names.size(); ++j) fixed[j] = free.count(names[j]) == 0;
  return fixed;
}

// ---- HOM ----------------------------------------------------------------

const std::vector<std::string> kHomNames{"eta",           "detuning_GHz",  "sigma_GHz", "gamma1_per_ns",
                                         "gamma2_per_ns", "rho1",          "rho2"};

model::TpiConfig hom_config(std::span<const double> p, const HomFitInit& init) {
  model::TpiConfig cfg;
  cfg.eta = std::clamp(p[0], 0.0, 1.0);
  cfg.detuning = units::kTwoPi * p[1] * 1e9;
  cfg.sd_sigma_combined = units::kTwoPi * std::abs(p[2]) * 1e9;
  cfg.source1.emitter.radiative_lifetime = 1e-9 / p[3];
  cfg.source2.emitter.radiative_lifetime = 1e-9 / p[4];
  cfg.source1.emitter.excitation_rate = init.pump1;
  cfg.source2.emitter.excitation_rate = init.pump2;
  cfg.source1.rates.total_rate = init.weight1;
  cfg.source1.rates.signal_rate = std::clamp(p[5], 0.0, 1.0) * init.weight1;
  cfg.source2.rates.total_rate = 1.0 - init.weight1;
  cfg.source2.rates.signal_rate = std::clamp(p[6], 0.0, 1.0) * (1.0 - init.weight1);
  cfg.single_mode = model::G2Mode::rate_equation;
  return cfg;
}

double hom_reference(const model::TpiConfig& cfg) {
  const auto c = cfg.intensity_weights();
  const double g11 = model::observed_g2_single(cfg.source1, 0.0, cfg.single_mode);
  const double g22 = model::observed_g2_single(cfg.source2, 0.0, cfg.single_mode);
  return c[0] * c[0] * g11 + c[1] * c[1] * g22 + 2.0 * c[0] * c[1];
}

double hom_visibility_at_zero(std::span<const double> p, const HomFitInit& init) {
  const auto cfg = hom_config(p, init);
  return 1.0 - model::eval_g2_sd(cfg, 0.0) / hom_reference(cfg);
}

FitProblem hom_problem(const Sorted& s, const HomFitInit& init, double bin_width_ns, std::vector<double> start) {
  FitProblem problem;
  problem.names = kHomNames;
  problem.x = s.tau_ns;
  problem.y = s.g2;
  problem.sigma = s.sigma;
  problem.initial = std::move(start);
  problem.lower = {0.0, 0.0, 0.0, 1e-3, 1e-3, 0.0, 0.0};
  problem.upper = {1.0, 50.0, 20.0, 10.0, 10.0, 1.0, 1.0};
  problem.fixed = fixed_from_free(kHomNames, init.free);
  problem.typical = {0.5, 0.1, 0.05, 0.1, 0.1, 0.5, 0.5};
  problem.model = [init, bin_width_ns](std::span<const double> p, std::span<const double> x, std::span<double> out) {
    const auto pred = hom_model(p, x, init, bin_width_ns);
    std::copy(pred.begin(), pred.end(), out.begin());
  };
  return problem;
}

// ---- single emitter -----------------------------------------------------

std::vector<std::string> rabi_names(model::G2Mode mode) {
  if (mode == model::G2Mode::coherent_drive) return {"rabi_per_ns", "gamma_per_ns", "dephasing_per_ns", "rho"};
  return {"pump_per_ns", "gamma_per_ns", "rho"};
}

model::TpiSource rabi_source(std::span<const double> p, model::G2Mode mode) {
  model::TpiSource src;
  src.emitter.radiative_lifetime = 1e-9 / p[1];
  if (mode == model::G2Mode::coherent_drive) {
    src.emitter.rabi_frequency = p[0] * 1e9;
    src.emitter.dephasing_rate = p[2] * 1e9;
  } else {
    src.emitter.excitation_rate = p[0] * 1e9;
  }
  src.rates.total_rate = 1.0;
  src.rates.signal_rate = std::clamp(p.back(), 0.0, 1.0);
  return src;
}

// ---- Stark --------------------------------------------------------------

const std::vector<std::string> kStarkNames{"mu_tin",  "alpha",          "beta",             "gamma_4",
                                           "trap_field", "a0",          "mu_trap",          "thermal_energy",
                                           "voltage_to_field", "field_offset"};

stark::StarkModel stark_of(std::span<const double> p) {
  stark::StarkModel m;
  m.mu_tin = p[0];
  m.alpha = p[1];
  m.beta = p[2];
  m.gamma_4 = p[3];
  m.trap_field = p[4];
  m.voltage_to_field = p[8];
  m.field_offset = p[9];
  return m;
}

stark::TrapParams trap_of(std::span<const double> p) {
  stark::TrapParams t;
  t.a0 = p[5];
  t.mu_trap = p[6];
  t.thermal_energy = p[7];
  return t;
}

// Quartic least squares on the field without a trap (no constant term).
std::array<double, 4> polynomial_guess(const stark::TuningCurve& curve, double scale, double offset) {
  const auto n = static_cast<Eigen::Index>(curve.points.size());
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd b(n);
  double xmax = 0.0;
  for (const auto& pt : curve.points) xmax = std::max(xmax, std::abs(scale * pt.voltage + offset));
  if (xmax == 0.0) xmax = 1.0;
  constexpr double kFact[4] = {1.0, 2.0, 6.0, 24.0};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = scale * curve.points[i].voltage + offset;
    for (int k = 0; k < 4; ++k) a(i, k) = -std::pow(x / xmax, k + 1) / kFact[k];
    b(i) = curve.points[i].detuning;
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
  std::array<double, 4> out{};
  for (int k = 0; k < 4; ++k) out[k] = c(k) / std::pow(xmax, k + 1);
  return out;
}

}  // namespace

BeatSpectrum beat_spectrum(const tags::G2Curve& curve) {
  const Sorted s = sorted_window(curve, 0.0);
  if (s.tau_ns.size() < 4) throw PreconditionError("beat_spectrum: curve too short");
  const double dt = curve_bin_width_ns(curve, s) * 1e-9;
  std::vector<double> signal(s.g2.size());
  for (std::size_t i = 0; i < signal.size(); ++i) signal[i] = s.g2[i] - 1.0;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, signal);
  BeatSpectrum out;
  const std::size_t n = signal.size();
  for (std::size_t k = 0; k <= n / 2; ++k) {
    out.frequency_hz.push_back(static_cast<double>(k) / (static_cast<double>(n) * dt));
    out.magnitude.push_back(std::abs(spectrum[k]));
  }
  return out;
}

double beat_peak_frequency(const tags::G2Curve& curve, double min_frequency_hz) {
  const BeatSpectrum spec = beat_spectrum(curve);
  double best = kNaN;
  double best_mag = -1.0;
  for (std::size_t k = 0; k < spec.frequency_hz.size(); ++k) {
    if (spec.frequency_hz[k] < min_frequency_hz) continue;
    if (spec.magnitude[k] > best_mag) {
      best_mag = spec.magnitude[k];
      best = spec.frequency_hz[k];
    }
  }
  if (!std::isfinite(best)) throw DomainError("beat_peak_frequency: no bins above the minimum frequency");
  return best;
}

std::vector<double> hom_model(std::span<const double> params, std::span<const double> tau_ns,
                              const HomFitInit& init, double bin_width_ns) {
  const auto cfg = hom_config(params, init);
  std::vector<double> centres(tau_ns.size());
  for (std::size_t i = 0; i < centres.size(); ++i) centres[i] = tau_ns[i] * 1e-9;
  const model::CurveFn fn = [&cfg](std::span<const double> taus) { return model::eval_g2_sd_curve(cfg, taus); };
  return model::predict_binned(fn, centres, {bin_width_ns * 1e-9, init.irf_sigma, init.subsamples});
}

FitResult fit_g2_hom(const tags::G2Curve& curve, const HomFitInit& init, const FitOptions& options) {
  if (!(init.t1_1 > 0.0) || !(init.t1_2 > 0.0)) throw ConfigError("t1", "must be > 0");
  if (!(init.weight1 > 0.0 && init.weight1 < 1.0)) throw ConfigError("weight1", "must lie in (0, 1)");
  const double window_ns = (init.fit_window > 0.0 ? init.fit_window : 12.0 * std::max(init.t1_1, init.t1_2)) * 1e9;
  const Sorted s = sorted_window(curve, window_ns);
  if (s.tau_ns.empty() || s.tau_ns.front() > -10.0 * std::max(init.t1_1, init.t1_2) * 1e9 * 0.999 ||
      s.tau_ns.back() < 10.0 * std::max(init.t1_1, init.t1_2) * 1e9 * 0.999) {
    throw PreconditionError("fit_g2_hom: curve must cover at least +/-10 T1");
  }
  const double bw = curve_bin_width_ns(curve, s);

  std::vector<double> base{init.eta, 0.0, 0.0, 1e-9 / init.t1_1, 1e-9 / init.t1_2, init.rho1, init.rho2};
  std::vector<double> detunings;
  if (init.detuning) {
    detunings.push_back(std::abs(*init.detuning) * 1e-9);
  } else {
    detunings.push_back(0.0);
    const double min_f = 4.0 * std::max(1.0 / init.t1_1, 1.0 / init.t1_2) / units::kTwoPi;
    try {
      detunings.push_back(beat_peak_frequency(curve, min_f) * 1e-9);
    } catch (const DomainError&) {
    }
  }
  std::vector<double> sigmas;
  if (init.sd_sigma) {
    sigmas.push_back(std::abs(*init.sd_sigma) * 1e-9);
  } else {
    sigmas = {0.01, 0.05, 0.15, 0.4};
  }
  std::vector<double> etas{init.eta};
  if (init.free.count("eta") && !init.sd_sigma) etas = {init.eta, 0.5 * init.eta};

  // Rank starting points by objective, then run the full fit from the best two.
  std::vector<std::pair<double, std::vector<double>>> starts;
  for (double d : detunings) {
    for (double sg : sigmas) {
      for (double e : etas) {
        auto p = base;
        p[0] = std::clamp(e, 0.0, 1.0);
        p[1] = d;
        p[2] = sg;
        FitProblem probe = hom_problem(s, init, bw, p);
        probe.validate();
        starts.emplace_back(objective(probe, p), p);
      }
    }
  }
  std::sort(starts.begin(), starts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t tries = std::min<std::size_t>(2, starts.size());

  FitResult best;
  bool have = false;
  for (std::size_t t = 0; t < tries; ++t) {
    FitResult r = lsq_fit(hom_problem(s, init, bw, starts[t].second), options);
    if (!have || r.chi2 < best.chi2) {
      best = std::move(r);
      have = true;
    }
  }

  Sorted data = s;
  if (init.reweight) {
    const double sum_counts = std::accumulate(s.counts.begin(), s.counts.end(), 0.0);
    const double sum_g2 = std::accumulate(s.g2.begin(), s.g2.end(), 0.0);
    if (sum_counts > 0.0 && sum_g2 > 0.0) {
      const double norm = sum_counts / sum_g2;
      const auto pred = hom_model(best.params, s.tau_ns, init, bw);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        data.sigma[i] = pred[i] * norm >= 1.0 ? std::sqrt(pred[i] / norm) : 1.0 / norm;
      }
      best = lsq_fit(hom_problem(data, init, bw, best.params), options);
      best.flags.push_back("model_weighted");
    }
  }

  const auto fixed = fixed_from_free(kHomNames, init.free);
  const double v = hom_visibility_at_zero(best.params, init);
  best.derived["v_hom"] = v;
  best.derived["v_hom_sigma"] =
      propagate(best, fixed, [&init](std::span<const double> p) { return hom_visibility_at_zero(p, init); });

  // Zero-bin quantities as the instrument would record them.
  std::size_t zero = 0;
  for (std::size_t i = 0; i < data.tau_ns.size(); ++i) {
    if (std::abs(data.tau_ns[i]) < std::abs(data.tau_ns[zero])) zero = i;
  }
  if (std::abs(data.tau_ns[zero]) < 0.5 * bw) {
    const std::vector<double> at_zero{0.0};
    auto distinguishable = best.params;
    distinguishable[0] = 0.0;
    const double model_zero = hom_model(best.params, at_zero, init, bw)[0];
    const double ref_zero = hom_model(distinguishable, at_zero, init, bw)[0];
    best.derived["v_hom_binned"] = 1.0 - model_zero / ref_zero;
    best.derived["v_hom_bin0"] = 1.0 - data.g2[zero] / ref_zero;
    best.derived["v_hom_bin0_sigma"] = s.sigma[zero] / ref_zero;
  }
  best.derived["bin_width_ps"] = bw * 1e3;
  if (std::find(best.unidentifiable.begin(), best.unidentifiable.end(), "eta") != best.unidentifiable.end()) {
    best.flags.push_back("eta_unidentifiable");
  }
  return best;
}

FitResult fit_g2_single(const tags::G2Curve& curve, const RabiFitInit& init, const FitOptions& options) {
  if (!(init.t1 > 0.0)) throw ConfigError("t1", "must be > 0");
  const Sorted s = sorted_window(curve, init.fit_window * 1e9);
  if (s.tau_ns.size() < 4) throw PreconditionError("fit_g2_single: curve too short");
  const double bw = curve_bin_width_ns(curve, s);
  const auto names = rabi_names(init.mode);
  const bool coherent = init.mode == model::G2Mode::coherent_drive;
  std::set<std::string> free = init.free;
  if (free.empty()) {
    free = coherent ? std::set<std::string>{"rabi_per_ns", "gamma_per_ns", "rho"}
                    : std::set<std::string>{"gamma_per_ns", "rho"};
  }

  FitProblem problem;
  problem.names = names;
  problem.x = s.tau_ns;
  problem.y = s.g2;
  problem.sigma = s.sigma;
  if (coherent) {
    problem.initial = {init.rabi_frequency * 1e-9, 1e-9 / init.t1, init.dephasing_rate * 1e-9, init.rho};
    problem.lower = {0.0, 1e-3, 0.0, 0.0};
    problem.upper = {100.0, 10.0, 100.0, 1.0};
    problem.typical = {1.0, 0.1, 0.1, 0.5};
  } else {
    problem.initial = {init.pump * 1e-9, 1e-9 / init.t1, init.rho};
    problem.lower = {0.0, 1e-3, 0.0};
    problem.upper = {100.0, 10.0, 1.0};
    problem.typical = {0.1, 0.1, 0.5};
  }
  problem.fixed = fixed_from_free(names, free);
  const model::G2Mode mode = init.mode;
  const double irf = init.irf_sigma;
  const int sub = init.subsamples;
  problem.model = [mode, irf, sub, bw](std::span<const double> p, std::span<const double> x, std::span<double> out) {
    const auto src = rabi_source(p, mode);
    std::vector<double> centres(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) centres[i] = x[i] * 1e-9;
    const model::CurveFn fn = [&src, mode](std::span<const double> taus) {
      auto g = model::eval_g2_single_curve(src.emitter, taus, mode);
      const double rho = src.rates.signal_fraction();
      for (auto& v : g) v = 1.0 + rho * rho * (v - 1.0);
      return g;
    };
    const auto pred = model::predict_binned(fn, centres, {bw * 1e-9, irf, sub});
    std::copy(pred.begin(), pred.end(), out.begin());
  };

  FitResult result = lsq_fit(problem, options);
  const auto g2_zero = [mode](std::span<const double> p) {
    return model::observed_g2_single(rabi_source(p, mode), 0.0, mode);
  };
  result.derived["g2_zero"] = g2_zero(result.params);
  result.derived["g2_zero_sigma"] = propagate(result, problem.fixed, g2_zero);
  result.derived["bin_width_ps"] = bw * 1e3;
  return result;
}

FitResult fit_stark(const stark::TuningCurve& curve, const StarkFitInit& init, const FitOptions& options) {
  curve.validate();
  if (curve.points.size() < 5) throw PreconditionError("fit_stark: need at least 5 points");
  stark::StarkModel m;
  if (init.model) {
    m = *init.model;
  } else {
    const auto c = polynomial_guess(curve, 1.0, 0.0);
    m.mu_tin = c[0];
    m.alpha = c[1];
    m.beta = c[2];
    m.gamma_4 = c[3];
  }
  stark::TrapParams trap = init.trap.value_or(stark::TrapParams{});
  if (!init.trap) m.trap_field = 0.0;
  m.validate();
  trap.validate();

  FitProblem problem;
  problem.names = kStarkNames;
  for (const auto& pt : curve.points) {
    problem.x.push_back(pt.voltage);
    problem.y.push_back(pt.detuning);
    problem.sigma.push_back(curve.has_sigma ? pt.sigma : 1.0);
  }
  problem.initial = {m.mu_tin,  m.alpha,        m.beta,           m.gamma_4,          m.trap_field,
                     trap.a0,   trap.mu_trap,   trap.thermal_energy, m.voltage_to_field, m.field_offset};
  problem.lower.assign(10, -kInf);
  problem.upper.assign(10, kInf);
  problem.lower[4] = 0.0;
  problem.lower[7] = 1e-12;

  double xmax = 0.0;
  double ymax = 0.0;
  for (std::size_t i = 0; i < problem.x.size(); ++i) {
    xmax = std::max(xmax, std::abs(m.field(problem.x[i])));
    ymax = std::max(ymax, std::abs(problem.y[i]));
  }
  xmax = std::max(xmax, 1e-12);
  ymax = std::max(ymax, 1.0);
  const double typical_fallback[10] = {ymax / xmax,
                                       ymax / (xmax * xmax),
                                       ymax / std::pow(xmax, 3),
                                       ymax / std::pow(xmax, 4),
                                       0.1 * xmax,
                                       1.0,
                                       1.0 / xmax,
                                       1.0,
                                       1.0,
                                       0.1 * xmax};
  for (int j = 0; j < 10; ++j) {
    problem.typical.push_back(std::max(std::abs(problem.initial[j]), 1e-6 * typical_fallback[j]));
  }

  problem.fixed.assign(10, false);
  for (const auto& f : init.fixed) {
    const auto it = std::find(kStarkNames.begin(), kStarkNames.end(), f);
    if (it == kStarkNames.end()) throw ConfigError("fixed", "unknown parameter '" + f + "'");
    problem.fixed[it - kStarkNames.begin()] = true;
  }
  if (!init.trap) problem.fixed[4] = problem.fixed[5] = problem.fixed[6] = problem.fixed[7] = true;
  problem.model = pointwise([](std::span<const double> p, double v) {
    return stark::stark_total(stark_of(p), trap_of(p), v);
  });

  FitResult result = lsq_fit(problem, options);
  if (!curve.has_sigma && std::isfinite(result.chi2_reduced)) {
    result.covariance *= result.chi2_reduced;
    for (auto& sg : result.sigmas) sg *= std::sqrt(result.chi2_reduced);
    result.flags.push_back("sigma_from_residuals");
  }
  if (!init.trap) result.flags.push_back("trap_not_fitted");

  const double vmin = curve.points.front().voltage;
  const double vmax = curve.points.back().voltage;
  const auto fitted_model = stark_of(result.params);
  const auto fitted_trap = trap_of(result.params);
  result.derived["tuning_range_hz"] = stark::tuning_range(fitted_model, fitted_trap, vmin, vmax);
  if (fitted_trap.mu_trap != 0.0) {
    const auto kink = [](std::span<const double> p) { return stark::kink_voltage(stark_of(p), trap_of(p)); };
    const double kv = kink(result.params);
    result.derived["kink_voltage"] = kv;
    result.derived["kink_voltage_sigma"] = propagate(result, problem.fixed, kink);
    const bool trap_free = !problem.fixed[4] || !problem.fixed[5] || !problem.fixed[6];
    if (trap_free && (!(kv >= vmin) || !(kv <= vmax))) {
      result.flags.push_back("kink_outside_span");
      for (int j : {4, 5, 6}) {
        if (problem.fixed[j]) continue;
        if (std::find(result.unidentifiable.begin(), result.unidentifiable.end(), kStarkNames[j]) ==
            result.unidentifiable.end()) {
          result.unidentifiable.push_back(kStarkNames[j]);
        }
        result.sigmas[j] = kNaN;
      }
      result.derived["kink_voltage_sigma"] = kNaN;
    }
  }
  return result;
}

stark::StarkModel stark_model_from(const FitResult& result) { return stark_of(result.params); }
stark::TrapParams trap_from(const FitResult& result) { return trap_of(result.params); }

}  // namespace homlab::fit
