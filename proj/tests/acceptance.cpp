// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "homlab/fit.hpp"
#include "homlab/fit_models.hpp"
#include "homlab/instrument.hpp"
#include "homlab/model.hpp"
#include "homlab/montecarlo.hpp"
#include "homlab/stark.hpp"
#include "homlab/tagproc.hpp"

using namespace homlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Simulates in blocks of slices and accumulates the cross-correlation, so
// long runs never hold the whole tag stream in memory.
struct Streamed {
  tags::Histogram raw;
  std::array<std::uint64_t, 3> counts{};
  double duration = 0.0;
  mc::SimulationStats stats;

  tags::G2Curve curve() const {
    return tags::normalize_g2(raw, counts[1] / duration, counts[2] / duration, duration);
  }
};

Streamed simulate_and_correlate(const mc::ExperimentConfig& cfg, std::int64_t bin_ps, std::int64_t window_ps,
                                std::size_t block = 8) {
  Streamed s;
  s.raw = tags::make_histogram(bin_ps, window_ps);
  s.duration = cfg.duration;
  const std::size_t slices = cfg.slice_count();
  for (std::size_t first = 0; first < slices; first += block) {
    const auto part = mc::simulate_slices(cfg, first, std::min(block, slices - first));
    s.raw += tags::cross_correlate(part.tags, 1, 2, bin_ps, window_ps);
    const auto c = part.tags.counts_per_channel();
    s.counts[1] += c[1];
    s.counts[2] += c[2];
    s.stats += part.stats;
  }
  return s;
}

std::vector<double> centres_s(const tags::G2Curve& g) {
  std::vector<double> t(g.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = g.tau_ps[i] * 1e-12;
  return t;
}

// Pearson chi2 per bin of raw counts against the binned analytic curve.
double pearson_chi2_per_bin(const Streamed& s, const model::TpiConfig& tpi, double irf_sigma) {
  const tags::G2Curve g = s.curve();
  model::BinningSpec spec;
  spec.bin_width = g.bin_width_ps * 1e-12;
  spec.irf_sigma = irf_sigma;
  const auto pred = model::predict_binned(
      [&](std::span<const double> t) { return model::eval_g2_sd_curve(tpi, t); }, centres_s(g), spec);
  const double norm = static_cast<double>(s.counts[1]) * static_cast<double>(s.counts[2]) / s.duration *
                      g.bin_width_ps * 1e-12;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double f = norm * pred[i];
    const double d = static_cast<double>(g.counts[i]) - f;
    chi2 += d * d / f;
  }
  return chi2 / static_cast<double>(g.size());
}

mc::ExperimentConfig two_node(double eta, double detuning_hz, double sigma_each_hz, double rate, double duration,
                              double jitter_ps, std::uint64_t seed) {
  auto c = fixtures::hom_experiment(eta, detuning_hz, sigma_each_hz, rate, duration, seed);
  for (auto& d : c.detectors) d.timing_jitter_sigma = jitter_ps;
  return c;
}

// ---- criteria ------------------------------------------------------------

Outcome fourier_limit_check() {
  const double f = model::fourier_limit(5.6e-9);
  return {std::abs(f - 28.4e6) <= 0.1e6, fmt("fourier_limit(5.6 ns) = %.3f MHz (28.4 +/- 0.1)", f * 1e-6)};
}

double closed_form_sd(const model::TpiConfig& cfg, double tau) {
  const double gamma = 1.0 / cfg.source1.emitter.radiative_lifetime;
  const double single = 1.0 - std::exp(-gamma * std::abs(tau));
  const double env = std::exp(-0.5 * (cfg.source1.emitter.coherence_rate() + cfg.source2.emitter.coherence_rate()) *
                              std::abs(tau));
  const double beat =
      std::exp(-0.5 * cfg.sd_sigma_combined * cfg.sd_sigma_combined * tau * tau) * std::cos(cfg.detuning * tau);
  return 0.5 * single + 0.5 * (1.0 - cfg.eta * env * beat);
}

Outcome convolution_oracle() {
  const double sets[5][3] = {{1.0, 0.0, 100e6}, {0.8, 800e6, 200e6}, {0.63, 800e6, 150e6},
                             {0.9, 1300e6, 400e6}, {0.5, 300e6, 1e9}};
  std::vector<double> taus(1001);
  for (int i = 0; i < 1001; ++i) taus[i] = -60e-9 + 120e-9 * i / 1000.0;
  double worst = 0.0;
  for (const auto& s : sets) {
    const auto cfg = fixtures::ideal_tpi(s[0], s[1], s[2]);
    const auto curve = model::eval_g2_sd_curve(cfg, taus);
    for (std::size_t i = 0; i < taus.size(); ++i) {
      const double ref = closed_form_sd(cfg, taus[i]);
      worst = std::max(worst, std::abs(curve[i] - ref) / ref);
    }
  }
  return {worst < 1e-6, fmt("max rel. error %.2e over 5 sets x 1001 points (< 1e-6)", worst)};
}

Outcome mc_analytic_equivalence() {
  bool ok = true;
  std::string detail;
  std::uint64_t seed = 301;
  for (double dnu : {0.0, 800e6}) {
    const auto cfg = two_node(1.0, dnu, 0.0, 1.5e5, 110.0, 0.0, seed++);
    const Streamed s = simulate_and_correlate(cfg, 200, 30'000);
    const double chi = pearson_chi2_per_bin(s, mc::to_tpi_config(cfg), 0.0);
    const auto total = s.raw.total();
    ok = ok && chi >= 0.5 && chi <= 2.0 && total >= 100'000;
    detail += fmt("%s%.0f MHz: chi2/dof %.3f, %llu coincidences", detail.empty() ? "" : "; ", dnu * 1e-6, chi,
                  static_cast<unsigned long long>(total));
  }
  return {ok, detail + " (chi2/dof in [0.5, 2])"};
}

fit::FitResult pipeline_fit(const mc::ExperimentConfig& cfg, double jitter_ps) {
  const Streamed s = simulate_and_correlate(cfg, 200, 70'000);
  fit::HomFitInit init;
  init.eta = 0.7;
  init.irf_sigma = std::sqrt(2.0) * jitter_ps * 1e-12;
  return fit::fit_g2_hom(s.curve(), init);
}

Outcome visibility_regimes() {
  bool ok = true;
  std::string detail;
  const struct {
    double eta, dnu, sigma_combined;
  } regimes[] = {{0.80, 0.0, 100e6}, {0.63, 800e6, 150e6}};
  std::uint64_t seed = 401;
  for (const auto& r : regimes) {
    const auto cfg = two_node(r.eta, r.dnu, r.sigma_combined / std::sqrt(2.0), 2e5, 200.0, 50.0, seed++);
    const auto fit = pipeline_fit(cfg, 50.0);
    const double v = fit.derived.at("v_hom");
    ok = ok && std::abs(v - r.eta) <= 0.03;
    detail += fmt("V_HOM(0) %.3f +/- %.3f (target %.2f, %.0f MHz); ", v, fit.derived.at("v_hom_sigma"), r.eta,
                  r.dnu * 1e-6);
  }
  // wash-out: 1300 MHz beat against 500 ps jitter per detector
  auto washed = two_node(1.0, 1300e6, 0.0, 3e5, 60.0, 500.0, seed++);
  auto reference = washed;
  reference.mixing_mode = mc::MixingMode::distinguishable;
  reference.seed = seed++;
  const auto par = simulate_and_correlate(washed, 512, 20'480).curve();
  const auto ref = simulate_and_correlate(reference, 512, 20'480).curve();
  const auto vis = tags::hom_visibility(par, ref);
  ok = ok && vis.value < 0.1;
  detail += fmt("1300 MHz / 500 ps: binned V %.3f +/- %.3f (< 0.1)", vis.value, vis.sigma);
  return {ok, detail};
}

Outcome beat_frequency() {
  const auto cfg = two_node(1.0, 800e6, 0.0, 1.5e5, 40.0, 0.0, 501);
  const Streamed s = simulate_and_correlate(cfg, 100, 50'000);
  const auto g = s.curve();
  const double df = 1.0 / (static_cast<double>(g.size()) * 100e-12);
  const double peak = fit::beat_peak_frequency(g, 4.0 / 5.6e-9 / (2.0 * M_PI));
  return {std::abs(peak - 800e6) <= df,
          fmt("FFT peak %.1f MHz, bin %.1f MHz (800 +/- 1 bin)", peak * 1e-6, df * 1e-6)};
}

Outcome stark_round_trip() {
  const auto m = fixtures::kinked_model();
  const auto t = fixtures::kinked_trap();
  const double span = stark::tuning_range(m, t, -100.0, 130.0);
  const double mid_truth = stark::kink_voltage(m, t);
  const bool exact_half = stark::trap_occupation(t, m.field(mid_truth)) == 0.5;

  const auto curve = fixtures::tuning_curve(m, t, -100.0, 130.0, 116, 5e6, 601);
  fit::StarkFitInit init;
  auto mg = m;
  mg.mu_tin *= 1.1;
  mg.trap_field = 8.0;
  init.model = mg;
  auto tg = t;
  tg.a0 = 20.0;
  tg.mu_trap = 0.3;
  init.trap = tg;
  const auto r = fit::fit_stark(curve, init);
  const auto fm = fit::stark_model_from(r);
  const double mid = r.derived.at("kink_voltage");
  double worst = 0.0;
  const double pairs[4][2] = {{fm.mu_tin, m.mu_tin}, {fm.alpha, m.alpha}, {fm.beta, m.beta}, {fm.gamma_4, m.gamma_4}};
  for (const auto& p : pairs) worst = std::max(worst, std::abs(p[0] / p[1] - 1.0));
  const bool ok = exact_half && std::abs(mid - mid_truth) <= 1.0 && worst <= 0.05 && std::abs(span - 4e9) < 0.2e9;
  return {ok, fmt("span %.3f GHz, midpoint %.2f V (truth %.2f, +/- 1), worst coefficient %.2f%% (5%%), "
                  "p(mid) %s 0.5",
                  span * 1e-9, mid, mid_truth, 100.0 * worst, exact_half ? "==" : "!=")};
}

Outcome purity_fixtures() {
  bool ok = true;
  std::string detail;
  std::uint64_t seed = 701;
  for (double target : {0.09, 0.05}) {
    mc::ExperimentConfig c;
    mc::SourceConfig src;
    src.emitter.radiative_lifetime = 5.6e-9;
    src.rates.signal_rate = 5e5;
    c.sources = {src};
    c.duration = 30.0;
    c.seed = seed++;
    // darks dilute the signal fraction too; size the background so S / (I + darks) hits the target
    const double rho = std::sqrt(1.0 - target);
    const double darks = c.detectors[0].dark_rate + c.detectors[1].dark_rate;
    c.sources[0].rates.total_rate = src.rates.signal_rate / rho - darks;
    const Streamed s = simulate_and_correlate(c, 256, 40'000);
    fit::RabiFitInit init;
    init.mode = model::G2Mode::rate_equation;
    init.t1 = 5.6e-9;
    init.pump = mc::pump_rate(c, 0);
    init.rho = 0.9;
    init.irf_sigma = model::combined_irf_sigma(c.detectors[0].timing_jitter_sigma,
                                               c.detectors[1].timing_jitter_sigma) * 1e-12;
    const auto r = fit::fit_g2_single(s.curve(), init);
    const double g0 = r.derived.at("g2_zero");
    ok = ok && std::abs(g0 - target) <= 0.02;
    detail += fmt("%sg2(0) %.4f +/- %.4f (target %.2f)", detail.empty() ? "" : "; ", g0,
                  r.derived.at("g2_zero_sigma"), target);
  }
  return {ok, detail + " (+/- 0.02)"};
}

Outcome estimator_sanity() {
  // dark-count-only detectors: g2 = 1 within 3 sigma on every bin
  auto dark = fixtures::hom_experiment(1.0, 0.0, 0.0, 0.0, 20.0, 801);
  dark.sources.resize(1);
  dark.sources[0].rates.total_rate = 1e-9;
  for (auto& d : dark.detectors) d.dark_rate = 2e5;
  const auto g = simulate_and_correlate(dark, 1000, 10'000).curve();
  std::size_t outside = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::abs(g.g2[i] - 1.0) > 3.0 * g.sigma[i]) ++outside;
  }

  // tag file round trip
  const auto run = mc::simulate_experiment(two_node(0.9, 800e6, 50e6, 5e4, 2.0, 350.0, 802));
  std::ostringstream a(std::ios::binary), b(std::ios::binary);
  tags::write_tags(run.tags, a);
  std::istringstream in(a.str(), std::ios::binary);
  tags::write_tags(tags::read_tags(in), b);
  const bool identical = a.str() == b.str();

  // slices simulated separately and merged correlate like the whole run
  auto cfg = two_node(0.9, 800e6, 50e6, 5e4, 4.0, 350.0, 803);
  cfg.slice_duration = 0.5;
  for (auto& d : cfg.detectors) d.dead_time = 0.0;
  const auto whole = mc::simulate_experiment(cfg);
  const auto merged = tags::merge(mc::simulate_slices(cfg, 0, 3).tags, mc::simulate_slices(cfg, 3, 5).tags);
  const bool same = tags::cross_correlate(merged, 1, 2, 512, 100'000) ==
                    tags::cross_correlate(whole.tags, 1, 2, 512, 100'000);

  return {outside == 0 && identical && same,
          fmt("%zu/%zu bins outside 3 sigma; round trip %s; slice merge %s", outside, g.size(),
              identical ? "byte-identical" : "differs", same ? "equal" : "differs")};
}

Outcome fitter_properties() {
  std::mt19937_64 rng(901);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst_jac = 0.0;
  bool monotone = true;

  const auto column_error = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    double w = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double ref = b.col(c).norm();
      w = std::max(w, ref == 0.0 ? a.col(c).norm() : (a.col(c) - b.col(c)).norm() / ref);
    }
    return w;
  };
  const auto check_monotone = [&](const fit::FitResult& r) {
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
      monotone = monotone && r.objective_trace[i] <= r.objective_trace[i - 1];
    }
  };
  const auto exponential = [&](double amp, double rate) {
    fit::FitProblem p;
    p.model = fit::pointwise([](std::span<const double> q, double x) { return q[0] * std::exp(-q[1] * x); });
    for (int i = 0; i < 40; ++i) {
      p.x.push_back(0.1 * i);
      p.y.push_back(amp * std::exp(-rate * 0.1 * i) + 0.05 * normal(rng));
      p.sigma.push_back(0.05);
    }
    p.initial = {1.0, 1.0};
    return p;
  };

  // exponential
  {
    auto p = exponential(2.0, 0.7);
    p.validate();
    for (int k = 0; k < 10; ++k) {
      const std::vector<double> q{0.5 + 2.0 * u(rng), 0.1 + 3.0 * u(rng)};
      worst_jac = std::max(worst_jac, column_error(fit::numeric_jacobian(p, q), fit::forward_jacobian(p, q)));
    }
  }
  // two-photon interference
  {
    fit::HomFitInit init;
    init.irf_sigma = 70e-12;
    fit::FitProblem p;
    for (int i = -150; i <= 150; ++i) p.x.push_back(0.2 * i);
    p.y.assign(p.x.size(), 1.0);
    p.sigma.assign(p.x.size(), 0.05);
    p.initial = {0.8, 0.8, 0.1, 0.18, 0.18, 1.0, 1.0};
    p.typical = {1.0, 1.0, 0.1, 0.1, 0.1, 1.0, 1.0};
    p.model = [&init](std::span<const double> q, std::span<const double> x, std::span<double> out) {
      const auto v = fit::hom_model(q, x, init, 0.2);
      std::copy(v.begin(), v.end(), out.begin());
    };
    p.validate();
    for (int k = 0; k < 10; ++k) {
      const std::vector<double> q{0.2 + 0.8 * u(rng), 1.5 * u(rng),      0.02 + 0.3 * u(rng), 0.1 + 0.2 * u(rng),
                                  0.1 + 0.2 * u(rng), 0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng)};
      worst_jac = std::max(worst_jac, column_error(fit::numeric_jacobian(p, q), fit::forward_jacobian(p, q)));
    }
  }
  // single emitter
  {
    fit::FitProblem p;
    for (int i = -200; i <= 200; ++i) p.x.push_back(0.1 * i);
    p.y.assign(p.x.size(), 1.0);
    p.sigma.assign(p.x.size(), 0.05);
    p.initial = {1.0, 0.18, 0.0};
    p.model = fit::pointwise([](std::span<const double> q, double t) {
      model::EmitterParams em;
      em.rabi_frequency = q[0] * 1e9;
      em.radiative_lifetime = 1e-9 / q[1];
      em.dephasing_rate = q[2] * 1e9;
      return model::eval_g2_single(em, t * 1e-9, model::G2Mode::coherent_drive);
    });
    p.validate();
    for (int k = 0; k < 10; ++k) {
      const std::vector<double> q{0.3 + 2.0 * u(rng), 0.1 + 0.3 * u(rng), 0.01 + 0.2 * u(rng)};
      worst_jac = std::max(worst_jac, column_error(fit::numeric_jacobian(p, q), fit::forward_jacobian(p, q)));
    }
  }
  // Stark tuning
  {
    const auto m0 = fixtures::kinked_model();
    const auto t0 = fixtures::kinked_trap();
    fit::FitProblem p;
    for (int i = 0; i < 60; ++i) {
      const double v = -100.0 + 230.0 * i / 59.0;
      p.x.push_back(v);
      p.y.push_back(stark::stark_total(m0, t0, v));
      p.sigma.push_back(1e6);
    }
    p.initial = {m0.mu_tin, m0.alpha, m0.beta, m0.gamma_4, m0.trap_field, t0.a0, t0.mu_trap};
    p.typical = p.initial;
    p.model = fit::pointwise([](std::span<const double> q, double v) {
      stark::StarkModel m;
      m.mu_tin = q[0];
      m.alpha = q[1];
      m.beta = q[2];
      m.gamma_4 = q[3];
      m.trap_field = q[4];
      stark::TrapParams t;
      t.a0 = q[5];
      t.mu_trap = q[6];
      return stark::stark_total(m, t, v);
    });
    p.validate();
    for (int k = 0; k < 10; ++k) {
      std::vector<double> q = p.initial;
      for (auto& v : q) v *= 0.8 + 0.4 * u(rng);
      worst_jac = std::max(worst_jac, column_error(fit::numeric_jacobian(p, q), fit::forward_jacobian(p, q)));
    }
    p.initial[4] = 8.0;
    p.initial[5] = 20.0;
    p.initial[6] = 0.3;
    check_monotone(fit::lsq_fit(p));
  }

  int covered = 0;
  for (int t = 0; t < 100; ++t) {
    const auto r = fit::lsq_fit(exponential(2.0, 0.7));
    check_monotone(r);
    if (std::abs(r.params[0] - 2.0) < 3.0 * r.sigmas[0] && std::abs(r.params[1] - 0.7) < 3.0 * r.sigmas[1]) {
      ++covered;
    }
  }
  return {worst_jac < 1e-4 && monotone && covered >= 95,
          fmt("Jacobian rel. error %.1e (< 1e-4); objective %s; %d/100 trials within 3 sigma (>= 95)", worst_jac,
              monotone ? "monotone" : "NOT monotone", covered)};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"Fourier limit", fourier_limit_check},
      {"convolution oracle", convolution_oracle},
      {"MC vs analytic", mc_analytic_equivalence},
      {"visibility regimes", visibility_regimes},
      {"beat frequency", beat_frequency},
      {"Stark round trip", stark_round_trip},
      {"purity fixtures", purity_fixtures},
      {"estimator sanity", estimator_sanity},
      {"fitter properties", fitter_properties},
  };
  int failures = 0;
  int index = 1;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", index++, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
