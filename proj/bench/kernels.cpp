// Serial reference vs OpenMP kernels.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "homlab/model.hpp"
#include "homlab/montecarlo.hpp"
#include "homlab/tagproc.hpp"

using namespace homlab;

namespace {

std::vector<std::uint64_t> poisson_times(double rate, double seconds, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(rate * 1e-12);
  std::vector<std::uint64_t> t;
  for (double now = gap(rng); now < seconds * 1e12; now += gap(rng)) t.push_back(static_cast<std::uint64_t>(now));
  return t;
}

const std::vector<std::uint64_t>& times_a() {
  static const auto t = poisson_times(5e5, 4.0, 1);
  return t;
}
const std::vector<std::uint64_t>& times_b() {
  static const auto t = poisson_times(5e5, 4.0, 2);
  return t;
}

model::TpiConfig tpi() {
  model::TpiConfig c;
  c.eta = 0.8;
  c.detuning = 2.0 * M_PI * 800e6;
  c.sd_sigma_combined = 2.0 * M_PI * 150e6;
  return c;
}

std::vector<double> taus() {
  std::vector<double> t(4001);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = -60e-9 + 30e-12 * static_cast<double>(i);
  return t;
}

mc::ExperimentConfig experiment() {
  mc::ExperimentConfig c;
  for (int i = 0; i < 2; ++i) {
    mc::SourceConfig s;
    s.emitter.center_frequency_offset = i == 0 ? 800e6 : 0.0;
    s.emitter.spectral_diffusion_sigma = 100e6;
    s.rates.signal_rate = 2e5;
    s.rates.total_rate = 2e5;
    c.sources.push_back(s);
  }
  c.duration = 4.0;
  c.slice_duration = 0.5;
  return c;
}

void BM_correlate_serial(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(tags::correlate_times_serial(times_a(), times_b(), false, 512, 50'000));
  }
}
void BM_correlate_parallel(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(tags::correlate_times(times_a(), times_b(), false, 512, 50'000));
  }
}

void BM_g2_sd_serial(benchmark::State& state) {
  const auto cfg = tpi();
  const auto t = taus();
  for (auto _ : state) benchmark::DoNotOptimize(model::eval_g2_sd_curve_serial(cfg, t));
}
void BM_g2_sd_parallel(benchmark::State& state) {
  const auto cfg = tpi();
  const auto t = taus();
  for (auto _ : state) benchmark::DoNotOptimize(model::eval_g2_sd_curve(cfg, t));
}

void BM_simulate_serial(benchmark::State& state) {
  const auto cfg = experiment();
  for (auto _ : state) benchmark::DoNotOptimize(mc::simulate_experiment_serial(cfg));
}
void BM_simulate_parallel(benchmark::State& state) {
  const auto cfg = experiment();
  for (auto _ : state) benchmark::DoNotOptimize(mc::simulate_experiment(cfg));
}

}  // namespace

BENCHMARK(BM_correlate_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_correlate_parallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_g2_sd_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_g2_sd_parallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_simulate_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_simulate_parallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
