#include "homlab/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <string>

#include "homlab/errors.hpp"
#include "homlab/units.hpp"

namespace homlab::mc {

namespace {

using Rng = std::mt19937_64;

constexpr std::uint64_t kRoutingStream = 0x9e37;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename Fn>
void with_prefix(const std::string& prefix, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + "." + e.path(), std::string(e.what()).substr(e.path().size() + 2));
  } catch (const DomainError& e) {
    throw ConfigError(prefix, e.what());
  }
}

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(field, what);
}

void check_sorted(const std::vector<PhotonRecord>& stream) {
  for (std::size_t i = 1; i < stream.size(); ++i) {
    if (stream[i].emission_time < stream[i - 1].emission_time) {
      throw PreconditionError("interfere_and_detect: photon stream not sorted at index " + std::to_string(i));
    }
  }
}

struct SliceOutput {
  tags::TagStream tags;
  SimulationStats stats;
};

SliceOutput run_slice(const ExperimentConfig& config, std::size_t slice) {
  const double slice_ps = units::s_to_ps(config.slice_duration);
  const double total_ps = units::s_to_ps(config.duration);
  const double start = static_cast<double>(slice) * slice_ps;
  const double end = std::min(start + slice_ps, total_ps);
  const double eff = config.mean_efficiency();

  std::vector<std::vector<PhotonRecord>> streams;
  for (std::size_t i = 0; i < config.sources.size(); ++i) {
    SourceConfig src = config.sources[i];
    src.emitter.excitation_rate = pump_rate(config, i);
    streams.push_back(simulate_stream(src, static_cast<int>(i), eff, start, end - start,
                                      derive_seed(config.seed, slice, i)));
  }
  SliceOutput out;
  out.tags = interfere_and_detect(streams, config, start, end, derive_seed(config.seed, slice, kRoutingStream),
                                  &out.stats);
  return out;
}

SimulationResult assemble(const ExperimentConfig& config, std::vector<SliceOutput>& slices) {
  SimulationResult result;
  std::size_t total = 0;
  for (const auto& s : slices) total += s.tags.records.size();
  result.tags.records.reserve(total);
  for (auto& s : slices) {
    result.tags.records.insert(result.tags.records.end(), s.tags.records.begin(), s.tags.records.end());
    result.stats += s.stats;
    s.tags.records.clear();
    s.tags.records.shrink_to_fit();
  }
  finalize_tags(result.tags, config, &result.stats);
  return result;
}

}  // namespace

void DetectorModel::validate() const {
  require(efficiency >= 0.0 && efficiency <= 1.0, "efficiency", "must lie in [0, 1]");
  require(timing_jitter_sigma >= 0.0 && std::isfinite(timing_jitter_sigma), "timing_jitter_sigma",
          "must be >= 0");
  require(dead_time >= 0.0 && std::isfinite(dead_time), "dead_time", "must be >= 0");
  require(dark_rate >= 0.0 && std::isfinite(dark_rate), "dark_rate", "must be >= 0");
  require(resolution >= 1.0 && resolution == std::floor(resolution) && resolution < 4.0e9, "resolution",
          "must be a whole number of picoseconds >= 1");
}

void ExperimentConfig::validate() const {
  require(sources.size() == 1 || sources.size() == 2, "sources", "need one or two sources");
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const std::string prefix = "sources[" + std::to_string(i) + "]";
    with_prefix(prefix + ".emitter", [&] { sources[i].emitter.validate(); });
    with_prefix(prefix + ".rates", [&] { sources[i].rates.validate(); });
    require(sources[i].sd_correlation_time >= 0.0, (prefix + ".sd_correlation_time").c_str(), "must be >= 0");
  }
  for (std::size_t d = 0; d < detectors.size(); ++d) {
    with_prefix("detectors[" + std::to_string(d) + "]", [&] { detectors[d].validate(); });
  }
  require(mean_efficiency() > 0.0, "detectors", "at least one detector needs non-zero efficiency");
  require(eta >= 0.0 && eta <= 1.0, "eta", "must lie in [0, 1]");
  require(duration > 0.0 && std::isfinite(duration), "duration", "must be > 0");
  require(slice_duration > 0.0 && std::isfinite(slice_duration), "slice_duration", "must be > 0");
  require(coherence_window_t1 > 0.0, "coherence_window_t1", "must be > 0");
  for (std::size_t i = 0; i < sources.size(); ++i) {
    with_prefix("sources[" + std::to_string(i) + "].rates.signal_rate", [&] { pump_rate(*this, i); });
  }
}

std::size_t ExperimentConfig::slice_count() const {
  return static_cast<std::size_t>(std::ceil(duration / slice_duration - 1e-12));
}

double ExperimentConfig::mean_efficiency() const {
  return 0.5 * (detectors[0].efficiency + detectors[1].efficiency);
}

std::uint64_t SimulationStats::generated() const {
  return signal_photons[0] + signal_photons[1] + background_photons[0] + background_photons[1];
}

SimulationStats& SimulationStats::operator+=(const SimulationStats& other) {
  for (int i = 0; i < 2; ++i) {
    signal_photons[i] += other.signal_photons[i];
    background_photons[i] += other.background_photons[i];
  }
  dark_counts += other.dark_counts;
  detected += other.detected;
  interfering_pairs += other.interfering_pairs;
  triple_overlaps += other.triple_overlaps;
  return *this;
}

double excitation_rate_for(const model::EmitterParams& emitter, double detected_rate, double efficiency) {
  if (!(efficiency > 0.0)) throw DomainError("efficiency must be > 0");
  if (detected_rate <= 0.0) return 0.0;
  const double emission = detected_rate / efficiency;
  const double gamma = emitter.decay_rate();
  if (emission >= gamma) {
    throw DomainError("requested rate exceeds the saturated emission rate 1/T1");
  }
  return emission * gamma / (gamma - emission);
}

double pump_rate(const ExperimentConfig& config, std::size_t source) {
  const auto& s = config.sources.at(source);
  return excitation_rate_for(s.emitter, s.rates.signal_rate, config.mean_efficiency());
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix64(splitmix64(seed ^ splitmix64(index)) ^ (stream * 0xd1342543de82ef95ULL));
}

std::vector<PhotonRecord> simulate_stream(const SourceConfig& source, int source_id, double mean_efficiency,
                                          double start_ps, double duration_ps, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& em = source.emitter;
  const double decay = em.decay_rate();
  const double end = start_ps + duration_ps;

  std::vector<PhotonRecord> signal;
  if (em.excitation_rate > 0.0) {
    std::exponential_distribution<double> excite(em.excitation_rate * units::kPicosecond);
    std::exponential_distribution<double> emit(decay * units::kPicosecond);
    const double sigma = em.spectral_diffusion_sigma;
    const double tc = source.sd_correlation_time;
    double wander = sigma > 0.0 ? sigma * normal(rng) : 0.0;
    double t = start_ps;
    double last = start_ps;
    for (;;) {
      t += excite(rng);
      t += emit(rng);
      if (t >= end) break;
      if (sigma > 0.0) {
        if (tc > 0.0) {
          const double keep = std::exp(-(t - last) / tc);
          wander = wander * keep + sigma * std::sqrt(1.0 - keep * keep) * normal(rng);
        } else {
          wander = sigma * normal(rng);
        }
      }
      signal.push_back({source_id, t, em.center_frequency_offset + wander, decay, false});
      last = t;
    }
  }

  std::vector<PhotonRecord> background;
  const double bg_rate = (source.rates.total_rate - source.rates.signal_rate) / mean_efficiency;
  if (bg_rate > 0.0) {
    std::exponential_distribution<double> gap(bg_rate * units::kPicosecond);
    for (double t = start_ps + gap(rng); t < end; t += gap(rng)) {
      background.push_back({source_id, t, em.center_frequency_offset, decay, true});
    }
  }
  if (background.empty()) return signal;

  std::vector<PhotonRecord> merged(signal.size() + background.size());
  std::merge(signal.begin(), signal.end(), background.begin(), background.end(), merged.begin(),
             [](const PhotonRecord& a, const PhotonRecord& b) { return a.emission_time < b.emission_time; });
  return merged;
}

tags::TagStream interfere_and_detect(std::span<const std::vector<PhotonRecord>> streams,
                                     const ExperimentConfig& config, double start_ps, double end_ps,
                                     std::uint64_t seed, SimulationStats* stats) {
  if (streams.empty() || streams.size() > 2) {
    throw PreconditionError("interfere_and_detect: need one or two photon streams");
  }
  for (const auto& s : streams) check_sorted(s);

  Rng rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  SimulationStats local;

  // Time-ordered view over all photons.
  struct Ref {
    double time;
    std::uint32_t source;
    std::uint32_t index;
  };
  std::vector<Ref> order;
  for (std::uint32_t s = 0; s < streams.size(); ++s) {
    for (std::uint32_t i = 0; i < streams[s].size(); ++i) {
      order.push_back({streams[s][i].emission_time, s, i});
      if (streams[s][i].background) {
        ++local.background_photons[std::min<std::uint32_t>(streams[s][i].source_id, 1)];
      } else {
        ++local.signal_photons[std::min<std::uint32_t>(streams[s][i].source_id, 1)];
      }
    }
  }
  std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) { return a.time < b.time; });

  const bool interfering = config.mixing_mode == MixingMode::interfering && streams.size() == 2;
  double longest_t1 = 0.0;
  for (const auto& s : config.sources) longest_t1 = std::max(longest_t1, s.emitter.radiative_lifetime);
  const double window_ps = config.coherence_window_t1 * units::s_to_ps(longest_t1);
  std::array<double, 2> coherence{};
  for (std::size_t s = 0; s < config.sources.size() && s < 2; ++s) {
    coherence[s] = config.sources[s].emitter.coherence_rate() * units::kPicosecond;
  }

  // Unpartnered signal photons of each source inside the look-back window,
  // as indices into `order`; the front is the earliest.
  std::array<std::deque<std::size_t>, 2> open;
  std::vector<std::uint8_t> port(order.size(), 0);
  std::vector<std::uint16_t> flag(order.size(), 0);

  for (std::size_t j = 0; j < order.size(); ++j) {
    const Ref& ref = order[j];
    const PhotonRecord& photon = streams[ref.source][ref.index];
    if (photon.background) flag[j] |= tags::flags::kBackground;
    bool routed = false;
    if (interfering && !photon.background) {
      auto& candidates = open[1 - ref.source];
      while (!candidates.empty() && ref.time - order[candidates.front()].time > window_ps) {
        candidates.pop_front();
      }
      if (candidates.size() > 1) ++local.triple_overlaps;
      if (!candidates.empty()) {
        const std::size_t i = candidates.front();
        candidates.pop_front();
        const PhotonRecord& partner = streams[order[i].source][order[i].index];
        const double tau_ps = ref.time - order[i].time;
        const double envelope = std::exp(-0.5 * (coherence[0] + coherence[1]) * tau_ps);
        const double beat = std::cos(units::kTwoPi * (photon.frequency_offset - partner.frequency_offset) *
                                     tau_ps * units::kPicosecond);
        const double p_split = 0.5 * (1.0 - config.eta * envelope * beat);
        port[j] = uniform(rng) < p_split ? 1 - port[i] : port[i];
        flag[i] |= tags::flags::kPaired;
        flag[j] |= tags::flags::kPaired;
        ++local.interfering_pairs;
        routed = true;
      } else {
        open[ref.source].push_back(j);
      }
    }
    if (!routed) port[j] = uniform(rng) < 0.5 ? 0 : 1;
  }

  tags::TagStream out;
  out.channel_count = 2;
  out.resolution_ps = static_cast<std::uint32_t>(
      std::min(config.detectors[0].resolution, config.detectors[1].resolution));
  out.records.reserve(order.size() / 2 + 16);
  const auto emit_tag = [&](double t, std::uint16_t channel, std::uint16_t f) {
    if (t < 0.0) return;
    out.records.push_back({static_cast<std::uint64_t>(std::llround(t)), channel, f});
  };
  for (std::size_t j = 0; j < order.size(); ++j) {
    const DetectorModel& det = config.detectors[port[j]];
    if (uniform(rng) >= det.efficiency) continue;
    emit_tag(order[j].time + det.timing_jitter_sigma * normal(rng), static_cast<std::uint16_t>(port[j] + 1),
             flag[j]);
  }
  for (std::uint16_t d = 0; d < 2; ++d) {
    const double rate = config.detectors[d].dark_rate;
    if (rate <= 0.0) continue;
    std::exponential_distribution<double> gap(rate * units::kPicosecond);
    for (double t = start_ps + gap(rng); t < end_ps; t += gap(rng)) {
      emit_tag(t, static_cast<std::uint16_t>(d + 1), tags::flags::kDarkCount);
      ++local.dark_counts;
    }
  }
  std::sort(out.records.begin(), out.records.end(), tags::tag_order);
  out.duration_s = units::ps_to_s(end_ps - start_ps);
  local.detected = out.records.size();
  if (stats) *stats += local;
  return out;
}

void finalize_tags(tags::TagStream& stream, const ExperimentConfig& config, SimulationStats* stats) {
  auto& recs = stream.records;
  std::sort(recs.begin(), recs.end(), tags::tag_order);
  const auto limit = static_cast<std::uint64_t>(std::llround(units::s_to_ps(config.duration)));
  std::array<std::uint64_t, 2> quantum{};
  std::array<std::uint64_t, 2> dead{};
  for (int d = 0; d < 2; ++d) {
    quantum[d] = static_cast<std::uint64_t>(config.detectors[d].resolution);
    dead[d] = static_cast<std::uint64_t>(std::llround(config.detectors[d].dead_time));
  }
  std::array<bool, 2> seen{};
  std::array<std::uint64_t, 2> last{};
  std::size_t kept = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    tags::TagRecord r = recs[i];
    const int d = r.channel - 1;
    r.timestamp_ps -= r.timestamp_ps % quantum[d];
    if (r.timestamp_ps >= limit) continue;
    if (seen[d] && r.timestamp_ps - last[d] < dead[d]) continue;
    seen[d] = true;
    last[d] = r.timestamp_ps;
    recs[kept++] = r;
  }
  recs.resize(kept);
  // Quantization can reorder ties across channels.
  std::sort(recs.begin(), recs.end(), tags::tag_order);
  stream.channel_count = 2;
  stream.resolution_ps = static_cast<std::uint32_t>(std::min(quantum[0], quantum[1]));
  stream.duration_s = config.duration;
  if (stats) stats->detected = recs.size();
}

SimulationResult simulate_slices(const ExperimentConfig& config, std::size_t first, std::size_t count) {
  config.validate();
  std::vector<SliceOutput> slices(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    slices[k] = run_slice(config, first + static_cast<std::size_t>(k));
  }
  return assemble(config, slices);
}

SimulationResult simulate_experiment(const ExperimentConfig& config) {
  config.validate();
  return simulate_slices(config, 0, config.slice_count());
}

SimulationResult simulate_experiment_serial(const ExperimentConfig& config) {
  config.validate();
  std::vector<SliceOutput> slices(config.slice_count());
  for (std::size_t k = 0; k < slices.size(); ++k) slices[k] = run_slice(config, k);
  return assemble(config, slices);
}

model::TpiConfig to_tpi_config(const ExperimentConfig& config) {
  config.validate();
  if (config.sources.size() != 2) throw PreconditionError("to_tpi_config: need two sources");
  model::TpiConfig cfg;
  cfg.source1 = {config.sources[0].emitter, config.sources[0].rates};
  cfg.source2 = {config.sources[1].emitter, config.sources[1].rates};
  cfg.source1.emitter.excitation_rate = pump_rate(config, 0);
  cfg.source2.emitter.excitation_rate = pump_rate(config, 1);
  cfg.eta = config.mixing_mode == MixingMode::interfering ? config.eta : 0.0;
  cfg.detuning = units::kTwoPi * (config.sources[0].emitter.center_frequency_offset -
                                  config.sources[1].emitter.center_frequency_offset);
  cfg.sd_sigma_combined = model::combined_sd_sigma(config.sources[0].emitter, config.sources[1].emitter);
  return cfg;
}

}  // namespace homlab::mc
