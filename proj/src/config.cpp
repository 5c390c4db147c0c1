#include "homlab/config.hpp"

#include <fstream>
#include <set>
#include <string>

#include "homlab/errors.hpp"
#include "homlab/units.hpp"

namespace homlab::config {

namespace {

using nlohmann::json;

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Reads keys of one JSON object and rejects the ones nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  void number(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(path(key), "expected a number");
    out = v.get<double>();
  }

  void integer(const std::string& key, int& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(path(key), "expected an integer");
    out = v.get<int>();
  }

  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(path(key), "expected true or false");
    out = v.get<bool>();
  }

  // Number in `bare_scale` units or a suffixed string parsed by `parse`.
  template <typename Parse>
  void quantity(const std::string& key, double& out, Parse parse, double bare_scale, double parsed_scale) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (v.is_number()) {
      out = v.get<double>() * bare_scale;
    } else if (v.is_string()) {
      try {
        out = parse(v.get<std::string>()) * parsed_scale;
      } catch (const std::invalid_argument& e) {
        throw ConfigError(path(key), e.what());
      }
    } else {
      throw ConfigError(path(key), "expected a number or a string with units");
    }
  }

  // Time stored in ps.
  void time_ps(const std::string& key, double& out) { quantity(key, out, units::parse_time_ps, 1.0, 1.0); }
  // Time stored in s; bare numbers in ps.
  void time_s_from_ps(const std::string& key, double& out) {
    quantity(key, out, units::parse_time_ps, 1e-12, 1e-12);
  }
  // Time stored in s; bare numbers in s.
  void seconds(const std::string& key, double& out) { quantity(key, out, units::parse_time_ps, 1.0, 1e-12); }
  void frequency(const std::string& key, double& out) {
    quantity(key, out, units::parse_frequency_hz, 1.0, 1.0);
  }
  void voltage(const std::string& key, double& out) { quantity(key, out, units::parse_voltage_v, 1.0, 1.0); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(join(path_, key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_emitter(const json& j, const std::string& path, model::EmitterParams& e) {
  Fields f(j, path);
  f.time_s_from_ps("radiative_lifetime", e.radiative_lifetime);
  f.number("dephasing_rate", e.dephasing_rate);
  f.frequency("center_frequency_offset", e.center_frequency_offset);
  f.frequency("spectral_diffusion_sigma", e.spectral_diffusion_sigma);
  f.number("excitation_rate", e.excitation_rate);
  f.number("rabi_frequency", e.rabi_frequency);
  f.finish();
}

void read_rates(const json& j, const std::string& path, model::SourceRates& r) {
  Fields f(j, path);
  const bool has_total = f.has("total_rate");
  f.number("signal_rate", r.signal_rate);
  if (has_total) {
    f.number("total_rate", r.total_rate);
  } else {
    r.total_rate = r.signal_rate;
  }
  f.finish();
}

void read_detector(const json& j, const std::string& path, mc::DetectorModel& d) {
  Fields f(j, path);
  f.number("efficiency", d.efficiency);
  f.time_ps("timing_jitter_sigma", d.timing_jitter_sigma);
  f.time_ps("dead_time", d.dead_time);
  f.number("dark_rate", d.dark_rate);
  f.time_ps("resolution", d.resolution);
  f.finish();
}

json emitter_json(const model::EmitterParams& e) {
  return {{"radiative_lifetime", units::s_to_ps(e.radiative_lifetime)},
          {"dephasing_rate", e.dephasing_rate},
          {"center_frequency_offset", e.center_frequency_offset},
          {"spectral_diffusion_sigma", e.spectral_diffusion_sigma},
          {"excitation_rate", e.excitation_rate},
          {"rabi_frequency", e.rabi_frequency}};
}

json detector_json(const mc::DetectorModel& d) {
  return {{"efficiency", d.efficiency},
          {"timing_jitter_sigma", d.timing_jitter_sigma},
          {"dead_time", d.dead_time},
          {"dark_rate", d.dark_rate},
          {"resolution", d.resolution}};
}

void read_stark_model(const json& j, const std::string& path, stark::StarkModel& m) {
  Fields f(j, path);
  f.number("mu_tin", m.mu_tin);
  f.number("alpha", m.alpha);
  f.number("beta", m.beta);
  f.number("gamma_4", m.gamma_4);
  f.number("field_offset", m.field_offset);
  f.number("trap_field", m.trap_field);
  f.number("voltage_to_field", m.voltage_to_field);
  f.finish();
  try {
    m.validate();
  } catch (const DomainError& e) {
    throw ConfigError(path, e.what());
  }
}

void read_trap(const json& j, const std::string& path, stark::TrapParams& t) {
  Fields f(j, path);
  f.number("a0", t.a0);
  f.number("mu_trap", t.mu_trap);
  f.number("thermal_energy", t.thermal_energy);
  f.finish();
  try {
    t.validate();
  } catch (const DomainError& e) {
    throw ConfigError(path, e.what());
  }
}

std::set<std::string> string_set(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of parameter names");
  std::set<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) throw ConfigError(path, "expected an array of parameter names");
    out.insert(item.get<std::string>());
  }
  return out;
}

}  // namespace

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), e.what());
  }
}

mc::ExperimentConfig experiment_from_json(const json& j) {
  mc::ExperimentConfig c;
  Fields f(j, "");
  if (f.has("seed")) {
    const json& s = f.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
      throw ConfigError("seed", "expected a non-negative integer");
    }
    c.seed = s.get<std::uint64_t>();
  }
  f.seconds("duration", c.duration);
  f.seconds("slice_duration", c.slice_duration);
  f.number("eta", c.eta);
  f.number("coherence_window_t1", c.coherence_window_t1);
  if (f.has("mixing_mode")) {
    const json& m = f.at("mixing_mode");
    const std::string mode = m.is_string() ? m.get<std::string>() : "";
    if (mode == "interfering") {
      c.mixing_mode = mc::MixingMode::interfering;
    } else if (mode == "distinguishable") {
      c.mixing_mode = mc::MixingMode::distinguishable;
    } else {
      throw ConfigError("mixing_mode", "expected \"interfering\" or \"distinguishable\"");
    }
  }
  if (f.has("detector")) {
    mc::DetectorModel shared;
    read_detector(f.at("detector"), "detector", shared);
    try {
      shared.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("detector." + e.path(), std::string(e.what()).substr(e.path().size() + 2));
    }
    c.detectors = {shared, shared};
  }
  if (f.has("detectors")) {
    const json& arr = f.at("detectors");
    if (!arr.is_array() || arr.size() != 2) throw ConfigError("detectors", "expected an array of two detectors");
    for (std::size_t d = 0; d < 2; ++d) read_detector(arr[d], "detectors[" + std::to_string(d) + "]", c.detectors[d]);
  }
  if (!f.has("sources")) throw ConfigError("sources", "missing");
  const json& sources = f.at("sources");
  if (!sources.is_array()) throw ConfigError("sources", "expected an array");
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const std::string path = "sources[" + std::to_string(i) + "]";
    mc::SourceConfig src;
    Fields sf(sources[i], path);
    if (sf.has("emitter")) read_emitter(sf.at("emitter"), path + ".emitter", src.emitter);
    if (sf.has("rates")) read_rates(sf.at("rates"), path + ".rates", src.rates);
    sf.time_ps("sd_correlation_time", src.sd_correlation_time);
    sf.finish();
    c.sources.push_back(src);
  }
  f.finish();
  c.validate();
  return c;
}

json experiment_to_json(const mc::ExperimentConfig& c) {
  json sources = json::array();
  for (const auto& s : c.sources) {
    sources.push_back({{"emitter", emitter_json(s.emitter)},
                       {"rates", {{"signal_rate", s.rates.signal_rate}, {"total_rate", s.rates.total_rate}}},
                       {"sd_correlation_time", s.sd_correlation_time}});
  }
  return {{"seed", c.seed},
          {"duration", c.duration},
          {"slice_duration", c.slice_duration},
          {"eta", c.eta},
          {"coherence_window_t1", c.coherence_window_t1},
          {"mixing_mode", c.mixing_mode == mc::MixingMode::interfering ? "interfering" : "distinguishable"},
          {"detectors", json::array({detector_json(c.detectors[0]), detector_json(c.detectors[1])})},
          {"sources", sources}};
}

StarkSetup stark_from_json(const json& j) {
  StarkSetup s;
  Fields f(j, "");
  if (!f.has("model")) throw ConfigError("model", "missing");
  read_stark_model(f.at("model"), "model", s.model);
  if (f.has("trap")) read_trap(f.at("trap"), "trap", s.trap);
  if (f.has("voltage_range")) {
    const json& r = f.at("voltage_range");
    if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number() ||
        !(r[0].get<double>() < r[1].get<double>())) {
      throw ConfigError("voltage_range", "expected [vmin, vmax] with vmin < vmax");
    }
    s.voltage_range = {r[0].get<double>(), r[1].get<double>()};
  }
  f.finish();
  return s;
}

json stark_to_json(const StarkSetup& s) {
  return {{"model",
           {{"mu_tin", s.model.mu_tin},
            {"alpha", s.model.alpha},
            {"beta", s.model.beta},
            {"gamma_4", s.model.gamma_4},
            {"field_offset", s.model.field_offset},
            {"trap_field", s.model.trap_field},
            {"voltage_to_field", s.model.voltage_to_field}}},
          {"trap", {{"a0", s.trap.a0}, {"mu_trap", s.trap.mu_trap}, {"thermal_energy", s.trap.thermal_energy}}},
          {"voltage_range", {s.voltage_range.first, s.voltage_range.second}}};
}

fit::HomFitInit hom_init_from_json(const json& j) {
  fit::HomFitInit init;
  Fields f(j, "");
  f.time_s_from_ps("t1_1", init.t1_1);
  f.time_s_from_ps("t1_2", init.t1_2);
  if (f.has("t1")) {
    f.time_s_from_ps("t1", init.t1_1);
    init.t1_2 = init.t1_1;
  }
  f.number("eta", init.eta);
  if (f.has("detuning")) {
    double d = 0.0;
    f.frequency("detuning", d);
    init.detuning = d;
  }
  if (f.has("sd_sigma")) {
    double s = 0.0;
    f.frequency("sd_sigma", s);
    init.sd_sigma = s;
  }
  f.number("rho1", init.rho1);
  f.number("rho2", init.rho2);
  f.number("weight1", init.weight1);
  f.number("pump1", init.pump1);
  f.number("pump2", init.pump2);
  f.time_s_from_ps("irf_sigma", init.irf_sigma);
  f.time_s_from_ps("fit_window", init.fit_window);
  f.integer("subsamples", init.subsamples);
  f.boolean("reweight", init.reweight);
  if (f.has("free")) init.free = string_set(f.at("free"), "free");
  f.finish();
  return init;
}

fit::RabiFitInit rabi_init_from_json(const json& j) {
  fit::RabiFitInit init;
  Fields f(j, "");
  if (f.has("mode")) {
    const json& m = f.at("mode");
    const std::string mode = m.is_string() ? m.get<std::string>() : "";
    if (mode == "coherent_drive") {
      init.mode = model::G2Mode::coherent_drive;
    } else if (mode == "rate_equation") {
      init.mode = model::G2Mode::rate_equation;
    } else {
      throw ConfigError("mode", "expected \"coherent_drive\" or \"rate_equation\"");
    }
  }
  f.time_s_from_ps("t1", init.t1);
  f.number("rabi_frequency", init.rabi_frequency);
  f.number("dephasing_rate", init.dephasing_rate);
  f.number("pump", init.pump);
  f.number("rho", init.rho);
  f.time_s_from_ps("irf_sigma", init.irf_sigma);
  f.time_s_from_ps("fit_window", init.fit_window);
  f.integer("subsamples", init.subsamples);
  if (f.has("free")) init.free = string_set(f.at("free"), "free");
  f.finish();
  return init;
}

fit::StarkFitInit stark_init_from_json(const json& j) {
  fit::StarkFitInit init;
  Fields f(j, "");
  if (f.has("model")) {
    stark::StarkModel m;
    read_stark_model(f.at("model"), "model", m);
    init.model = m;
  }
  if (f.has("trap")) {
    stark::TrapParams t;
    read_trap(f.at("trap"), "trap", t);
    init.trap = t;
  }
  if (f.has("fixed")) init.fixed = string_set(f.at("fixed"), "fixed");
  f.has("voltage_range");  // accepted so a cmd_stark model file can seed a fit
  f.finish();
  return init;
}

}  // namespace homlab::config
