#include "homlab/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "homlab/config.hpp"
#include "homlab/errors.hpp"
#include "homlab/fit_models.hpp"
#include "homlab/montecarlo.hpp"
#include "homlab/parallel.hpp"
#include "homlab/stark.hpp"
#include "homlab/tagproc.hpp"
#include "homlab/units.hpp"

#ifndef HOMLAB_VERSION
#define HOMLAB_VERSION "0.0.0"
#endif

namespace homlab::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ts;
    ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    started_ = ts.str();
  }

  void input(const fs::path& p) { inputs_.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}}); }
  void output(const fs::path& p) { outputs_.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}}); }
  json& extra() { return extra_; }

  void write(const fs::path& out) {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m{{"tool", "homlab"},     {"version", version()},   {"command", command_},
           {"started_utc", started_}, {"wall_clock_s", wall}, {"inputs", inputs_},
           {"outputs", outputs_}};
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    std::ofstream f(manifest_path(out));
    if (!f) throw std::runtime_error("cannot write manifest " + manifest_path(out).string());
    f << m.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::string started_;
  json inputs_ = json::array();
  json outputs_ = json::array();
  json extra_ = json::object();
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError(what, "no such file: " + p.string());
}

std::int64_t whole_ps(const std::string& text, const std::string& option) {
  double ps = 0.0;
  try {
    ps = units::parse_time_ps(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(option, e.what());
  }
  const double r = std::round(ps);
  if (!(r >= 1.0) || std::abs(ps - r) > 1e-6) throw ConfigError(option, "must be a whole number of ps >= 1");
  return static_cast<std::int64_t>(r);
}

// ---- simulate -----------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string duration;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream&) {
  require_file(a.config, "config");
  mc::ExperimentConfig cfg = config::experiment_from_json(config::load_json(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (!a.duration.empty()) {
    try {
      cfg.duration = units::parse_time_ps(a.duration) * 1e-12;
    } catch (const std::invalid_argument& e) {
      throw ConfigError("--duration", e.what());
    }
    cfg.validate();
  }
  Manifest manifest("simulate");
  manifest.input(a.config);
  const mc::SimulationResult result = mc::simulate_experiment(cfg);
  tags::write_tags(result.tags, fs::path(a.out));
  manifest.output(a.out);
  const auto& s = result.stats;
  manifest.extra()["config"] = config::experiment_to_json(cfg);
  manifest.extra()["seed"] = cfg.seed;
  manifest.extra()["duration_s"] = cfg.duration;
  manifest.extra()["stats"] = {{"signal_photons", s.signal_photons},   {"background_photons", s.background_photons},
                               {"dark_counts", s.dark_counts},         {"detected", s.detected},
                               {"interfering_pairs", s.interfering_pairs}, {"triple_overlaps", s.triple_overlaps}};
  manifest.write(a.out);
  out << "wrote " << result.tags.records.size() << " tags over " << cfg.duration << " s to " << a.out << " ("
      << s.interfering_pairs << " interfering pairs)\n";
  return kExitOk;
}

// ---- correlate ----------------------------------------------------------

struct CorrelateArgs {
  std::string tags;
  int a = 1;
  int b = 2;
  std::string bin = "512ps";
  std::string window = "100ns";
  std::string out;
  std::string duration;
};

std::optional<double> duration_from_manifest(const fs::path& tags_path) {
  const fs::path m = manifest_path(tags_path);
  if (!fs::is_regular_file(m)) return std::nullopt;
  try {
    std::ifstream in(m);
    const json j = json::parse(in);
    if (j.contains("duration_s") && j["duration_s"].is_number()) return j["duration_s"].get<double>();
  } catch (const json::exception&) {
  }
  return std::nullopt;
}

int cmd_correlate(const CorrelateArgs& a, std::ostream& out, std::ostream& err) {
  require_file(a.tags, "tags");
  const std::int64_t bin = whole_ps(a.bin, "--bin");
  const std::int64_t window = whole_ps(a.window, "--window");
  if (a.a < 1 || a.b < 1) throw ConfigError("--a/--b", "channels are numbered from 1");
  tags::TagStream stream = tags::read_tags(fs::path(a.tags));
  if (a.a > stream.channel_count || a.b > stream.channel_count) {
    throw ConfigError("--a/--b", "tag file declares " + std::to_string(stream.channel_count) + " channels");
  }
  const auto ca = static_cast<std::uint16_t>(a.a);
  const auto cb = static_cast<std::uint16_t>(a.b);

  std::string duration_source = "estimated";
  if (!a.duration.empty()) {
    try {
      stream.duration_s = units::parse_time_ps(a.duration) * 1e-12;
    } catch (const std::invalid_argument& e) {
      throw ConfigError("--duration", e.what());
    }
    duration_source = "option";
  } else if (auto d = duration_from_manifest(a.tags)) {
    stream.duration_s = *d;
    duration_source = "manifest";
  }

  Manifest manifest("correlate");
  manifest.input(a.tags);
  const auto counts = stream.counts_per_channel();
  tags::G2Curve curve;
  if (counts[ca] == 0 || counts[cb] == 0 || (ca == cb && counts[ca] < 2)) {
    err << "warning: channel " << (counts[ca] == 0 ? a.a : a.b)
        << " has no events; writing an all-zero histogram\n";
    const tags::Histogram h = tags::make_histogram(bin, window);
    for (std::size_t i = 0; i < h.size(); ++i) {
      curve.tau_ps.push_back(h.tau_ps(i));
      curve.g2.push_back(0.0);
      curve.sigma.push_back(0.0);
      curve.counts.push_back(0);
    }
    curve.bin_width_ps = static_cast<double>(bin);
  } else {
    if (duration_source == "estimated") {
      err << "warning: acquisition duration not known; estimated from timestamps\n";
    }
    curve = tags::correlate_and_normalize(stream, ca, cb, bin, window);
  }
  tags::write_g2_csv(curve, fs::path(a.out));
  manifest.output(a.out);
  manifest.extra()["channels"] = {a.a, a.b};
  manifest.extra()["bin_width_ps"] = bin;
  manifest.extra()["window_ps"] = window;
  manifest.extra()["duration_s"] = stream.duration_s > 0.0 ? stream.duration_s : stream.acquisition_duration();
  manifest.extra()["duration_source"] = duration_source;
  manifest.write(a.out);

  std::uint64_t total = 0;
  for (auto c : curve.counts) total += c;
  out << "wrote " << curve.size() << " bins (" << total << " coincidences) to " << a.out << "\n";
  return kExitOk;
}

// ---- fit ----------------------------------------------------------------

struct FitArgs {
  std::string data;
  std::string model;
  std::string init;
  std::string out;
};

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::string format_pm(double v, double s, int precision) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << v << " +/- ";
  if (std::isfinite(s)) {
    o << s;
  } else {
    o << "n/a";
  }
  return o.str();
}

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream&) {
  require_file(a.data, "data");
  const std::string header = first_line(a.data);
  const bool is_g2 = header.rfind("tau_ps,", 0) == 0;
  const bool is_tuning = header.rfind("voltage_V,", 0) == 0;
  if (a.model == "stark" && !is_tuning) {
    throw ConfigError("--model", "stark needs a tuning CSV (voltage_V,detuning_Hz[,sigma_Hz])");
  }
  if ((a.model == "hom" || a.model == "rabi") && !is_g2) {
    throw ConfigError("--model", a.model + " needs a g2 CSV (tau_ps,g2,sigma,counts)");
  }
  json init = json::object();
  Manifest manifest("fit");
  manifest.input(a.data);
  if (!a.init.empty()) {
    require_file(a.init, "init");
    init = config::load_json(a.init);
    manifest.input(a.init);
  }

  fit::FitResult result;
  std::string summary;
  if (a.model == "hom") {
    const auto curve = tags::read_g2_csv(fs::path(a.data));
    result = fit::fit_g2_hom(curve, config::hom_init_from_json(init));
    summary = "V_HOM(0) = " + format_pm(result.derived.at("v_hom"), result.derived.at("v_hom_sigma"), 3);
    if (result.derived.count("v_hom_bin0")) {
      summary += ", zero bin " + format_pm(result.derived.at("v_hom_bin0"), result.derived.at("v_hom_bin0_sigma"), 3) +
                 " (" + std::to_string(static_cast<long long>(result.derived.at("bin_width_ps"))) + " ps bin)";
    }
  } else if (a.model == "rabi") {
    const auto curve = tags::read_g2_csv(fs::path(a.data));
    result = fit::fit_g2_single(curve, config::rabi_init_from_json(init));
    summary = "g2(0) = " + format_pm(result.derived.at("g2_zero"), result.derived.at("g2_zero_sigma"), 3);
  } else {
    const auto curve = stark::read_tuning_csv(fs::path(a.data));
    result = fit::fit_stark(curve, config::stark_init_from_json(init));
    if (result.derived.count("kink_voltage")) {
      summary = "kink voltage = " +
                format_pm(result.derived.at("kink_voltage"), result.derived.at("kink_voltage_sigma"), 2) + " V";
    } else {
      summary = "no trap fitted";
    }
    std::ostringstream range;
    range << std::setprecision(4) << result.derived.at("tuning_range_hz") * 1e-9;
    summary += ", tuning range " + range.str() + " GHz";
  }

  json j = fit::to_json(result);
  j["model"] = a.model;
  {
    std::ofstream f(a.out);
    if (!f) throw std::runtime_error("cannot open " + a.out + " for writing");
    f << j.dump(2) << "\n";
  }
  manifest.output(a.out);
  manifest.extra()["model"] = a.model;
  manifest.extra()["init"] = init;
  manifest.write(a.out);

  std::ostringstream chi;
  chi << std::setprecision(3) << result.chi2_reduced;
  out << summary << " [" << fit::to_string(result.status) << ", chi2_red " << chi.str();
  if (!result.unidentifiable.empty()) {
    out << ", unidentifiable:";
    for (const auto& n : result.unidentifiable) out << " " << n;
  }
  out << "]\n";
  return kExitOk;
}

// ---- stark --------------------------------------------------------------

struct StarkArgs {
  std::string model;
  std::string target;
  std::optional<double> vmin;
  std::optional<double> vmax;
};

int cmd_stark(const StarkArgs& a, std::ostream& out, std::ostream& err) {
  require_file(a.model, "--model");
  config::StarkSetup setup = config::stark_from_json(config::load_json(a.model));
  double target = 0.0;
  try {
    target = units::parse_frequency_hz(a.target);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("--target", e.what());
  }
  if (a.vmin) setup.voltage_range.first = *a.vmin;
  if (a.vmax) setup.voltage_range.second = *a.vmax;
  const auto sol = stark::voltage_for_detuning(setup.model, setup.trap, target, setup.voltage_range);
  if (!sol.unique) err << "warning: several voltages reach this detuning; reporting the lowest\n";
  out << std::setprecision(10) << sol.voltage << "\n";
  return kExitOk;
}

void apply_threads(const std::optional<int>& threads) {
  if (threads) {
    set_thread_count(*threads);
    return;
  }
  if (const char* env = std::getenv("HOMLAB_THREADS")) {
    try {
      set_thread_count(std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError("HOMLAB_THREADS", "expected an integer");
    }
  }
}

}  // namespace

const char* version() { return HOMLAB_VERSION; }

fs::path manifest_path(const fs::path& output) {
  fs::path p = output;
  p += ".manifest.json";
  return p;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-photon interference laboratory: simulate, correlate, fit, stark", "homlab"};
  app.set_version_flag("--version", HOMLAB_VERSION);
  app.require_subcommand(1);
  std::optional<int> threads;
  app.add_option("--threads", threads, "worker threads (default: HOMLAB_THREADS or all cores)");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Monte Carlo experiment -> tag file");
  s->add_option("config", sim.config, "experiment JSON")->required();
  s->add_option("--out", sim.out, "tag file")->required();
  s->add_option("--seed", sim.seed, "override the config seed");
  s->add_option("--duration", sim.duration, "override the acquisition time, e.g. 10s");

  CorrelateArgs cor;
  auto* c = app.add_subcommand("correlate", "tag file -> normalized g2 CSV");
  c->add_option("tags", cor.tags, "tag file")->required();
  c->add_option("--a", cor.a, "start channel")->capture_default_str();
  c->add_option("--b", cor.b, "stop channel")->capture_default_str();
  c->add_option("--bin", cor.bin, "bin width")->capture_default_str();
  c->add_option("--window", cor.window, "half-width of the delay window")->capture_default_str();
  c->add_option("--duration", cor.duration, "acquisition time (default: from the tag manifest)");
  c->add_option("--out", cor.out, "g2 CSV")->required();

  FitArgs fa;
  auto* f = app.add_subcommand("fit", "fit a g2 or tuning curve");
  f->add_option("data", fa.data, "g2 CSV or tuning CSV")->required();
  f->add_option("--model", fa.model, "hom | rabi | stark")
      ->required()
      ->check(CLI::IsMember({"hom", "rabi", "stark"}));
  f->add_option("--init", fa.init, "initial values / options JSON");
  f->add_option("--out", fa.out, "fit result JSON")->required();

  StarkArgs st;
  auto* k = app.add_subcommand("stark", "voltage that produces a target detuning");
  k->add_option("--model", st.model, "Stark model JSON")->required();
  k->add_option("--target", st.target, "target detuning, e.g. 800MHz")->required();
  k->add_option("--vmin", st.vmin, "lower end of the search bracket [V]");
  k->add_option("--vmax", st.vmax, "upper end of the search bracket [V]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    apply_threads(threads);
    if (*s) return cmd_simulate(sim, out, err);
    if (*c) return cmd_correlate(cor, out, err);
    if (*f) return cmd_fit(fa, out, err);
    return cmd_stark(st, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const DomainError& e) {
    err << "domain error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const EvaluationError& e) {
    err << "evaluation error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace homlab::cli
