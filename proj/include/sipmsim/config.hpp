#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sipmsim/correlation.hpp"
#include "sipmsim/detector.hpp"
#include "sipmsim/extraction.hpp"
#include "sipmsim/fit.hpp"
#include "sipmsim/photon_sources.hpp"
#include "sipmsim/spectrum.hpp"
#include "sipmsim/waveform.hpp"

// Experiment configuration: a flat JSON object with dotted keys
// ("detector1.eta": 0.38). Unknown keys, wrong types, and out-of-range
// values are reported with the offending key so configs fail loudly.

namespace sipmsim {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct FitConfig {
  bool enabled = false;
  bool quantum = false;
  bool tie_eps = false;
  std::size_t restarts = 20;
  NRFModelParams start;                 // start.quantum mirrors `quantum`
  std::vector<std::string> free_names;  // parameters that float
  std::map<std::string, std::pair<double, double>> bounds;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t shots = 10'000;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::string out_dir = "out";

  LightStateSpec state;
  BeamSplitterSpec bs;
  DetectorConfig det1;
  DetectorConfig det2;
  AmplifierConfig amp;
  DigitizerConfig dig;
  ExtractionConfig extraction;

  double trigger_jitter_rms = 0.3;  // ns RMS of the common trigger jitter
  std::vector<double> sweep;        // source means; empty: state.mean_photons
  std::vector<double> gate_sweep;   // extra gate widths for gated spectra
  double coincidence_window = 2.0;  // ns, fast-path peak counting

  AnalyzeOptions analysis;
  CalibrationMode calibration = CalibrationMode::RoundedNonNegative;
  std::size_t vis_resamples = 200;
  std::size_t nrf_resamples = 500;
  bool shot_records = false;  // also write per-shot JSON-lines

  FitConfig fit;

  void validate() const;
};

inline const char* fit_param_name(std::size_t i) {
  static const char* names[] = {"mu",   "eta1", "eta2", "eps1",
                                "eps2", "m1dc", "m2dc", "t"};
  return names[i];
}

inline std::optional<std::size_t> fit_param_index(const std::string& name) {
  for (std::size_t i = 0; i < fitidx::kCount; ++i)
    if (name == fit_param_name(i)) return i;
  return std::nullopt;
}

namespace detail {

inline double cfg_double(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  return v.get<double>();
}

inline std::uint64_t cfg_u64(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError(key, "expected a nonnegative integer");
  return v.get<std::uint64_t>();
}

inline bool cfg_bool(const nlohmann::json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
  return v.get<bool>();
}

inline std::string cfg_string(const nlohmann::json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

inline std::vector<double> cfg_double_array(const nlohmann::json& v,
                                            const std::string& key) {
  if (!v.is_array()) throw ConfigError(key, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(key, "expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  auto wrap = [](const char* field, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(field, e.what());
    }
  };
  if (shots < 1) throw ConfigError("shots", "must be at least 1");
  wrap("state", [&] { state.validate(); });
  wrap("splitter", [&] { bs.validate(); });
  wrap("detector1", [&] { det1.validate(); });
  wrap("detector2", [&] { det2.validate(); });
  wrap("amplifier", [&] { amp.validate(); });
  wrap("digitizer", [&] { dig.validate(); });
  wrap("extraction", [&] { extraction.validate(); });
  if (!(trigger_jitter_rms >= 0.0))
    throw ConfigError("trigger.jitter_rms", "must be >= 0");
  if (!(coincidence_window > 0.0))
    throw ConfigError("fastpath.coincidence_window", "must be > 0");
  auto check_sweep = [](const std::vector<double>& s, const char* field) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!(s[i] > 0.0)) throw ConfigError(field, "values must be positive");
      if (i > 0 && !(s[i] > s[i - 1]))
        throw ConfigError(field, "values must be strictly increasing");
    }
  };
  check_sweep(sweep, "sweep");
  check_sweep(gate_sweep, "gate_sweep");
  if (extraction.polarity != amp.polarity)
    throw ConfigError("extraction", "polarity must follow the amplifier");
  if (fit.enabled) {
    if (fit.restarts < 1) throw ConfigError("fit.restarts", "must be at least 1");
    if (fit.free_names.empty())
      throw ConfigError("fit.free", "need at least one free parameter");
    for (const auto& name : fit.free_names) {
      if (!fit_param_index(name))
        throw ConfigError("fit.free", "unknown parameter: " + name);
      const auto it = fit.bounds.find(name);
      if (it == fit.bounds.end())
        throw ConfigError("fit.bounds." + name, "missing bounds for free parameter");
      if (!(it->second.first < it->second.second))
        throw ConfigError("fit.bounds." + name, "need lo < hi");
    }
    wrap("fit.start", [&] { fit.start.validate(); });
  }
}

inline ExperimentConfig config_from_json(const nlohmann::json& j,
                                         ExperimentConfig cfg = {}) {
  if (!j.is_object()) throw ConfigError("<config>", "expected a JSON object");
  using detail::cfg_bool;
  using detail::cfg_double;
  using detail::cfg_double_array;
  using detail::cfg_string;
  using detail::cfg_u64;

  for (const auto& [key, value] : j.items()) {
    if (key == "seed") cfg.seed = cfg_u64(value, key);
    else if (key == "shots") cfg.shots = cfg_u64(value, key);
    else if (key == "threads") cfg.threads = cfg_u64(value, key);
    else if (key == "out") cfg.out_dir = cfg_string(value, key);
    else if (key == "state.kind") {
      try {
        cfg.state.kind = light_kind_from_name(cfg_string(value, key));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(key, e.what());
      }
    } else if (key == "state.mean_photons") cfg.state.mean_photons = cfg_double(value, key);
    else if (key == "state.modes") cfg.state.modes = cfg_double(value, key);
    else if (key == "splitter.transmittance") cfg.bs.transmittance = cfg_double(value, key);
    else if (key == "detector1.eta") cfg.det1.eta = cfg_double(value, key);
    else if (key == "detector1.n_cells")
      cfg.det1.n_cells = static_cast<std::uint32_t>(cfg_u64(value, key));
    else if (key == "detector1.dark_rate") cfg.det1.dark_rate = cfg_double(value, key);
    else if (key == "detector1.eps_prompt") cfg.det1.eps_prompt = cfg_double(value, key);
    else if (key == "detector1.eps_delayed") cfg.det1.eps_delayed = cfg_double(value, key);
    else if (key == "detector1.ct_delay_tau") cfg.det1.ct_delay_tau = cfg_double(value, key);
    else if (key == "detector1.afterpulse_prob") cfg.det1.afterpulse_prob = cfg_double(value, key);
    else if (key == "detector1.afterpulse_tau") cfg.det1.afterpulse_tau = cfg_double(value, key);
    else if (key == "detector1.record_window") cfg.det1.record_window = cfg_double(value, key);
    else if (key == "detector1.pre_trigger") cfg.det1.pre_trigger = cfg_double(value, key);
    else if (key == "detector2.eta") cfg.det2.eta = cfg_double(value, key);
    else if (key == "detector2.n_cells")
      cfg.det2.n_cells = static_cast<std::uint32_t>(cfg_u64(value, key));
    else if (key == "detector2.dark_rate") cfg.det2.dark_rate = cfg_double(value, key);
    else if (key == "detector2.eps_prompt") cfg.det2.eps_prompt = cfg_double(value, key);
    else if (key == "detector2.eps_delayed") cfg.det2.eps_delayed = cfg_double(value, key);
    else if (key == "detector2.ct_delay_tau") cfg.det2.ct_delay_tau = cfg_double(value, key);
    else if (key == "detector2.afterpulse_prob") cfg.det2.afterpulse_prob = cfg_double(value, key);
    else if (key == "detector2.afterpulse_tau") cfg.det2.afterpulse_tau = cfg_double(value, key);
    else if (key == "detector2.record_window") cfg.det2.record_window = cfg_double(value, key);
    else if (key == "detector2.pre_trigger") cfg.det2.pre_trigger = cfg_double(value, key);
    else if (key == "amplifier.kind") {
      const std::string kind = cfg_string(value, key);
      if (kind == "fast") cfg.amp.kind = AmplifierKind::FastInverting;
      else if (kind == "slow") cfg.amp.kind = AmplifierKind::SlowShaper;
      else throw ConfigError(key, "expected \"fast\" or \"slow\"");
    } else if (key == "amplifier.gain_db") cfg.amp.gain_db = cfg_double(value, key);
    else if (key == "amplifier.shaping_tau") cfg.amp.shaping_tau = cfg_double(value, key);
    else if (key == "amplifier.rail_voltage") cfg.amp.rail_voltage = cfg_double(value, key);
    else if (key == "amplifier.polarity") {
      const std::string pol = cfg_string(value, key);
      if (pol == "inverting") cfg.amp.polarity = Polarity::Inverting;
      else if (pol == "noninverting") cfg.amp.polarity = Polarity::NonInverting;
      else throw ConfigError(key, "expected \"inverting\" or \"noninverting\"");
    } else if (key == "amplifier.saturation") {
      const std::string sat = cfg_string(value, key);
      if (sat == "hard") cfg.amp.saturation = Saturation::Hard;
      else if (sat == "soft") cfg.amp.saturation = Saturation::Soft;
      else throw ConfigError(key, "expected \"hard\" or \"soft\"");
    } else if (key == "digitizer.sample_rate") cfg.dig.sample_rate = cfg_double(value, key);
    else if (key == "digitizer.bits")
      cfg.dig.bits = static_cast<int>(cfg_u64(value, key));
    else if (key == "digitizer.full_scale") cfg.dig.full_scale = cfg_double(value, key);
    else if (key == "digitizer.record_samples")
      cfg.dig.record_samples = static_cast<std::uint32_t>(cfg_u64(value, key));
    else if (key == "digitizer.pre_trigger_fraction")
      cfg.dig.pre_trigger_fraction = cfg_double(value, key);
    else if (key == "digitizer.noise_rms_lsb") cfg.dig.noise_rms_lsb = cfg_double(value, key);
    else if (key == "extraction.method") {
      const std::string m = cfg_string(value, key);
      if (m == "gated_integral") cfg.extraction.method = ExtractionMethod::GatedIntegral;
      else if (m == "peak_value") cfg.extraction.method = ExtractionMethod::PeakValue;
      else if (m == "pre_peak_integral")
        cfg.extraction.method = ExtractionMethod::PrePeakIntegral;
      else
        throw ConfigError(
            key, "expected \"gated_integral\", \"peak_value\", or \"pre_peak_integral\"");
    } else if (key == "extraction.gate_tau") cfg.extraction.gate_tau = cfg_double(value, key);
    else if (key == "extraction.search_window")
      cfg.extraction.search_window = cfg_double(value, key);
    else if (key == "extraction.pre_peak_width")
      cfg.extraction.pre_peak_width = cfg_double(value, key);
    else if (key == "extraction.baseline_start")
      cfg.extraction.baseline_start = cfg_double(value, key);
    else if (key == "extraction.baseline_end")
      cfg.extraction.baseline_end = cfg_double(value, key);
    else if (key == "trigger.jitter_rms") cfg.trigger_jitter_rms = cfg_double(value, key);
    else if (key == "sweep") cfg.sweep = cfg_double_array(value, key);
    else if (key == "gate_sweep") cfg.gate_sweep = cfg_double_array(value, key);
    else if (key == "fastpath.coincidence_window")
      cfg.coincidence_window = cfg_double(value, key);
    else if (key == "analysis.bin_width") cfg.analysis.bin_width = cfg_double(value, key);
    else if (key == "analysis.min_prominence")
      cfg.analysis.min_prominence = cfg_double(value, key);
    else if (key == "analysis.min_significance")
      cfg.analysis.min_significance = cfg_double(value, key);
    else if (key == "analysis.coarse_bins")
      cfg.analysis.coarse_bins = static_cast<std::size_t>(cfg_u64(value, key));
    else if (key == "analysis.bins_per_gamma")
      cfg.analysis.bins_per_gamma = cfg_double(value, key);
    else if (key == "analysis.calibration") {
      const std::string c = cfg_string(value, key);
      if (c == "rounded_nonnegative") cfg.calibration = CalibrationMode::RoundedNonNegative;
      else if (c == "continuous") cfg.calibration = CalibrationMode::Continuous;
      else throw ConfigError(key, "expected \"rounded_nonnegative\" or \"continuous\"");
    } else if (key == "analysis.visibility_resamples")
      cfg.vis_resamples = cfg_u64(value, key);
    else if (key == "nrf.bootstrap_resamples") cfg.nrf_resamples = cfg_u64(value, key);
    else if (key == "outputs.shot_records") cfg.shot_records = cfg_bool(value, key);
    else if (key == "fit.enabled") cfg.fit.enabled = cfg_bool(value, key);
    else if (key == "fit.quantum") cfg.fit.quantum = cfg_bool(value, key);
    else if (key == "fit.tie_eps") cfg.fit.tie_eps = cfg_bool(value, key);
    else if (key == "fit.restarts") cfg.fit.restarts = cfg_u64(value, key);
    else if (key == "fit.free") {
      if (!value.is_array()) throw ConfigError(key, "expected an array of names");
      cfg.fit.free_names.clear();
      for (const auto& e : value) cfg.fit.free_names.push_back(cfg_string(e, key));
    } else if (key.rfind("fit.start.", 0) == 0) {
      const std::string name = key.substr(10);
      const auto idx = fit_param_index(name);
      if (!idx) throw ConfigError(key, "unknown parameter");
      detail::param_set(cfg.fit.start, *idx, cfg_double(value, key));
    } else if (key.rfind("fit.bounds.", 0) == 0) {
      const std::string name = key.substr(11);
      if (!fit_param_index(name)) throw ConfigError(key, "unknown parameter");
      const auto b = cfg_double_array(value, key);
      if (b.size() != 2) throw ConfigError(key, "expected [lo, hi]");
      cfg.fit.bounds[name] = {b[0], b[1]};
    } else {
      throw ConfigError(key, "unknown configuration key");
    }
  }
  cfg.extraction.polarity = cfg.amp.polarity;  // single source of truth
  cfg.fit.start.quantum = cfg.fit.quantum;
  cfg.validate();
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["shots"] = cfg.shots;
  j["threads"] = cfg.threads;
  j["out"] = cfg.out_dir;
  j["state.kind"] = light_kind_name(cfg.state.kind);
  j["state.mean_photons"] = cfg.state.mean_photons;
  j["state.modes"] = cfg.state.modes;
  j["splitter.transmittance"] = cfg.bs.transmittance;
  auto det = [&](const char* prefix, const DetectorConfig& d) {
    const std::string p = prefix;
    j[p + ".eta"] = d.eta;
    j[p + ".n_cells"] = d.n_cells;
    j[p + ".dark_rate"] = d.dark_rate;
    j[p + ".eps_prompt"] = d.eps_prompt;
    j[p + ".eps_delayed"] = d.eps_delayed;
    j[p + ".ct_delay_tau"] = d.ct_delay_tau;
    j[p + ".afterpulse_prob"] = d.afterpulse_prob;
    j[p + ".afterpulse_tau"] = d.afterpulse_tau;
    j[p + ".record_window"] = d.record_window;
    j[p + ".pre_trigger"] = d.pre_trigger;
  };
  det("detector1", cfg.det1);
  det("detector2", cfg.det2);
  j["amplifier.kind"] = cfg.amp.kind == AmplifierKind::FastInverting ? "fast" : "slow";
  j["amplifier.gain_db"] = cfg.amp.gain_db;
  j["amplifier.shaping_tau"] = cfg.amp.shaping_tau;
  j["amplifier.rail_voltage"] = cfg.amp.rail_voltage;
  j["amplifier.polarity"] =
      cfg.amp.polarity == Polarity::Inverting ? "inverting" : "noninverting";
  j["amplifier.saturation"] = cfg.amp.saturation == Saturation::Hard ? "hard" : "soft";
  j["digitizer.sample_rate"] = cfg.dig.sample_rate;
  j["digitizer.bits"] = cfg.dig.bits;
  j["digitizer.full_scale"] = cfg.dig.full_scale;
  j["digitizer.record_samples"] = cfg.dig.record_samples;
  j["digitizer.pre_trigger_fraction"] = cfg.dig.pre_trigger_fraction;
  j["digitizer.noise_rms_lsb"] = cfg.dig.noise_rms_lsb;
  switch (cfg.extraction.method) {
    case ExtractionMethod::GatedIntegral: j["extraction.method"] = "gated_integral"; break;
    case ExtractionMethod::PeakValue: j["extraction.method"] = "peak_value"; break;
    case ExtractionMethod::PrePeakIntegral:
      j["extraction.method"] = "pre_peak_integral";
      break;
  }
  j["extraction.gate_tau"] = cfg.extraction.gate_tau;
  j["extraction.search_window"] = cfg.extraction.search_window;
  j["extraction.pre_peak_width"] = cfg.extraction.pre_peak_width;
  j["extraction.baseline_start"] = cfg.extraction.baseline_start;
  j["extraction.baseline_end"] = cfg.extraction.baseline_end;
  j["trigger.jitter_rms"] = cfg.trigger_jitter_rms;
  j["sweep"] = cfg.sweep;
  j["gate_sweep"] = cfg.gate_sweep;
  j["fastpath.coincidence_window"] = cfg.coincidence_window;
  j["analysis.bin_width"] = cfg.analysis.bin_width;
  j["analysis.min_prominence"] = cfg.analysis.min_prominence;
  j["analysis.min_significance"] = cfg.analysis.min_significance;
  j["analysis.coarse_bins"] = cfg.analysis.coarse_bins;
  j["analysis.bins_per_gamma"] = cfg.analysis.bins_per_gamma;
  j["analysis.calibration"] = cfg.calibration == CalibrationMode::RoundedNonNegative
                                  ? "rounded_nonnegative"
                                  : "continuous";
  j["analysis.visibility_resamples"] = cfg.vis_resamples;
  j["nrf.bootstrap_resamples"] = cfg.nrf_resamples;
  j["outputs.shot_records"] = cfg.shot_records;
  j["fit.enabled"] = cfg.fit.enabled;
  j["fit.quantum"] = cfg.fit.quantum;
  j["fit.tie_eps"] = cfg.fit.tie_eps;
  j["fit.restarts"] = cfg.fit.restarts;
  j["fit.free"] = cfg.fit.free_names;
  for (std::size_t i = 0; i < fitidx::kCount; ++i)
    j[std::string("fit.start.") + fit_param_name(i)] =
        detail::param_get(cfg.fit.start, i);
  for (const auto& [name, b] : cfg.fit.bounds)
    j["fit.bounds." + name] = {b.first, b.second};
  return j;
}

inline ExperimentConfig config_from_file(const std::string& path,
                                         ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<config>", "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<config>", std::string("parse error in ") + path + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

/// Fit spec assembled from the config's fit.* keys.
inline FitSpec fit_spec_from_config(const FitConfig& fc) {
  FitSpec spec;
  spec.start = fc.start;
  spec.start.quantum = fc.quantum;
  spec.tie_eps = fc.tie_eps;
  for (const auto& name : fc.free_names) {
    const auto idx = fit_param_index(name);
    if (!idx) throw ConfigError("fit.free", "unknown parameter: " + name);
    spec.free[*idx] = true;
    const auto it = fc.bounds.find(name);
    if (it != fc.bounds.end()) spec.bounds[*idx] = it->second;
  }
  return spec;
}

/// Detector dark-count and pre-trigger windows aligned to the digitizer
/// record so simulated darks populate exactly the digitized span.
inline void align_detector_windows(ExperimentConfig& cfg) {
  cfg.det1.record_window = cfg.dig.record_ns();
  cfg.det1.pre_trigger = cfg.dig.pre_trigger_ns();
  cfg.det2.record_window = cfg.det1.record_window;
  cfg.det2.pre_trigger = cfg.det1.pre_trigger;
}

/// Named chains mirroring the hardware setups the experiments ran on.
inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig cfg;
  if (name == "psau_drs4") {
    cfg.amp = fast_amplifier(12.0, 0.48);
    cfg.dig = DigitizerConfig{};  // 5 GS/s, 12 bit, 1024 samples
    cfg.extraction.method = ExtractionMethod::GatedIntegral;
    cfg.extraction.gate_tau = 100.0;
  } else if (name == "psau_dt5720") {
    cfg.amp = fast_amplifier(12.0, 0.48);
    cfg.dig.sample_rate = 250.0e6;
    cfg.dig.bits = 12;
    cfg.dig.full_scale = 2.0;
    cfg.dig.record_samples = 96;
    cfg.dig.pre_trigger_fraction = 0.2;
    cfg.extraction.method = ExtractionMethod::GatedIntegral;
    cfg.extraction.gate_tau = 100.0;
  } else if (name == "slow_drs4") {
    cfg.amp = slow_amplifier(41.0, 0.48);
    cfg.dig.record_samples = 2560;
    cfg.dig.pre_trigger_fraction = 0.1;
    cfg.dig.noise_rms_lsb = 1.0;
    cfg.extraction.method = ExtractionMethod::PeakValue;
    cfg.extraction.search_window = 200.0;
    cfg.extraction.baseline_start = -40.0;
    cfg.extraction.baseline_end = -8.0;
  } else {
    throw ConfigError("preset", "unknown preset: " + name +
                                    " (available: psau_drs4, psau_dt5720, slow_drs4)");
  }
  cfg.extraction.polarity = cfg.amp.polarity;
  align_detector_windows(cfg);
  cfg.validate();
  return cfg;
}

}  // namespace sipmsim
