#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "sipmsim/config.hpp"
#include "sipmsim/io.hpp"
#include "sipmsim/stats.hpp"

// Experiment runners: wire photon sources, detectors, the analog chain, and
// the analyses into complete runs that leave CSV/JSON artifacts plus a
// manifest on disk. Every shot derives its random streams from (seed, shot
// index), so results are bit-identical for any worker-thread count.

namespace sipmsim {

enum class RunStatus : int {
  Ok = 0,
  ConfigFailure = 2,
  Degenerate = 3,
  FitFailed = 4,
};

namespace detail {

inline constexpr double kOversampleRateHz = 20.0e9;

/// Deterministic pool: fn(shot_index, worker_id); work order is irrelevant
/// because every shot owns its output slot and random streams.
template <class Fn>
void parallel_shots(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads == 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    threads = hw > 0 ? hw : 1;
  }
  threads = std::min<std::size_t>(threads, std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  constexpr std::size_t kChunk = 64;
  auto worker = [&](std::size_t worker_id) {
    for (;;) {
      const std::size_t begin = next.fetch_add(kChunk);
      if (begin >= n || first_error) return;
      const std::size_t end = std::min(n, begin + kChunk);
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i, worker_id);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(worker, w);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// Analog chain shared by every shot: synthesize at the oversample rate,
/// amplify, digitize. The synthesis kernel is built once per run.
class ChainRunner {
 public:
  explicit ChainRunner(const ExperimentConfig& cfg)
      : cfg_(&cfg),
        synth_(CellPulseParams{}, kOversampleRateHz,
               -cfg.dig.pre_trigger_ns() - 2.0 * cfg.dig.sample_period_ns(),
               cfg.dig.record_ns() - cfg.dig.pre_trigger_ns() +
                   2.0 * cfg.dig.sample_period_ns()) {}

  WaveformTrace run_arm(AvalancheEventList events, double jitter, RandomEngine& noise,
                        std::vector<double>& scratch) const {
    for (auto& e : events) e.time += jitter;
    scratch.assign(synth_.size(), 0.0);
    synth_.add_events(events, scratch);
    AnalogWaveform w{synth_.t0(), synth_.dt(), std::move(scratch)};
    const AnalogWaveform amped = amplify(w, cfg_->amp);
    scratch = std::move(w.v);
    return digitize(amped, cfg_->dig, noise);
  }

 private:
  const ExperimentConfig* cfg_;
  WaveformSynthesizer synth_;
};

inline double draw_jitter(const ExperimentConfig& cfg, RandomEngine& g) {
  if (!(cfg.trigger_jitter_rms > 0.0)) return 0.0;
  std::normal_distribution<double> d(0.0, cfg.trigger_jitter_rms);
  return d(g);
}

inline std::vector<double> sweep_means(const ExperimentConfig& cfg) {
  if (!cfg.sweep.empty()) return cfg.sweep;
  return {cfg.state.mean_photons};
}

inline std::string run_tag(std::size_t idx) {
  std::string s = std::to_string(idx);
  while (s.size() < 2) s.insert(s.begin(), '0');
  return s;
}

inline nlohmann::json fit_report_json(const FitResult& res, const FitSpec& spec) {
  nlohmann::json params;
  for (std::size_t i = 0; i < fitidx::kCount; ++i) {
    const bool tied = spec.tie_eps && i == fitidx::kEps2;
    const bool is_free = spec.free[i] && !tied;
    nlohmann::json entry{{"value", param_get(res.params, i)},
                         {"fixed", !is_free && !tied}};
    if (tied) entry["tied_to"] = fit_param_name(fitidx::kEps1);
    if (is_free) entry["bounds"] = {spec.bounds[i].first, spec.bounds[i].second};
    params[fit_param_name(i)] = entry;
  }
  return nlohmann::json{
      {"converged", res.converged},
      {"chi2", res.chi2},
      {"reduced_chi2", res.reduced_chi2},
      {"n_points", res.n_points},
      {"n_free", res.n_free},
      {"quantum", res.params.quantum},
      {"tie_eps", spec.tie_eps},
      {"restarts", {{"total", res.restarts_run}, {"converged", res.restarts_converged}}},
      {"parameters", params},
  };
}

}  // namespace detail

struct SpectrumRunOutput {
  double source_mean = 0.0;
  double gate = std::numeric_limits<double>::quiet_NaN();  // NaN: not gated
  PulseHeightSpectrum phs;
  VisibilityEstimate vis;
  bool degenerate = false;
  std::optional<std::size_t> knee_index;  // 1-based spacing index
  std::optional<double> knee_k;           // calibrated peak number at the knee
  std::string csv_path;
  std::string meta_path;
};

struct PHSOutput {
  RunStatus status = RunStatus::Ok;
  std::vector<SpectrumRunOutput> runs;
  std::string manifest_path;
};

/// Pulse-height-spectrum experiment: one spectrum per (sweep mean, gate).
inline PHSOutput run_phs(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const detail::ChainRunner chain(cfg);
  const std::vector<double> means = detail::sweep_means(cfg);

  std::vector<ExtractionConfig> exts{cfg.extraction};
  if (cfg.extraction.method == ExtractionMethod::GatedIntegral && !cfg.gate_sweep.empty()) {
    exts.clear();
    for (double tau : cfg.gate_sweep) {
      ExtractionConfig e = cfg.extraction;
      e.gate_tau = tau;
      exts.push_back(e);
    }
  }

  const std::size_t workers =
      cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;

  RunManifest manifest;
  manifest.config_echo = config_to_json(cfg);
  manifest.timestamp = utc_timestamp();

  PHSOutput out;
  std::size_t run_idx = 0;
  for (std::size_t mi = 0; mi < means.size(); ++mi) {
    LightStateSpec st = cfg.state;
    st.mean_photons = means[mi];
    std::vector<std::vector<double>> xs(exts.size(),
                                        std::vector<double>(cfg.shots, 0.0));
    std::vector<std::vector<double>> scratch(workers);
    detail::parallel_shots(cfg.shots, workers, [&](std::size_t i, std::size_t w) {
      const std::size_t gi = mi * cfg.shots + i;
      auto g_shot = make_stream(cfg.seed, stream::kShot, gi);
      const std::uint32_t n = sample_photons(st, g_shot);
      const auto events = detect(n, cfg.det1, g_shot);
      auto g_noise = make_stream(cfg.seed, stream::kNoise, gi);
      const double jitter = detail::draw_jitter(cfg, g_noise);
      const WaveformTrace tr = chain.run_arm(events, jitter, g_noise, scratch[w]);
      for (std::size_t e = 0; e < exts.size(); ++e) xs[e][i] = extract(tr, exts[e]);
    });

    for (std::size_t e = 0; e < exts.size(); ++e) {
      SpectrumRunOutput run;
      run.source_mean = means[mi];
      if (cfg.extraction.method == ExtractionMethod::GatedIntegral)
        run.gate = exts[e].gate_tau;
      auto bg = make_stream(cfg.seed, stream::kBootstrap, run_idx);
      run.vis = visibility_bootstrap(xs[e], cfg.analysis, cfg.vis_resamples, bg);
      run.phs = analyze_spectrum(xs[e], cfg.analysis);
      run.degenerate = run.phs.degenerate() || !run.vis.value;
      if (run.phs.gamma_series.size() >= 3) {
        if (const auto ki = linearity_check(run.phs.gamma_series)) {
          run.knee_index = *ki;
          // gain taken from the spacings before the knee so the compressed
          // tail cannot drag the calibration down
          std::vector<double> early(run.phs.gamma_series.begin(),
                                    run.phs.gamma_series.begin() +
                                        static_cast<std::ptrdiff_t>(*ki - 1));
          const double g_early = median_of(early);
          const double first = run.phs.peaks.front().position;
          const double zero =
              first - g_early * static_cast<double>(std::llround(first / g_early));
          run.knee_k = static_cast<double>(
              std::llround((run.phs.peaks[*ki].position - zero) / g_early));
        }
      }

      const std::string tag = detail::run_tag(run_idx);
      run.csv_path = out_dir + "/phs_" + tag + ".csv";
      run.meta_path = out_dir + "/phs_" + tag + ".meta.json";
      manifest.checksums["phs_" + tag + ".csv"] = write_spectrum_csv(run.csv_path, run.phs);
      nlohmann::json meta = spectrum_metadata_json(run.phs, run.vis);
      meta["source_mean"] = run.source_mean;
      if (!std::isnan(run.gate)) meta["gate_tau"] = run.gate;
      meta["degenerate"] = run.degenerate;
      if (run.knee_index) {
        meta["knee_index"] = *run.knee_index;
        meta["knee_k"] = *run.knee_k;
      } else {
        meta["knee_index"] = nullptr;
        meta["knee_k"] = nullptr;
      }
      manifest.checksums["phs_" + tag + ".meta.json"] = write_json(run.meta_path, meta);
      if (run.degenerate) out.status = RunStatus::Degenerate;
      out.runs.push_back(std::move(run));
      ++run_idx;
    }
  }
  out.manifest_path = out_dir + "/manifest.json";
  write_manifest(out.manifest_path, manifest);
  return out;
}

struct NRFOutput {
  RunStatus status = RunStatus::Ok;
  NRFCurve curve;
  std::optional<FitResult> fit;
  std::string csv_path;
  std::string fit_path;
  std::string manifest_path;
};

namespace detail {

inline NRFOutput finish_nrf(const ExperimentConfig& cfg, const std::string& out_dir,
                            NRFOutput out, RunManifest manifest) {
  out.csv_path = out_dir + "/nrf.csv";
  manifest.checksums["nrf.csv"] = write_nrf_csv(out.csv_path, out.curve);
  if (cfg.fit.enabled && out.status == RunStatus::Ok) {
    const FitSpec spec = fit_spec_from_config(cfg.fit);
    FitOptions opts;
    opts.restarts = cfg.fit.restarts;
    opts.seed = cfg.seed;
    const FitResult res = fit_model(out.curve, spec, opts);
    out.fit = res;
    out.fit_path = out_dir + "/fit_report.json";
    manifest.checksums["fit_report.json"] =
        write_json(out.fit_path, fit_report_json(res, spec));
    if (!res.converged) out.status = RunStatus::FitFailed;
  }
  out.manifest_path = out_dir + "/manifest.json";
  write_manifest(out.manifest_path, manifest);
  return out;
}

}  // namespace detail

/// Two-arm correlation experiment through the full analog chain. Each arm is
/// calibrated to photon numbers from its own spectrum before R is formed.
inline NRFOutput run_nrf(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const detail::ChainRunner chain(cfg);
  const std::vector<double> means = detail::sweep_means(cfg);
  const std::size_t workers =
      cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;

  RunManifest manifest;
  manifest.config_echo = config_to_json(cfg);
  manifest.timestamp = utc_timestamp();

  NRFOutput out;
  for (std::size_t pi = 0; pi < means.size(); ++pi) {
    LightStateSpec st = cfg.state;
    st.mean_photons = means[pi];
    std::vector<double> x1(cfg.shots), x2(cfg.shots);
    std::vector<std::vector<double>> scratch(workers);
    detail::parallel_shots(cfg.shots, workers, [&](std::size_t i, std::size_t w) {
      const std::size_t gi = pi * cfg.shots + i;
      auto g_shot = make_stream(cfg.seed, stream::kShot, gi);
      ShotPhotons np;
      if (st.kind == LightKind::TwinBeam) {
        np = sample_twin_beam(st, g_shot);
      } else {
        np = split_at_bs(sample_photons(st, g_shot), cfg.bs, g_shot);
      }
      const auto ev1 = detect(np.n1, cfg.det1, g_shot);
      const auto ev2 = detect(np.n2, cfg.det2, g_shot);
      auto g_noise = make_stream(cfg.seed, stream::kNoise, gi);
      const double jitter = detail::draw_jitter(cfg, g_noise);  // common trigger
      x1[i] = extract(chain.run_arm(ev1, jitter, g_noise, scratch[w]), cfg.extraction);
      x2[i] = extract(chain.run_arm(ev2, jitter, g_noise, scratch[w]), cfg.extraction);
    });

    const PulseHeightSpectrum phs1 = analyze_spectrum(x1, cfg.analysis);
    const PulseHeightSpectrum phs2 = analyze_spectrum(x2, cfg.analysis);
    if (phs1.degenerate() || phs2.degenerate()) {
      out.status = RunStatus::Degenerate;
      break;
    }
    const std::vector<double> k1 =
        calibrate(x1, phs1.gamma_bar, zero_position(phs1), cfg.calibration);
    const std::vector<double> k2 =
        calibrate(x2, phs2.gamma_bar, zero_position(phs2), cfg.calibration);
    if (cfg.shot_records) {
      std::vector<ShotRecord> records(cfg.shots);
      for (std::size_t i = 0; i < cfg.shots; ++i)
        records[i] = {x1[i], x2[i], k1[i], k2[i]};
      const std::string name = "shots_" + detail::run_tag(pi) + ".jsonl";
      manifest.checksums[name] = write_shot_records_jsonl(out_dir + "/" + name, records);
    }
    auto bg = make_stream(cfg.seed, stream::kBootstrap, pi);
    out.curve.points.push_back(noise_reduction(k1, k2, bg, cfg.nrf_resamples));
  }
  return detail::finish_nrf(cfg, out_dir, std::move(out), std::move(manifest));
}

/// Count-level correlation experiment; statistically the same contract as
/// run_nrf but orders of magnitude faster.
inline NRFOutput run_fastpath(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  FastPathConfig fp;
  fp.state = cfg.state;
  fp.bs = cfg.bs;
  fp.det1 = cfg.det1;
  fp.det2 = cfg.det2;
  fp.mode = cfg.extraction.method == ExtractionMethod::GatedIntegral
                ? CountingMode::GateCount
                : CountingMode::PeakCount;
  fp.gate = cfg.extraction.gate_tau;
  fp.coincidence_window = cfg.coincidence_window;
  fp.shots_per_point = cfg.shots;
  fp.bootstrap_resamples = cfg.nrf_resamples;
  fp.seed = cfg.seed;

  RunManifest manifest;
  manifest.config_echo = config_to_json(cfg);
  manifest.timestamp = utc_timestamp();

  NRFOutput out;
  out.curve = simulate_R_curve(fp, detail::sweep_means(cfg));
  return detail::finish_nrf(cfg, out_dir, std::move(out), std::move(manifest));
}

struct DumpOutput {
  RunStatus status = RunStatus::Ok;
  std::string dump_path;
  std::string manifest_path;
};

/// Digitized single-arm waveforms in the binary dump format.
inline DumpOutput dump_waveforms(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const detail::ChainRunner chain(cfg);

  RunManifest manifest;
  manifest.config_echo = config_to_json(cfg);
  manifest.timestamp = utc_timestamp();

  DumpOutput out;
  out.dump_path = out_dir + "/waveforms.bin";
  ChecksummedFile f(out.dump_path);
  std::vector<double> scratch;
  for (std::size_t i = 0; i < cfg.shots; ++i) {
    auto g_shot = make_stream(cfg.seed, stream::kShot, i);
    const std::uint32_t n = sample_photons(cfg.state, g_shot);
    const auto events = detect(n, cfg.det1, g_shot);
    auto g_noise = make_stream(cfg.seed, stream::kNoise, i);
    const double jitter = detail::draw_jitter(cfg, g_noise);
    append_waveform_record(f, i, chain.run_arm(events, jitter, g_noise, scratch));
  }
  manifest.checksums["waveforms.bin"] = f.close();
  out.manifest_path = out_dir + "/manifest.json";
  write_manifest(out.manifest_path, manifest);
  return out;
}

}  // namespace sipmsim
