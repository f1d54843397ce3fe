#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sipmsim/config.hpp"
#include "sipmsim/harness.hpp"
#include "sipmsim/io.hpp"

using namespace sipmsim;
using nlohmann::json;

namespace {

std::string test_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sipmsim_harness_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json load_json(const std::string& path) { return json::parse(slurp(path)); }

// Small full-chain config that still resolves photon-number peaks: coherent
// light, fast inverting amplifier, quiet detector.
ExperimentConfig small_chain_config() {
  ExperimentConfig cfg = preset_config("psau_drs4");
  cfg.state.kind = LightKind::Coherent;
  cfg.state.mean_photons = 4.0;
  cfg.det1.dark_rate = 0.0;
  cfg.det2.dark_rate = 0.0;
  cfg.det1.eps_delayed = 0.0;
  cfg.det2.eps_delayed = 0.0;
  cfg.shots = 500;
  cfg.seed = 99;
  cfg.vis_resamples = 50;
  cfg.nrf_resamples = 100;
  align_detector_windows(cfg);
  return cfg;
}

}  // namespace

TEST_CASE("identical config and seed give byte-identical artifacts") {
  ExperimentConfig cfg = small_chain_config();
  cfg.state.kind = LightKind::TwinBeam;
  cfg.state.mean_photons = 0.0;
  cfg.sweep = {3.0, 6.0};
  cfg.shots = 4000;
  cfg.det1.eta = 0.2;
  cfg.det2.eta = 0.2;

  const std::string d1 = test_dir("det_a");
  const std::string d2 = test_dir("det_b");
  const auto out1 = run_fastpath(cfg, d1);
  const auto out2 = run_fastpath(cfg, d2);
  REQUIRE(out1.status == RunStatus::Ok);
  CHECK(slurp(out1.csv_path) == slurp(out2.csv_path));

  // the manifest's config echo reproduces the run
  const json manifest = load_json(out1.manifest_path);
  const ExperimentConfig replay = config_from_json(manifest.at("config"));
  const std::string d3 = test_dir("det_c");
  const auto out3 = run_fastpath(replay, d3);
  CHECK(slurp(out3.csv_path) == slurp(out1.csv_path));
}

TEST_CASE("outputs are independent of the worker thread count") {
  ExperimentConfig cfg = small_chain_config();

  cfg.threads = 1;
  const auto serial = run_phs(cfg, test_dir("threads_1"));
  cfg.threads = 3;
  const auto threaded = run_phs(cfg, test_dir("threads_3"));
  REQUIRE(serial.runs.size() == 1);
  REQUIRE(threaded.runs.size() == 1);
  CHECK(slurp(serial.runs[0].csv_path) == slurp(threaded.runs[0].csv_path));
  CHECK(slurp(serial.runs[0].meta_path) == slurp(threaded.runs[0].meta_path));

  cfg.threads = 1;
  const auto nrf_serial = run_nrf(cfg, test_dir("threads_nrf_1"));
  cfg.threads = 2;
  const auto nrf_threaded = run_nrf(cfg, test_dir("threads_nrf_2"));
  REQUIRE(nrf_serial.status == RunStatus::Ok);
  CHECK(slurp(nrf_serial.csv_path) == slurp(nrf_threaded.csv_path));
}

TEST_CASE("config echo survives a parse round-trip") {
  json overrides;
  overrides["state.kind"] = "multithermal";
  overrides["state.mean_photons"] = 7.5;
  overrides["state.modes"] = 2.0;
  overrides["splitter.transmittance"] = 0.45;
  overrides["detector1.eta"] = 0.31;
  overrides["detector2.dark_rate"] = 2.7e5;
  overrides["amplifier.gain_db"] = 24.0;
  overrides["digitizer.noise_rms_lsb"] = 0.8;
  overrides["extraction.gate_tau"] = 48.0;
  overrides["trigger.jitter_rms"] = 0.0;
  overrides["sweep"] = {2.0, 5.0, 9.0};
  overrides["gate_sweep"] = {48.0, 110.0};
  overrides["outputs.shot_records"] = true;
  overrides["fit.enabled"] = true;
  overrides["fit.quantum"] = true;
  overrides["fit.tie_eps"] = true;
  overrides["fit.free"] = {"eps1", "t"};
  overrides["fit.bounds.eps1"] = {0.0, 0.2};
  overrides["fit.bounds.t"] = {0.5, 1.0};
  overrides["fit.start.eps1"] = 0.03;
  overrides["fit.start.t"] = 0.95;
  overrides["fit.start.mu"] = 9000.0;
  overrides["fit.start.eta1"] = 0.2;
  overrides["fit.start.eta2"] = 0.2;

  const ExperimentConfig cfg = config_from_json(overrides, preset_config("psau_dt5720"));
  const json echo = config_to_json(cfg);
  const ExperimentConfig reparsed = config_from_json(echo);
  CHECK(config_to_json(reparsed) == echo);

  CHECK(cfg.state.kind == LightKind::MultiThermal);
  CHECK(cfg.gate_sweep == std::vector<double>{48.0, 110.0});
  CHECK(cfg.fit.start.quantum);
  CHECK(cfg.extraction.polarity == cfg.amp.polarity);
}

TEST_CASE("config errors name the offending field") {
  auto field_of = [](const json& j) {
    try {
      config_from_json(j);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<no error>");
  };

  CHECK(field_of({{"bogus", 1}}) == "bogus");
  CHECK(field_of({{"shots", "many"}}) == "shots");
  CHECK(field_of({{"shots", 0}}) == "shots");
  CHECK(field_of({{"state.kind", "squeezed"}}) == "state.kind");
  CHECK(field_of({{"sweep", {3.0, 2.0}}}) == "sweep");
  CHECK(field_of({{"sweep", {0.0}}}) == "sweep");
  CHECK(field_of({{"detector1.eta", 1.5}}) == "detector1");
  CHECK(field_of({{"fit.start.gamma", 1.0}}) == "fit.start.gamma");
  CHECK(field_of({{"fit.bounds.t", json::array({0.9})}}) == "fit.bounds.t");
  CHECK(field_of({{"fit.enabled", true}, {"fit.free", json::array({"eps1"})}}) ==
        "fit.bounds.eps1");

  CHECK_THROWS_AS(preset_config("psau_drs5"), ConfigError);
}

TEST_CASE("presets build valid aligned configurations") {
  for (const std::string name : {"psau_drs4", "psau_dt5720", "slow_drs4"}) {
    const ExperimentConfig cfg = preset_config(name);
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.det1.record_window == cfg.dig.record_ns());
    CHECK(cfg.det1.pre_trigger == cfg.dig.pre_trigger_ns());
    CHECK(cfg.det2.record_window == cfg.det1.record_window);
    CHECK(cfg.extraction.polarity == cfg.amp.polarity);
  }
}

TEST_CASE("a dark spectrum is reported as degenerate") {
  ExperimentConfig cfg = small_chain_config();
  cfg.state.mean_photons = 0.0;
  cfg.shots = 400;

  const auto out = run_phs(cfg, test_dir("degenerate"));
  REQUIRE(out.status == RunStatus::Degenerate);
  REQUIRE(out.runs.size() == 1);
  CHECK(out.runs[0].degenerate);
  CHECK_FALSE(out.runs[0].vis.value);

  const json meta = load_json(out.runs[0].meta_path);
  CHECK(meta.at("degenerate").get<bool>());
  CHECK(meta.at("visibility").is_null());
}

TEST_CASE("spectrum metadata carries peaks, series, and knee fields") {
  ExperimentConfig cfg = small_chain_config();
  const auto out = run_phs(cfg, test_dir("meta"));
  REQUIRE(out.status == RunStatus::Ok);

  const json meta = load_json(out.runs[0].meta_path);
  CHECK(meta.at("peaks").size() >= 3);
  CHECK(meta.at("peaks")[0].contains("position"));
  CHECK(meta.at("gamma_series").size() == meta.at("peaks").size() - 1);
  CHECK(meta.at("gamma_bar").get<double>() > 0.0);
  CHECK(meta.at("visibility").get<double>() > 0.0);
  CHECK(meta.at("source_mean").get<double>() == 4.0);
  CHECK(meta.at("gate_tau").get<double>() == 100.0);
  CHECK(meta.contains("knee_index"));

  // csv parses back to the same number of bins with nonnegative counts
  const std::string csv = slurp(out.runs[0].csv_path);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "bin_center,count");
  std::size_t rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == out.runs[0].phs.counts.size());
}

TEST_CASE("manifest checksums match the artifacts on disk") {
  ExperimentConfig cfg = small_chain_config();
  cfg.gate_sweep = {48.0, 100.0};
  const std::string dir = test_dir("checksums");
  const auto out = run_phs(cfg, dir);
  REQUIRE(out.runs.size() == 2);

  const json manifest = load_json(out.manifest_path);
  CHECK(manifest.at("version").get<std::string>() == kVersion);
  CHECK_FALSE(manifest.at("timestamp").get<std::string>().empty());
  const auto& sums = manifest.at("checksums");
  CHECK(sums.size() == 4);  // two csv + two meta
  for (const auto& [name, hex] : sums.items()) {
    const std::string bytes = slurp(dir + "/" + name);
    CHECK(checksum_hex(fnv1a_64(bytes.data(), bytes.size())) == hex.get<std::string>());
  }
}

TEST_CASE("waveform dumps parse back record for record") {
  ExperimentConfig cfg = small_chain_config();
  cfg.shots = 5;
  const std::string dir = test_dir("dump");
  const auto out = dump_waveforms(cfg, dir);

  const auto records = read_waveform_dump(out.dump_path);
  REQUIRE(records.size() == 5);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].shot == i);
    CHECK(records[i].sample_period == cfg.dig.sample_period_ns());
    CHECK(records[i].samples.size() == cfg.dig.record_samples);
    for (float v : records[i].samples) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) <= cfg.dig.full_scale / 2 + cfg.dig.quantization_step());
    }
  }

  const json manifest = load_json(out.manifest_path);
  const std::string bytes = slurp(out.dump_path);
  CHECK(manifest.at("checksums").at("waveforms.bin").get<std::string>() ==
        checksum_hex(fnv1a_64(bytes.data(), bytes.size())));
}

TEST_CASE("per-shot records come out as parseable JSON lines") {
  ExperimentConfig cfg = small_chain_config();
  cfg.shots = 600;
  cfg.shot_records = true;
  const std::string dir = test_dir("jsonl");
  const auto out = run_nrf(cfg, dir);
  REQUIRE(out.status == RunStatus::Ok);

  std::ifstream in(dir + "/shots_00.jsonl");
  REQUIRE(in.good());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const json rec = json::parse(line);
    CHECK(rec.at("shot").get<std::size_t>() == n);
    CHECK(std::isfinite(rec.at("x_out1").get<double>()));
    CHECK(std::isfinite(rec.at("x_out2").get<double>()));
    const double k1 = rec.at("k1").get<double>();
    CHECK(k1 >= 0.0);
    CHECK(k1 == std::floor(k1));  // calibrated counts are rounded
    ++n;
  }
  CHECK(n == 600);
}

TEST_CASE("count path and waveform path agree on the correlation statistic") {
  ExperimentConfig cfg = small_chain_config();
  cfg.state.kind = LightKind::Thermal;
  cfg.state.mean_photons = 8.0;
  cfg.det1.eta = 0.4;
  cfg.det2.eta = 0.4;
  cfg.det1.eps_prompt = 0.02;
  cfg.det2.eps_prompt = 0.02;
  cfg.trigger_jitter_rms = 0.0;
  cfg.shots = 10000;
  cfg.seed = 61;

  const auto slow = run_nrf(cfg, test_dir("xpath_wave"));
  const auto fast = run_fastpath(cfg, test_dir("xpath_count"));
  REQUIRE(slow.status == RunStatus::Ok);
  REQUIRE(fast.status == RunStatus::Ok);
  REQUIRE(slow.curve.points.size() == 1);
  REQUIRE(fast.curve.points.size() == 1);

  const auto& a = slow.curve.points[0];
  const auto& b = fast.curve.points[0];
  const double sep = std::hypot(a.sigma_R, b.sigma_R);
  INFO("waveform R " << a.R << " +- " << a.sigma_R << ", count R " << b.R << " +- "
                     << b.sigma_R);
  CHECK(std::abs(a.R - b.R) <= 4.0 * sep);
  CHECK(std::abs(a.mean_k - b.mean_k) < 0.1);

  // both sit near the crosstalk-driven classical level
  const double expected = 1.0 + 2.0 * 0.02 / 1.02;
  CHECK(std::abs(a.R - expected) <= 5.0 * a.sigma_R);
}

TEST_CASE("an enabled fit lands in the report with every parameter's role") {
  ExperimentConfig cfg = small_chain_config();
  cfg.state.kind = LightKind::Thermal;
  cfg.state.mean_photons = 0.0;
  cfg.sweep = {4.0, 8.0, 12.0};
  cfg.det1.eta = 0.3;
  cfg.det2.eta = 0.3;
  cfg.det1.eps_prompt = 0.03;
  cfg.det2.eps_prompt = 0.03;
  cfg.shots = 20000;
  cfg.fit.enabled = true;
  cfg.fit.quantum = false;
  cfg.fit.tie_eps = true;
  cfg.fit.free_names = {"eps1"};
  cfg.fit.bounds["eps1"] = {0.0, 0.2};
  detail::param_set(cfg.fit.start, fitidx::kEps1, 0.08);

  const std::string dir = test_dir("fitreport");
  const auto out = run_fastpath(cfg, dir);
  REQUIRE(out.status == RunStatus::Ok);
  REQUIRE(out.fit.has_value());
  CHECK(out.fit->converged);
  CHECK(std::abs(out.fit->params.eps1 - 0.03) < 0.02);

  const json rep = load_json(dir + "/fit_report.json");
  CHECK(rep.at("converged").get<bool>());
  CHECK(rep.at("n_points").get<int>() == 3);
  CHECK(rep.at("n_free").get<int>() == 1);
  CHECK_FALSE(rep.at("quantum").get<bool>());
  CHECK(rep.at("tie_eps").get<bool>());
  CHECK(rep.at("restarts").at("total").get<std::size_t>() == cfg.fit.restarts);
  const auto& params = rep.at("parameters");
  CHECK_FALSE(params.at("eps1").at("fixed").get<bool>());
  CHECK(params.at("eps1").contains("bounds"));
  CHECK(params.at("mu").at("fixed").get<bool>());
  CHECK(params.at("eps2").contains("tied_to"));
  CHECK(std::abs(params.at("eps1").at("value").get<double>() - 0.03) < 0.02);
}
