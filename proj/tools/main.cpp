#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sipmsim/harness.hpp"
#include "sipmsim/version.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string preset;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> shots;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "JSON config file (flat dotted keys)");
  sub->add_option("--preset", args.preset,
                  "base chain: psau_drs4, psau_dt5720, or slow_drs4");
  sub->add_option("--seed", args.seed, "master random seed");
  sub->add_option("--shots", args.shots, "shots per sweep point");
  sub->add_option("--out", args.out_dir, "output directory");
  sub->add_option("--threads", args.threads, "worker threads (0 = hardware)");
}

sipmsim::ExperimentConfig build_config(const CommonArgs& args) {
  sipmsim::ExperimentConfig cfg;
  if (!args.preset.empty()) cfg = sipmsim::preset_config(args.preset);
  if (!args.config_path.empty())
    cfg = sipmsim::config_from_file(args.config_path, std::move(cfg));
  if (args.seed) cfg.seed = *args.seed;
  if (args.shots) cfg.shots = *args.shots;
  if (args.threads) cfg.threads = *args.threads;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  cfg.validate();
  return cfg;
}

int status_code(sipmsim::RunStatus s) { return static_cast<int>(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SiPM photon-counting simulator and analysis toolkit"};
  app.set_version_flag("--version", sipmsim::kVersion);
  app.require_subcommand(1);

  CommonArgs args;
  std::string curve_path;

  CLI::App* phs = app.add_subcommand("phs", "pulse-height spectra with visibility");
  add_common(phs, args);
  CLI::App* nrf = app.add_subcommand("nrf", "two-arm noise reduction factor curve");
  add_common(nrf, args);
  CLI::App* fastpath =
      app.add_subcommand("fastpath", "count-level noise reduction factor curve");
  add_common(fastpath, args);
  CLI::App* fit = app.add_subcommand("fit", "fit the R model to a curve CSV");
  add_common(fit, args);
  fit->add_option("--curve", curve_path, "input CSV: mean_k,mean_k1,mean_k2,R,sigma_R")
      ->required();
  CLI::App* dump = app.add_subcommand("dump-waveforms", "binary digitized-trace dump");
  add_common(dump, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const sipmsim::ExperimentConfig cfg = build_config(args);
    if (phs->parsed()) {
      const auto out = sipmsim::run_phs(cfg, cfg.out_dir);
      for (const auto& run : out.runs) {
        if (run.vis.value)
          std::printf("%s: visibility %.4f +- %.4f (%zu peaks)\n",
                      run.csv_path.c_str(), *run.vis.value, run.vis.error,
                      run.vis.n_peaks);
        else
          std::printf("%s: degenerate spectrum, no visibility\n", run.csv_path.c_str());
      }
      return status_code(out.status);
    }
    if (nrf->parsed() || fastpath->parsed()) {
      const auto out = nrf->parsed() ? sipmsim::run_nrf(cfg, cfg.out_dir)
                                     : sipmsim::run_fastpath(cfg, cfg.out_dir);
      for (const auto& pt : out.curve.points)
        std::printf("mean_k %.4f: R %.4f +- %.4f\n", pt.mean_k, pt.R, pt.sigma_R);
      if (out.fit)
        std::printf("fit: %s, reduced chi2 %.4f\n",
                    out.fit->converged ? "converged" : "FAILED", out.fit->reduced_chi2);
      return status_code(out.status);
    }
    if (fit->parsed()) {
      const sipmsim::NRFCurve curve = sipmsim::read_nrf_csv(curve_path);
      sipmsim::FitConfig fc = cfg.fit;
      if (fc.free_names.empty())
        throw sipmsim::ConfigError("fit.free", "the fit subcommand needs free parameters");
      const sipmsim::FitSpec spec = sipmsim::fit_spec_from_config(fc);
      sipmsim::FitOptions opts;
      opts.restarts = fc.restarts;
      opts.seed = cfg.seed;
      const sipmsim::FitResult res = sipmsim::fit_model(curve, spec, opts);
      std::filesystem::create_directories(cfg.out_dir);
      sipmsim::write_json(cfg.out_dir + "/fit_report.json",
                          sipmsim::detail::fit_report_json(res, spec));
      std::printf("fit: %s, chi2 %.6g, reduced chi2 %.6g\n",
                  res.converged ? "converged" : "FAILED", res.chi2, res.reduced_chi2);
      return res.converged ? 0 : status_code(sipmsim::RunStatus::FitFailed);
    }
    if (dump->parsed()) {
      const auto out = sipmsim::dump_waveforms(cfg, cfg.out_dir);
      std::printf("wrote %s\n", out.dump_path.c_str());
      return status_code(out.status);
    }
  } catch (const sipmsim::ConfigError& e) {
    std::fprintf(stderr, "config error - %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error - %s\n", e.what());
    return 2;
  }
  return 0;
}
