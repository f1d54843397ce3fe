#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "sipmsim/detector.hpp"
#include "sipmsim/photon_sources.hpp"
#include "sipmsim/rng.hpp"
#include "sipmsim/stats.hpp"

// Shot-by-shot noise reduction factor R = Var(k1-k2)/(<k1>+<k2>) with
// bootstrap errors, the analytic R model for classical and quantum
// correlations, and a count-level Monte Carlo of R-vs-<k> curves.

namespace sipmsim {

struct NRFModelParams {
  double mu = 1.0;    // multi-thermal mode number
  double eta1 = 1.0;  // detection efficiencies
  double eta2 = 1.0;
  double eps1 = 0.0;  // cross-talk probabilities
  double eps2 = 0.0;
  double m1dc = 0.0;  // mean dark counts per shot
  double m2dc = 0.0;
  double t = 1.0;     // imbalance: <k2> = t <k1>
  bool quantum = false;  // keep the arm-correlation term

  void validate() const {
    if (!(mu > 0.0)) throw std::invalid_argument("nrf model: mu must be > 0");
    if (!(eta1 >= 0.0 && eta1 <= 1.0 && eta2 >= 0.0 && eta2 <= 1.0))
      throw std::invalid_argument("nrf model: eta must be in [0, 1]");
    if (!(eps1 >= 0.0 && eps1 < 1.0 && eps2 >= 0.0 && eps2 < 1.0))
      throw std::invalid_argument("nrf model: eps must be in [0, 1)");
    if (!(m1dc >= 0.0 && m2dc >= 0.0))
      throw std::invalid_argument("nrf model: dark counts must be >= 0");
    if (!(t > 0.0 && t <= 1.0))
      throw std::invalid_argument("nrf model: t must be in (0, 1]");
  }
};

/// Model R for given per-arm means. The quantum correlation term requires
/// each arm's mean to sit above its cross-talk-scaled dark floor.
inline double model_R_general(const NRFModelParams& p, double mean_k1, double mean_k2) {
  p.validate();
  if (!(mean_k1 > 0.0 && mean_k2 > 0.0))
    throw std::invalid_argument("model_R_general: arm means must be > 0");
  const double S = mean_k1 + mean_k2;
  const double diff = mean_k1 - mean_k2;
  const double D = (1.0 + p.eps1) * p.m1dc - (1.0 + p.eps2) * p.m2dc;
  double R = 1.0 + diff * diff / (p.mu * S) +
             (2.0 * p.eps1 / (1.0 + p.eps1)) * (mean_k1 / S) +
             (2.0 * p.eps2 / (1.0 + p.eps2)) * (mean_k2 / S) -
             (2.0 / p.mu) * D * diff / S + D * D / (p.mu * S);
  if (p.quantum) {
    const double a1 = (1.0 + p.eps1) * (mean_k1 - (1.0 + p.eps1) * p.m1dc);
    const double a2 = (1.0 + p.eps2) * (mean_k2 - (1.0 + p.eps2) * p.m2dc);
    if (a1 < 0.0 || a2 < 0.0)
      throw std::invalid_argument("model_R_general: mean below the dark floor");
    R -= 2.0 * std::sqrt(p.eta1 * p.eta2) * std::sqrt(a1 / S) * std::sqrt(a2 / S);
  }
  return R;
}

namespace detail {

// balanced-form R; negative square-root arguments are clamped to zero and
// accumulated into *violation so fitters can descend back into range
inline double model_R_balanced_impl(const NRFModelParams& p, double mean_k,
                                    double* violation) {
  const double tp1 = 1.0 + p.t;
  const double om_t = 1.0 - p.t;
  const double D = (1.0 + p.eps1) * p.m1dc - (1.0 + p.eps2) * p.m2dc;
  double R = 1.0 + (om_t * om_t / tp1) * mean_k / p.mu +
             (2.0 / tp1) * (p.eps1 / (1.0 + p.eps1) + (p.eps2 / (1.0 + p.eps2)) * p.t) -
             (2.0 / p.mu) * (om_t / tp1) * D + D * D / (p.mu * tp1 * mean_k);
  if (p.quantum) {
    double b1 = (1.0 + p.eps1) * (1.0 - (1.0 + p.eps1) * p.m1dc / mean_k);
    double b2 = (1.0 + p.eps2) * (p.t - (1.0 + p.eps2) * p.m2dc / mean_k);
    if (b1 < 0.0 || b2 < 0.0) {
      if (violation == nullptr)
        throw std::invalid_argument("model_R_balanced: mean below the dark floor");
      *violation += std::max(0.0, -b1) + std::max(0.0, -b2);
      b1 = std::max(b1, 0.0);
      b2 = std::max(b2, 0.0);
    }
    R -= (2.0 * std::sqrt(p.eta1 * p.eta2) / tp1) * std::sqrt(b1) * std::sqrt(b2);
  }
  return R;
}

}  // namespace detail

/// Model R in the balanced parameterization <k1> = <k>, <k2> = t<k>.
inline double model_R_balanced(const NRFModelParams& p, double mean_k) {
  p.validate();
  if (!(mean_k > 0.0))
    throw std::invalid_argument("model_R_balanced: mean_k must be > 0");
  return detail::model_R_balanced_impl(p, mean_k, nullptr);
}

enum class VarianceConvention { Unbiased, Population };

struct NRFPoint {
  double mean_k = 0.0;  // arm-1 mean, the sweep abscissa
  double R = 0.0;
  double sigma_R = 0.0;
  double mean_k1 = 0.0;
  double mean_k2 = 0.0;
};

struct NRFCurve {
  std::vector<NRFPoint> points;
};

/// R = Var(k1-k2)/(<k1>+<k2>), unbiased variance unless asked otherwise.
inline double nrf_statistic(const std::vector<double>& k1, const std::vector<double>& k2,
                            VarianceConvention conv = VarianceConvention::Unbiased) {
  if (k1.size() != k2.size())
    throw std::invalid_argument("noise_reduction: arm lengths differ");
  const std::size_t n = k1.size();
  if (n < 2) throw std::invalid_argument("noise_reduction: need at least 2 shots");
  double sum1 = 0.0, sum2 = 0.0, dsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum1 += k1[i];
    sum2 += k2[i];
    dsum += k1[i] - k2[i];
  }
  const double denom = (sum1 + sum2) / static_cast<double>(n);
  if (denom == 0.0) throw std::invalid_argument("noise_reduction: zero mean output");
  const double dmean = dsum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (k1[i] - k2[i]) - dmean;
    ss += d * d;
  }
  const double div = conv == VarianceConvention::Unbiased ? static_cast<double>(n - 1)
                                                          : static_cast<double>(n);
  return ss / div / denom;
}

/// Full NRF point with a bootstrap error over shots.
template <class URBG>
NRFPoint noise_reduction(const std::vector<double>& k1, const std::vector<double>& k2,
                         URBG& rng, std::size_t resamples = 500,
                         VarianceConvention conv = VarianceConvention::Unbiased) {
  NRFPoint pt;
  pt.R = nrf_statistic(k1, k2, conv);
  const std::size_t n = k1.size();
  double sum1 = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum1 += k1[i];
    sum2 += k2[i];
  }
  pt.mean_k1 = sum1 / static_cast<double>(n);
  pt.mean_k2 = sum2 / static_cast<double>(n);
  pt.mean_k = pt.mean_k1;

  if (resamples >= 2) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<double> r1(n), r2(n), rs;
    rs.reserve(resamples);
    for (std::size_t r = 0; r < resamples; ++r) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = pick(rng);
        r1[i] = k1[j];
        r2[i] = k2[j];
      }
      try {
        rs.push_back(nrf_statistic(r1, r2, conv));
      } catch (const std::invalid_argument&) {
        // all-zero resample carries no information
      }
    }
    if (rs.size() >= 2) {
      const auto m = sample_moments(rs);
      pt.sigma_R = std::sqrt(m.variance);
    }
  }
  return pt;
}

/// Source mean photons that lands the analytic detector mean on target_k.
inline double source_mean_for_k(const DetectorConfig& det, double target_k, double gate,
                                GateMode mode = GateMode::Integration) {
  if (!(det.eta > 0.0))
    throw std::invalid_argument("source_mean_for_k: eta must be > 0");
  const double eps_eff =
      mode == GateMode::Integration
          ? det.eps_prompt + det.eps_delayed * (1.0 - std::exp(-gate / det.ct_delay_tau))
          : det.eps_prompt;
  const double mean_n = (target_k / (1.0 + eps_eff) - det.dark_rate * gate * 1e-9) / det.eta;
  if (!(mean_n >= 0.0))
    throw std::invalid_argument("source_mean_for_k: target below the dark floor");
  return mean_n;
}

enum class CountingMode { GateCount, PeakCount };

/// Count-level fast path: photons -> avalanche events -> event counting,
/// skipping waveform synthesis. GateCount admits everything inside the gate;
/// PeakCount admits primaries in the coincidence window plus their prompt
/// cross-talk, mirroring what peak extraction responds to.
struct FastPathConfig {
  LightStateSpec state;  // kind TwinBeam correlates the arms; others split at a BS
  BeamSplitterSpec bs;
  DetectorConfig det1;
  DetectorConfig det2;
  CountingMode mode = CountingMode::GateCount;
  double gate = 100.0;              // ns, GateCount
  double coincidence_window = 2.0;  // ns, PeakCount
  std::size_t shots_per_point = 100'000;
  std::size_t bootstrap_resamples = 500;
  std::uint64_t seed = 1;
};

/// One NRF point per source mean; deterministic per-point random streams.
inline NRFCurve simulate_R_curve(const FastPathConfig& cfg,
                                 const std::vector<double>& source_means) {
  cfg.state.validate();
  cfg.bs.validate();
  cfg.det1.validate();
  cfg.det2.validate();
  if (cfg.shots_per_point < 2)
    throw std::invalid_argument("simulate_R_curve: need at least 2 shots per point");
  NRFCurve curve;
  curve.points.reserve(source_means.size());
  for (std::size_t pt_idx = 0; pt_idx < source_means.size(); ++pt_idx) {
    LightStateSpec state = cfg.state;
    state.mean_photons = source_means[pt_idx];
    state.validate();
    auto g = make_stream(cfg.seed, stream::kShot, pt_idx);
    std::vector<double> k1(cfg.shots_per_point), k2(cfg.shots_per_point);
    for (std::size_t i = 0; i < cfg.shots_per_point; ++i) {
      ShotPhotons n;
      if (state.kind == LightKind::TwinBeam) {
        n = sample_twin_beam(state, g);
      } else {
        n = split_at_bs(sample_photons(state, g), cfg.bs, g);
      }
      const auto ev1 = detect(n.n1, cfg.det1, g);
      const auto ev2 = detect(n.n2, cfg.det2, g);
      if (cfg.mode == CountingMode::GateCount) {
        k1[i] = count_in_gate(ev1, cfg.gate);
        k2[i] = count_in_gate(ev2, cfg.gate);
      } else {
        k1[i] = count_prompt_in_window(ev1, cfg.coincidence_window);
        k2[i] = count_prompt_in_window(ev2, cfg.coincidence_window);
      }
    }
    auto bg = make_stream(cfg.seed, stream::kBootstrap, pt_idx);
    curve.points.push_back(noise_reduction(k1, k2, bg, cfg.bootstrap_resamples));
  }
  return curve;
}

}  // namespace sipmsim
