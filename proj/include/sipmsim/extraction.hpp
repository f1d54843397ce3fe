#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>

#include "sipmsim/waveform.hpp"

// Trace reduction: one scalar per shot via gated integration, peak selection,
// or pre-peak integration, all baseline-subtracted. Polarity folding happens
// here so downstream analysis always sees light pulses as positive values.

namespace sipmsim {

enum class ExtractionMethod { GatedIntegral, PeakValue, PrePeakIntegral };

struct ExtractionConfig {
  ExtractionMethod method = ExtractionMethod::GatedIntegral;
  double gate_tau = 100.0;      // ns, GatedIntegral
  double search_window = 10.0;  // ns after the trigger, PeakValue
  double pre_peak_width = 2.0;  // ns, PrePeakIntegral
  double baseline_start = -24.0;  // ns relative to the trigger
  double baseline_end = -4.0;
  Polarity polarity = Polarity::Inverting;

  void validate() const {
    if (!(gate_tau > 0.0))
      throw std::invalid_argument("extraction: gate_tau must be > 0");
    if (!(search_window > 0.0))
      throw std::invalid_argument("extraction: search_window must be > 0");
    if (!(pre_peak_width > 0.0))
      throw std::invalid_argument("extraction: pre_peak_width must be > 0");
    if (!(baseline_start < baseline_end && baseline_end <= 0.0))
      throw std::invalid_argument("extraction: baseline window must precede the trigger");
  }
};

struct ShotRecord {
  double x_out1 = 0.0;
  double x_out2 = 0.0;
  std::optional<double> k1;
  std::optional<double> k2;
};

namespace detail {

inline double fold_sign(Polarity p) { return p == Polarity::Inverting ? -1.0 : 1.0; }

// index range of trace samples with time in [t_lo, t_hi], grid-tolerant
struct IndexRange {
  std::ptrdiff_t first;
  std::ptrdiff_t last;  // inclusive
};

inline IndexRange window_indices(const WaveformTrace& tr, double t_lo, double t_hi) {
  const double T = tr.sample_period;
  const auto trig = static_cast<std::ptrdiff_t>(tr.trigger_index);
  const auto first =
      trig + static_cast<std::ptrdiff_t>(std::ceil(t_lo / T - 1e-9));
  const auto last = trig + static_cast<std::ptrdiff_t>(std::floor(t_hi / T + 1e-9));
  return {first, last};
}

}  // namespace detail

/// Mean of the raw samples with time in [start, end]; the window must sit
/// fully before the trigger and hold at least 4 samples.
inline double baseline(const WaveformTrace& tr, double start, double end) {
  if (!(start < end && end <= 0.0))
    throw std::invalid_argument("baseline: window must precede the trigger");
  const auto r = detail::window_indices(tr, start, end);
  if (r.first < 0 || r.last >= static_cast<std::ptrdiff_t>(tr.trigger_index))
    throw std::invalid_argument("baseline: window outside the pre-trigger region");
  if (r.last - r.first + 1 < 4)
    throw std::invalid_argument("baseline: window must hold at least 4 samples");
  double sum = 0.0;
  for (std::ptrdiff_t i = r.first; i <= r.last; ++i)
    sum += tr.samples[static_cast<std::size_t>(i)];
  return sum / static_cast<double>(r.last - r.first + 1);
}

inline double baseline(const WaveformTrace& tr, const ExtractionConfig& cfg) {
  return baseline(tr, cfg.baseline_start, cfg.baseline_end);
}

/// Baseline-subtracted, polarity-folded integral over [trigger, trigger+tau):
/// round(tau/period) samples, each weighted by the sample period, so a
/// constant 1 V excess over a 10 ns gate yields exactly 10 V·ns.
inline double gated_integral(const WaveformTrace& tr, const ExtractionConfig& cfg) {
  cfg.validate();
  if (!(cfg.gate_tau > 0.0))
    throw std::invalid_argument("gated_integral: tau must be > 0");
  const auto n_gate = std::llround(cfg.gate_tau / tr.sample_period);
  const std::size_t first = tr.trigger_index;
  if (n_gate < 1 || first + static_cast<std::size_t>(n_gate) > tr.samples.size())
    throw std::invalid_argument("gated_integral: gate exceeds the record");
  const double b = baseline(tr, cfg);
  const double fold = detail::fold_sign(cfg.polarity);
  double sum = 0.0;
  for (std::size_t i = first; i < first + static_cast<std::size_t>(n_gate); ++i)
    sum += fold * (tr.samples[i] - b);
  return sum * tr.sample_period;
}

namespace detail {

inline std::size_t peak_index(const WaveformTrace& tr, std::size_t first,
                              std::size_t last_excl, double b, double fold) {
  std::size_t best = first;
  double best_v = fold * (tr.samples[first] - b);
  for (std::size_t i = first + 1; i < last_excl; ++i) {
    const double v = fold * (tr.samples[i] - b);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

/// Maximum polarity-folded, baseline-subtracted sample over
/// [trigger, trigger + search_window).
inline double peak_value(const WaveformTrace& tr, const ExtractionConfig& cfg) {
  cfg.validate();
  const auto n = std::llround(cfg.search_window / tr.sample_period);
  const std::size_t first = tr.trigger_index;
  if (n < 1 || first + static_cast<std::size_t>(n) > tr.samples.size())
    throw std::invalid_argument("peak_value: search window exceeds the record");
  const double b = baseline(tr, cfg);
  const double fold = detail::fold_sign(cfg.polarity);
  const std::size_t pk =
      detail::peak_index(tr, first, first + static_cast<std::size_t>(n), b, fold);
  return fold * (tr.samples[pk] - b);
}

/// Locate the post-trigger maximum, then integrate the folded excess over
/// (t_peak - width, t_peak]: round(width/period) samples ending at the peak.
inline double pre_peak_integral(const WaveformTrace& tr, const ExtractionConfig& cfg) {
  cfg.validate();
  if (tr.trigger_index >= tr.samples.size())
    throw std::invalid_argument("pre_peak_integral: no post-trigger samples");
  const double b = baseline(tr, cfg);
  const double fold = detail::fold_sign(cfg.polarity);
  const std::size_t pk =
      detail::peak_index(tr, tr.trigger_index, tr.samples.size(), b, fold);
  const auto n = std::llround(cfg.pre_peak_width / tr.sample_period);
  if (n < 1 || static_cast<std::ptrdiff_t>(pk) - n + 1 < 0)
    throw std::invalid_argument("pre_peak_integral: window extends before the record");
  double sum = 0.0;
  for (std::size_t i = pk - static_cast<std::size_t>(n) + 1; i <= pk; ++i)
    sum += fold * (tr.samples[i] - b);
  return sum * tr.sample_period;
}

/// Dispatch on the configured method.
inline double extract(const WaveformTrace& tr, const ExtractionConfig& cfg) {
  switch (cfg.method) {
    case ExtractionMethod::GatedIntegral:
      return gated_integral(tr, cfg);
    case ExtractionMethod::PeakValue:
      return peak_value(tr, cfg);
    case ExtractionMethod::PrePeakIntegral:
      return pre_peak_integral(tr, cfg);
  }
  throw std::logic_error("extract: unknown method");
}

}  // namespace sipmsim
