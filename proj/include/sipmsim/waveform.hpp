#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "sipmsim/detector.hpp"
#include "sipmsim/rng.hpp"

// Analog waveform chain: avalanche events -> single-cell pulses summed on an
// oversampled grid -> amplifier (fast inverting or slow two-stage shaper)
// with rail saturation -> digitizer (decimation, additive noise, clamping,
// uniform quantization).

namespace sipmsim {

struct CellPulseParams {
  double amplitude = 2.9e-3;   // V per fired cell at the pulse peak, pre-amplifier
  double tau_rise = 0.3;       // ns, shared constant of the squared-exponential rise
  double tau_fall_fast = 10.0;  // ns
  double tau_fall_slow = 100.0;  // ns
  double fall_mix = 0.7;       // weight of the fast fall component

  void validate() const {
    if (!(amplitude > 0.0)) throw std::invalid_argument("pulse: amplitude must be > 0");
    if (!(tau_rise > 0.0)) throw std::invalid_argument("pulse: tau_rise must be > 0");
    if (!(tau_rise < tau_fall_fast && tau_fall_fast < tau_fall_slow))
      throw std::invalid_argument("pulse: need tau_rise < tau_fall_fast < tau_fall_slow");
    if (!(fall_mix >= 0.0 && fall_mix <= 1.0))
      throw std::invalid_argument("pulse: fall_mix must be in [0, 1]");
  }
};

namespace detail {

// Unnormalized shape: (1 - e^{-t/tau_r})^2 [w e^{-t/tau_ff} + (1-w) e^{-t/tau_fs}].
inline double pulse_shape(double t, const CellPulseParams& p) {
  if (t <= 0.0) return 0.0;
  const double r = 1.0 - std::exp(-t / p.tau_rise);
  return r * r *
         (p.fall_mix * std::exp(-t / p.tau_fall_fast) +
          (1.0 - p.fall_mix) * std::exp(-t / p.tau_fall_slow));
}

struct PulsePeak {
  double time;
  double value;
};

// Coarse scan plus ternary refinement; the shape is smooth with one maximum.
inline PulsePeak pulse_shape_peak(const CellPulseParams& p) {
  double t_hi = 4.0 * p.tau_rise * std::log1p(2.0 * p.tau_fall_slow / p.tau_rise) +
                5.0 * p.tau_rise;
  const int n = 2000;
  int best = 1;
  double best_v = 0.0;
  for (;;) {
    for (int i = 1; i <= n; ++i) {
      const double v = pulse_shape(t_hi * i / n, p);
      if (v > best_v) {
        best_v = v;
        best = i;
      }
    }
    if (best < n) break;
    t_hi *= 2.0;  // argmax on the boundary: widen the bracket
    best_v = 0.0;
  }
  double lo = t_hi * (best - 1) / n;
  double hi = t_hi * (best + 1) / n;
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (pulse_shape(m1, p) < pulse_shape(m2, p))
      lo = m1;
    else
      hi = m2;
  }
  const double t = 0.5 * (lo + hi);
  return {t, pulse_shape(t, p)};
}

}  // namespace detail

/// Single-cell pulse in volts, normalized so the peak equals p.amplitude.
inline double cell_pulse(double t, const CellPulseParams& p) {
  p.validate();
  return detail::pulse_shape(t, p) * (p.amplitude / detail::pulse_shape_peak(p).value);
}

/// Time of the single-cell pulse maximum, ns.
inline double cell_pulse_peak_time(const CellPulseParams& p) {
  p.validate();
  return detail::pulse_shape_peak(p).time;
}

struct AnalogWaveform {
  double t0 = 0.0;  // ns of the first sample, relative to the trigger
  double dt = 0.05;  // ns between samples
  std::vector<double> v;
};

/// Precomputes the single-cell pulse on the oversample grid once, then
/// renders shots by shifted accumulation of that kernel.
class WaveformSynthesizer {
 public:
  WaveformSynthesizer(const CellPulseParams& p, double oversample_rate_hz,
                      double t_start_ns, double t_stop_ns)
      : t0_(t_start_ns), dt_(1e9 / oversample_rate_hz) {
    p.validate();
    if (!(oversample_rate_hz > 0.0))
      throw std::invalid_argument("synthesize: oversample_rate must be > 0");
    if (!(t_stop_ns > t_start_ns))
      throw std::invalid_argument("synthesize: need t_stop > t_start");
    n_ = static_cast<std::size_t>(std::llround((t_stop_ns - t_start_ns) / dt_));
    // the kernel outlives the record span by the slow tail so that events
    // before t_start keep their full contribution inside the window
    const auto tail = static_cast<std::size_t>(std::llround(10.0 * p.tau_fall_slow / dt_));
    const double scale = p.amplitude / detail::pulse_shape_peak(p).value;
    kernel_.resize(n_ + tail);
    for (std::size_t i = 0; i < kernel_.size(); ++i)
      kernel_[i] = scale * detail::pulse_shape(static_cast<double>(i) * dt_, p);
  }

  double t0() const { return t0_; }
  double dt() const { return dt_; }
  std::size_t size() const { return n_; }

  /// Accumulate events into a caller-owned buffer of size() samples.
  void add_events(const AvalancheEventList& events, std::vector<double>& acc) const {
    const auto n_acc = static_cast<std::ptrdiff_t>(acc.size());
    const auto n_kernel = static_cast<std::ptrdiff_t>(kernel_.size());
    for (const auto& e : events) {
      const std::ptrdiff_t off = std::llround((e.time - t0_) / dt_);
      const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -off);
      const std::ptrdiff_t j1 = std::min(n_kernel, n_acc - off);
      for (std::ptrdiff_t j = j0; j < j1; ++j) acc[off + j] += kernel_[j];
    }
  }

  AnalogWaveform synthesize(const AvalancheEventList& events) const {
    AnalogWaveform w{t0_, dt_, std::vector<double>(n_, 0.0)};
    add_events(events, w.v);
    return w;
  }

 private:
  double t0_;
  double dt_;
  std::size_t n_ = 0;
  std::vector<double> kernel_;
};

/// One-off synthesis; hot paths should hold a WaveformSynthesizer instead.
inline AnalogWaveform synthesize(const AvalancheEventList& events,
                                 const CellPulseParams& p, double oversample_rate_hz,
                                 double t_start_ns = 0.0, double t_stop_ns = 200.0) {
  return WaveformSynthesizer(p, oversample_rate_hz, t_start_ns, t_stop_ns)
      .synthesize(events);
}

enum class AmplifierKind { FastInverting, SlowShaper };
enum class Polarity { Inverting, NonInverting };
enum class Saturation { Hard, Soft };

struct AmplifierConfig {
  AmplifierKind kind = AmplifierKind::FastInverting;
  double gain_db = 24.0;     // FastInverting: integer dB in [1, 40]; SlowShaper: 29.6
  double shaping_tau = 41.0;  // ns, SlowShaper stage constant
  double rail_voltage = 0.48;  // V, absolute clip level
  Polarity polarity = Polarity::Inverting;
  Saturation saturation = Saturation::Hard;

  void validate() const {
    if (!(rail_voltage > 0.0))
      throw std::invalid_argument("amplifier: rail_voltage must be > 0");
    if (kind == AmplifierKind::FastInverting) {
      if (!(gain_db >= 1.0 && gain_db <= 40.0 &&
            std::abs(gain_db - std::round(gain_db)) < 1e-9))
        throw std::invalid_argument(
            "amplifier: FastInverting gain_db must be an integer in [1, 40]");
    } else {
      if (std::abs(gain_db - 29.6) > 1e-9)
        throw std::invalid_argument("amplifier: SlowShaper gain_db is fixed at 29.6");
      if (!(shaping_tau > 0.0))
        throw std::invalid_argument("amplifier: shaping_tau must be > 0");
    }
  }
};

inline AmplifierConfig fast_amplifier(double gain_db, double rail_voltage) {
  AmplifierConfig cfg;
  cfg.kind = AmplifierKind::FastInverting;
  cfg.gain_db = gain_db;
  cfg.rail_voltage = rail_voltage;
  cfg.polarity = Polarity::Inverting;
  return cfg;
}

inline AmplifierConfig slow_amplifier(double shaping_tau, double rail_voltage) {
  AmplifierConfig cfg;
  cfg.kind = AmplifierKind::SlowShaper;
  cfg.gain_db = 29.6;
  cfg.shaping_tau = shaping_tau;
  cfg.rail_voltage = rail_voltage;
  cfg.polarity = Polarity::NonInverting;
  return cfg;
}

namespace detail {

inline double saturate(double v, double rail, Saturation mode) {
  if (mode == Saturation::Hard) return std::clamp(v, -rail, rail);
  return rail * std::tanh(v / rail);
}

}  // namespace detail

inline AnalogWaveform amplify(const AnalogWaveform& w, const AmplifierConfig& cfg) {
  cfg.validate();
  AnalogWaveform out = w;
  const double sign = cfg.polarity == Polarity::Inverting ? -1.0 : 1.0;
  if (cfg.kind == AmplifierKind::FastInverting) {
    const double g = sign * std::pow(10.0, cfg.gain_db / 20.0);
    for (auto& v : out.v) v = detail::saturate(g * v, cfg.rail_voltage, cfg.saturation);
  } else {
    // two single-pole low-pass stages, each with gain 5.5 into the rail
    const double alpha = 1.0 - std::exp(-w.dt / cfg.shaping_tau);
    for (int stage = 0; stage < 2; ++stage) {
      double y = 0.0;
      for (auto& v : out.v) {
        y += alpha * (v - y);
        v = detail::saturate(5.5 * y, cfg.rail_voltage, cfg.saturation);
      }
    }
    if (sign < 0.0)
      for (auto& v : out.v) v = -v;
  }
  return out;
}

struct DigitizerConfig {
  double sample_rate = 5.0e9;  // samples/s
  int bits = 12;
  double full_scale = 1.0;  // V peak-to-peak
  std::uint32_t record_samples = 1024;
  double pre_trigger_fraction = 0.15;
  double noise_rms_lsb = 0.25;  // Gaussian RMS before quantization, in steps

  double sample_period_ns() const { return 1e9 / sample_rate; }
  double quantization_step() const {
    return full_scale / static_cast<double>(1u << bits);
  }
  std::uint32_t trigger_index() const {
    return static_cast<std::uint32_t>(
        std::llround(record_samples * pre_trigger_fraction));
  }
  double record_ns() const { return record_samples * sample_period_ns(); }
  double pre_trigger_ns() const { return trigger_index() * sample_period_ns(); }

  void validate() const {
    if (!(sample_rate > 0.0))
      throw std::invalid_argument("digitizer: sample_rate must be > 0");
    if (bits < 8 || bits > 16)
      throw std::invalid_argument("digitizer: bits must be in [8, 16]");
    if (!(full_scale > 0.0))
      throw std::invalid_argument("digitizer: full_scale must be > 0");
    if (record_samples < 1)
      throw std::invalid_argument("digitizer: record_samples must be >= 1");
    if (!(pre_trigger_fraction >= 0.0 && pre_trigger_fraction < 1.0))
      throw std::invalid_argument("digitizer: pre_trigger_fraction must be in [0, 1)");
    if (!(noise_rms_lsb >= 0.0))
      throw std::invalid_argument("digitizer: noise_rms_lsb must be >= 0");
  }
};

struct WaveformTrace {
  double sample_period = 0.2;  // ns
  std::uint32_t trigger_index = 0;
  std::vector<float> samples;  // quantized volts

  double time_at(std::size_t i) const {
    return (static_cast<double>(i) - static_cast<double>(trigger_index)) *
           sample_period;
  }
};

namespace detail {

template <class URBG>
WaveformTrace digitize_impl(const AnalogWaveform& w, const DigitizerConfig& cfg,
                            URBG* rng) {
  cfg.validate();
  const double step = cfg.quantization_step();
  const double half = cfg.full_scale / 2.0;
  const long long max_idx = 1LL << (cfg.bits - 1);
  WaveformTrace tr;
  tr.sample_period = cfg.sample_period_ns();
  tr.trigger_index = cfg.trigger_index();
  tr.samples.resize(cfg.record_samples);
  std::normal_distribution<double> noise(0.0, cfg.noise_rms_lsb * step);
  const auto n_in = static_cast<std::ptrdiff_t>(w.v.size());
  for (std::size_t i = 0; i < tr.samples.size(); ++i) {
    const std::ptrdiff_t j = std::llround((tr.time_at(i) - w.t0) / w.dt);
    double v = (j >= 0 && j < n_in) ? w.v[j] : 0.0;
    if (rng != nullptr && cfg.noise_rms_lsb > 0.0) v += noise(*rng);
    v = std::clamp(v, -half, half);
    const long long q =
        std::clamp(static_cast<long long>(std::llround(v / step)), -max_idx, max_idx);
    tr.samples[i] = static_cast<float>(static_cast<double>(q) * step);
  }
  return tr;
}

}  // namespace detail

/// Noise-free digitization (decimate, clamp, quantize).
inline WaveformTrace digitize(const AnalogWaveform& w, const DigitizerConfig& cfg) {
  return detail::digitize_impl<RandomEngine>(w, cfg, nullptr);
}

/// Digitization with additive Gaussian noise ahead of the quantizer.
template <class URBG>
WaveformTrace digitize(const AnalogWaveform& w, const DigitizerConfig& cfg, URBG& rng) {
  return detail::digitize_impl(w, cfg, &rng);
}

}  // namespace sipmsim
