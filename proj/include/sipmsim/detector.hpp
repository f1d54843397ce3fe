#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "sipmsim/rng.hpp"

// Detector response: photon numbers in, timed single-cell avalanche events
// out. Models detection efficiency, Poissonian dark counts, prompt and
// delayed optical cross-talk, optional afterpulsing, and the finite cell
// count of the sensor.
//
// Cross-talk is single-generation: each primary avalanche can spawn at most
// one prompt and one delayed secondary, and secondaries spawn nothing. The
// mean multiplier is then exactly (1 + eps) and, for Poissonian primaries,
// the count Fano factor is (1 + 3*eps)/(1 + eps); at the few-percent
// cross-talk levels modeled here, multi-generation corrections are O(eps^2).

namespace sipmsim {

enum class EventOrigin : std::uint8_t { Photon, Dark, PromptCT, DelayedCT, Afterpulse };

struct AvalancheEvent {
  double time = 0.0;  // ns relative to trigger
  EventOrigin origin = EventOrigin::Photon;
};

using AvalancheEventList = std::vector<AvalancheEvent>;

struct DetectorConfig {
  double eta = 0.38;            // photon detection efficiency
  std::uint32_t n_cells = 667;  // cell capacity of the sensor
  double dark_rate = 9.0e4;     // Hz
  double eps_prompt = 0.02;     // prompt cross-talk probability per avalanche
  double eps_delayed = 0.01;    // delayed cross-talk probability per avalanche
  double ct_delay_tau = 20.0;   // ns, delayed-CT exponential constant
  double afterpulse_prob = 0.0;
  double afterpulse_tau = 100.0;  // ns
  double record_window = 200.0;   // ns, span over which dark counts accrue
  double pre_trigger = 0.0;       // ns of the record preceding the trigger

  void validate() const {
    if (!(eta >= 0.0 && eta <= 1.0))
      throw std::invalid_argument("detector: eta must be in [0, 1]");
    if (n_cells < 1) throw std::invalid_argument("detector: n_cells must be >= 1");
    if (!(dark_rate >= 0.0))
      throw std::invalid_argument("detector: dark_rate must be >= 0");
    if (!(eps_prompt >= 0.0 && eps_prompt < 1.0))
      throw std::invalid_argument("detector: eps_prompt must be in [0, 1)");
    if (!(eps_delayed >= 0.0 && eps_delayed < 1.0))
      throw std::invalid_argument("detector: eps_delayed must be in [0, 1)");
    if (!(ct_delay_tau > 0.0))
      throw std::invalid_argument("detector: ct_delay_tau must be > 0");
    if (!(afterpulse_prob >= 0.0 && afterpulse_prob < 1.0))
      throw std::invalid_argument("detector: afterpulse_prob must be in [0, 1)");
    if (!(afterpulse_tau > 0.0))
      throw std::invalid_argument("detector: afterpulse_tau must be > 0");
    if (!(record_window > 0.0))
      throw std::invalid_argument("detector: record_window must be > 0");
    if (!(pre_trigger >= 0.0 && pre_trigger < record_window))
      throw std::invalid_argument("detector: pre_trigger must be in [0, record_window)");
  }
};

/// Gate semantics for count-level estimates: Integration admits everything
/// inside the gate; Peak admits only events coincident with the light pulse
/// (prompt cross-talk included, delayed cross-talk and afterpulses never).
enum class GateMode { Integration, Peak };

namespace detail {

template <class URBG>
void spawn_secondaries(const AvalancheEvent& primary, const DetectorConfig& cfg,
                       double t_max, AvalancheEventList& out, URBG& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (cfg.eps_prompt > 0.0 && u(g) < cfg.eps_prompt)
    out.push_back({primary.time, EventOrigin::PromptCT});
  if (cfg.eps_delayed > 0.0 && u(g) < cfg.eps_delayed) {
    std::exponential_distribution<double> e(1.0 / cfg.ct_delay_tau);
    const double t = primary.time + e(g);
    if (t <= t_max) out.push_back({t, EventOrigin::DelayedCT});
  }
  if (cfg.afterpulse_prob > 0.0 && u(g) < cfg.afterpulse_prob) {
    std::exponential_distribution<double> e(1.0 / cfg.afterpulse_tau);
    const double t = primary.time + e(g);
    if (t <= t_max) out.push_back({t, EventOrigin::Afterpulse});
  }
}

}  // namespace detail

/// Simulate one shot: n true photons -> avalanche events. Event times are ns
/// relative to the trigger; dark counts populate
/// [-pre_trigger, record_window - pre_trigger].
template <class URBG>
AvalancheEventList detect(std::uint32_t n, const DetectorConfig& cfg, URBG& g) {
  const double t_max = cfg.record_window - cfg.pre_trigger;
  AvalancheEventList primaries;

  std::uint32_t fired = 0;
  if (cfg.eta >= 1.0) {
    fired = n;
  } else if (cfg.eta > 0.0 && n > 0) {
    std::binomial_distribution<std::uint32_t> thin(n, cfg.eta);
    fired = thin(g);
  }
  primaries.reserve(fired + 4);
  for (std::uint32_t i = 0; i < fired; ++i) primaries.push_back({0.0, EventOrigin::Photon});

  const double dark_mean = cfg.dark_rate * cfg.record_window * 1e-9;
  if (dark_mean > 0.0) {
    std::poisson_distribution<std::uint32_t> nd(dark_mean);
    std::uniform_real_distribution<double> ut(-cfg.pre_trigger, t_max);
    const std::uint32_t n_dark = nd(g);
    for (std::uint32_t i = 0; i < n_dark; ++i) primaries.push_back({ut(g), EventOrigin::Dark});
  }

  AvalancheEventList events = primaries;
  for (const auto& p : primaries) detail::spawn_secondaries(p, cfg, t_max, events, g);

  if (events.size() > cfg.n_cells) {
    // capacity: earliest avalanches claim cells, latest are dropped
    std::stable_sort(events.begin(), events.end(),
                     [](const AvalancheEvent& a, const AvalancheEvent& b) {
                       return a.time < b.time;
                     });
    events.resize(cfg.n_cells);
  }
  return events;
}

/// Analytic mean detector output for a gate of the given width. For
/// GateMode::Peak the gate is the coincidence window of the peak sample and
/// only prompt cross-talk contributes to the multiplier.
inline double mean_k(double mean_n, const DetectorConfig& cfg, double gate,
                     GateMode mode = GateMode::Integration) {
  if (!(gate > 0.0)) throw std::invalid_argument("mean_k: gate must be > 0");
  if (!(mean_n >= 0.0)) throw std::invalid_argument("mean_k: mean_n must be >= 0");
  const double eps_eff =
      mode == GateMode::Integration
          ? cfg.eps_prompt + cfg.eps_delayed * (1.0 - std::exp(-gate / cfg.ct_delay_tau))
          : cfg.eps_prompt;
  return (cfg.eta * mean_n + cfg.dark_rate * gate * 1e-9) * (1.0 + eps_eff);
}

/// Number of events with 0 <= time <= gate.
inline std::uint32_t count_in_gate(const AvalancheEventList& events, double gate) {
  if (!(gate > 0.0)) throw std::invalid_argument("count_in_gate: gate must be > 0");
  std::uint32_t c = 0;
  for (const auto& e : events)
    if (e.time >= 0.0 && e.time <= gate) ++c;
  return c;
}

/// Count-level stand-in for peak extraction: primaries and their prompt
/// cross-talk inside the coincidence window; delayed cross-talk and
/// afterpulses are rejected regardless of their time.
inline std::uint32_t count_prompt_in_window(const AvalancheEventList& events,
                                            double window) {
  if (!(window > 0.0))
    throw std::invalid_argument("count_prompt_in_window: window must be > 0");
  std::uint32_t c = 0;
  for (const auto& e : events) {
    if (e.origin == EventOrigin::DelayedCT || e.origin == EventOrigin::Afterpulse)
      continue;
    if (e.time >= 0.0 && e.time <= window) ++c;
  }
  return c;
}

}  // namespace sipmsim
