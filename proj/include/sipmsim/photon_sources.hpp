#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include "sipmsim/rng.hpp"

// Photon-number generation for the optical states used throughout:
//  - Coherent:     Poissonian, Var = mean
//  - Thermal:      Bose-Einstein single mode, Var = mean + mean^2
//  - MultiThermal: mu equal thermal modes, Var = mean + mean^2/mu
//  - TwinBeam:     two perfectly correlated multithermal arms, n1 = n2
// Thermal is sampled by direct geometric inversion; MultiThermal goes through
// a Poisson-gamma mixture. The two routes agree for mu = 1, which the tests
// exploit as a cross-check.

namespace sipmsim {

enum class LightKind { Coherent, Thermal, MultiThermal, TwinBeam };

struct LightStateSpec {
  LightKind kind = LightKind::Coherent;
  double mean_photons = 1.0;  // photons/pulse; per arm for TwinBeam
  double modes = 1.0;         // mu, >= 1; meaningful for MultiThermal/TwinBeam

  void validate() const {
    if (!(mean_photons >= 0.0))
      throw std::invalid_argument("light state: mean_photons must be >= 0");
    if (!(modes >= 1.0))
      throw std::invalid_argument("light state: modes must be >= 1");
    if (kind == LightKind::Thermal && modes != 1.0)
      throw std::invalid_argument("light state: Thermal implies modes == 1");
  }
};

struct ShotPhotons {
  std::uint32_t n1 = 0;
  std::uint32_t n2 = 0;
};

struct BeamSplitterSpec {
  double transmittance = 0.5;  // probability a photon exits port 1

  void validate() const {
    if (!(transmittance >= 0.0 && transmittance <= 1.0))
      throw std::invalid_argument("beam splitter: transmittance must be in [0, 1]");
  }
};

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Analytic mean and variance of the pre-detection photon number
/// (per arm for TwinBeam).
inline Moments analytic_moments(const LightStateSpec& s) {
  const double m = s.mean_photons;
  switch (s.kind) {
    case LightKind::Coherent: return {m, m};
    case LightKind::Thermal: return {m, m + m * m};
    case LightKind::MultiThermal:
    case LightKind::TwinBeam: return {m, m + m * m / s.modes};
  }
  throw std::logic_error("unreachable light kind");
}

namespace detail {

template <class URBG>
std::uint32_t sample_poisson(double mean, URBG& g) {
  if (mean <= 0.0) return 0;
  std::poisson_distribution<std::uint32_t> d(mean);
  return d(g);
}

// Bose-Einstein via geometric inversion: P(n) = m^n / (1+m)^(n+1).
template <class URBG>
std::uint32_t sample_bose_einstein(double mean, URBG& g) {
  if (mean <= 0.0) return 0;
  const double q = mean / (1.0 + mean);  // in (0, 1)
  const double u = uniform_open(g);
  const double n = std::floor(std::log(u) / std::log(q));
  if (n >= 4294967295.0) return 4294967295u;
  return static_cast<std::uint32_t>(n);
}

// mu thermal modes of equal mean: Poisson with gamma-distributed intensity,
// shape mu, scale mean/mu.
template <class URBG>
std::uint32_t sample_multithermal(double mean, double mu, URBG& g) {
  if (mean <= 0.0) return 0;
  std::gamma_distribution<double> gamma(mu, mean / mu);
  return sample_poisson(gamma(g), g);
}

}  // namespace detail

/// One pulse of the single-arm photon number. For TwinBeam this is the
/// per-arm count (use sample_twin_beam for the correlated pair).
template <class URBG>
std::uint32_t sample_photons(const LightStateSpec& s, URBG& g) {
  switch (s.kind) {
    case LightKind::Coherent: return detail::sample_poisson(s.mean_photons, g);
    case LightKind::Thermal: return detail::sample_bose_einstein(s.mean_photons, g);
    case LightKind::MultiThermal:
    case LightKind::TwinBeam:
      return detail::sample_multithermal(s.mean_photons, s.modes, g);
  }
  throw std::logic_error("unreachable light kind");
}

/// Binomial split of n photons; returns (port 1, port 2), n1 + n2 == n.
template <class URBG>
ShotPhotons split_at_bs(std::uint32_t n, const BeamSplitterSpec& bs, URBG& g) {
  if (n == 0) return {0, 0};
  std::uint32_t n1 = 0;
  if (bs.transmittance >= 1.0) {
    n1 = n;
  } else if (bs.transmittance > 0.0) {
    std::binomial_distribution<std::uint32_t> d(n, bs.transmittance);
    n1 = d(g);
  }
  return {n1, n - n1};
}

/// Twin-beam pulse: identical photon number in both arms.
template <class URBG>
ShotPhotons sample_twin_beam(const LightStateSpec& s, URBG& g) {
  const std::uint32_t n = detail::sample_multithermal(s.mean_photons, s.modes, g);
  return {n, n};
}

inline const char* light_kind_name(LightKind k) {
  switch (k) {
    case LightKind::Coherent: return "coherent";
    case LightKind::Thermal: return "thermal";
    case LightKind::MultiThermal: return "multithermal";
    case LightKind::TwinBeam: return "twinbeam";
  }
  return "?";
}

inline LightKind light_kind_from_name(const std::string& name) {
  if (name == "coherent") return LightKind::Coherent;
  if (name == "thermal") return LightKind::Thermal;
  if (name == "multithermal") return LightKind::MultiThermal;
  if (name == "twinbeam") return LightKind::TwinBeam;
  throw std::invalid_argument("unknown light kind: " + name);
}

}  // namespace sipmsim
