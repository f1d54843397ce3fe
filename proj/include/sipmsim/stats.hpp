#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace sipmsim {

struct SampleMoments {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased (n-1) unless n < 2
  double m4 = 0.0;        // central fourth moment (biased), for SE of variance
};

inline SampleMoments sample_moments(const std::vector<double>& x) {
  SampleMoments r;
  r.n = x.size();
  if (r.n == 0) return r;
  double s = 0.0;
  for (double v : x) s += v;
  r.mean = s / static_cast<double>(r.n);
  double s2 = 0.0, s4 = 0.0;
  for (double v : x) {
    const double d = v - r.mean;
    s2 += d * d;
    s4 += d * d * d * d;
  }
  r.variance = r.n > 1 ? s2 / static_cast<double>(r.n - 1) : 0.0;
  r.m4 = s4 / static_cast<double>(r.n);
  return r;
}

inline double mean_of(const std::vector<double>& x) { return sample_moments(x).mean; }

/// Standard error of the unbiased sample variance, sqrt((m4 - s^4)/n).
/// Valid for any distribution with finite fourth moment.
inline double variance_standard_error(const SampleMoments& m) {
  if (m.n < 2) return 0.0;
  const double v2 = m.variance * m.variance;
  double arg = (m.m4 - v2) / static_cast<double>(m.n);
  return arg > 0.0 ? std::sqrt(arg) : 0.0;
}

inline double median_of(std::vector<double> x) {
  if (x.empty()) throw std::invalid_argument("median of empty range");
  std::size_t mid = x.size() / 2;
  std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid), x.end());
  double hi = x[mid];
  if (x.size() % 2 == 1) return hi;
  std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid) - 1, x.end());
  return 0.5 * (x[mid - 1] + hi);
}

}  // namespace sipmsim
