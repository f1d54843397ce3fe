#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "sipmsim/correlation.hpp"
#include "sipmsim/rng.hpp"

// Weighted least-squares fit of the balanced R model to a measured
// R-vs-<k> curve. The optimizer is a box-clamped Nelder-Mead simplex with
// uniform random restarts inside the bounds; square-root domain violations
// of the quantum term enter the objective as penalties instead of throws so
// the simplex can walk back into range.

namespace sipmsim {

namespace fitidx {
inline constexpr std::size_t kMu = 0;
inline constexpr std::size_t kEta1 = 1;
inline constexpr std::size_t kEta2 = 2;
inline constexpr std::size_t kEps1 = 3;
inline constexpr std::size_t kEps2 = 4;
inline constexpr std::size_t kM1dc = 5;
inline constexpr std::size_t kM2dc = 6;
inline constexpr std::size_t kT = 7;
inline constexpr std::size_t kCount = 8;
}  // namespace fitidx

struct FitSpec {
  NRFModelParams start;  // starting point; also supplies every fixed value
  std::array<bool, fitidx::kCount> free{};  // which parameters float
  std::array<std::pair<double, double>, fitidx::kCount> bounds{};  // per free param
  bool tie_eps = false;  // eps2 follows eps1 (one shared cross-talk)

  std::size_t n_free() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < fitidx::kCount; ++i)
      if (free[i] && !(tie_eps && i == fitidx::kEps2)) ++c;
    return c;
  }
};

struct FitOptions {
  std::size_t restarts = 20;    // first start is FitSpec::start itself
  std::size_t max_iters = 4000;  // simplex iterations per restart
  double tol = 1e-12;           // relative spread of objective values
  std::uint64_t seed = 20260816;
};

struct FitResult {
  NRFModelParams params;
  double chi2 = std::numeric_limits<double>::infinity();
  double reduced_chi2 = std::numeric_limits<double>::infinity();
  std::size_t n_free = 0;
  std::size_t n_points = 0;
  std::size_t restarts_run = 0;
  std::size_t restarts_converged = 0;
  bool converged = false;  // false means fit-failed; params hold best-so-far
};

namespace detail {

inline double param_get(const NRFModelParams& p, std::size_t i) {
  switch (i) {
    case fitidx::kMu: return p.mu;
    case fitidx::kEta1: return p.eta1;
    case fitidx::kEta2: return p.eta2;
    case fitidx::kEps1: return p.eps1;
    case fitidx::kEps2: return p.eps2;
    case fitidx::kM1dc: return p.m1dc;
    case fitidx::kM2dc: return p.m2dc;
    case fitidx::kT: return p.t;
  }
  throw std::logic_error("bad parameter index");
}

inline void param_set(NRFModelParams& p, std::size_t i, double v) {
  switch (i) {
    case fitidx::kMu: p.mu = v; return;
    case fitidx::kEta1: p.eta1 = v; return;
    case fitidx::kEta2: p.eta2 = v; return;
    case fitidx::kEps1: p.eps1 = v; return;
    case fitidx::kEps2: p.eps2 = v; return;
    case fitidx::kM1dc: p.m1dc = v; return;
    case fitidx::kM2dc: p.m2dc = v; return;
    case fitidx::kT: p.t = v; return;
  }
  throw std::logic_error("bad parameter index");
}

struct FitProblem {
  const NRFCurve* curve;
  const FitSpec* spec;
  std::vector<std::size_t> idx;  // free parameter indices, tie target excluded
  std::vector<double> lo, hi;

  NRFModelParams assemble(const std::vector<double>& x) const {
    NRFModelParams p = spec->start;
    for (std::size_t j = 0; j < idx.size(); ++j) param_set(p, idx[j], x[j]);
    if (spec->tie_eps) p.eps2 = p.eps1;
    return p;
  }

  double operator()(const std::vector<double>& x) const {
    const NRFModelParams p = assemble(x);
    double chi2 = 0.0;
    double violation = 0.0;
    for (const auto& pt : curve->points) {
      if (!(pt.mean_k > 0.0)) continue;
      const double model = model_R_balanced_impl(p, pt.mean_k, &violation);
      const double sigma = pt.sigma_R > 0.0 ? pt.sigma_R : 1.0;
      const double r = (pt.R - model) / sigma;
      chi2 += r * r;
    }
    if (violation > 0.0) chi2 += 1e9 * (1.0 + violation);
    return chi2;
  }

  void clamp(std::vector<double>& x) const {
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = std::clamp(x[j], lo[j], hi[j]);
  }
};

// One Nelder-Mead run from x0; every candidate vertex is clamped into the box.
inline std::pair<std::vector<double>, double> nelder_mead(const FitProblem& f,
                                                          std::vector<double> x0,
                                                          std::size_t max_iters,
                                                          double tol, bool* converged) {
  const std::size_t d = x0.size();
  f.clamp(x0);
  std::vector<std::vector<double>> xs(d + 1, x0);
  for (std::size_t j = 0; j < d; ++j) {
    double h = 0.10 * (f.hi[j] - f.lo[j]);
    if (h == 0.0) h = 1e-8;
    xs[j + 1][j] = x0[j] + h <= f.hi[j] ? x0[j] + h : x0[j] - h;
    f.clamp(xs[j + 1]);
  }
  std::vector<double> fs(d + 1);
  for (std::size_t v = 0; v <= d; ++v) fs[v] = f(xs[v]);

  std::vector<std::size_t> order(d + 1);
  auto resort = [&] {
    for (std::size_t v = 0; v <= d; ++v) order[v] = v;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
  };
  std::vector<double> c(d), cand(d);
  *converged = false;
  for (std::size_t it = 0; it < max_iters; ++it) {
    resort();
    const std::size_t best = order[0], worst = order[d];
    const std::size_t second_worst = order[d - 1];
    if (std::abs(fs[worst] - fs[best]) <= tol * (1.0 + std::abs(fs[best]))) {
      *converged = true;
      break;
    }
    std::fill(c.begin(), c.end(), 0.0);
    for (std::size_t v = 0; v <= d; ++v) {
      if (v == worst) continue;
      for (std::size_t j = 0; j < d; ++j) c[j] += xs[v][j];
    }
    for (std::size_t j = 0; j < d; ++j) c[j] /= static_cast<double>(d);

    auto propose = [&](double coef) {
      for (std::size_t j = 0; j < d; ++j) cand[j] = c[j] + coef * (c[j] - xs[worst][j]);
      f.clamp(cand);
      return f(cand);
    };
    const double fr = propose(1.0);  // reflection
    if (fr < fs[order[0]]) {
      std::vector<double> xr = cand;
      const double fe = propose(2.0);  // expansion
      if (fe < fr) {
        xs[worst] = cand;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second_worst]) {
      xs[worst] = cand;
      fs[worst] = fr;
    } else {
      const double fc = propose(-0.5);  // contraction
      if (fc < fs[worst]) {
        xs[worst] = cand;
        fs[worst] = fc;
      } else {
        for (std::size_t v = 0; v <= d; ++v) {  // shrink toward the best vertex
          if (v == best) continue;
          for (std::size_t j = 0; j < d; ++j)
            xs[v][j] = xs[best][j] + 0.5 * (xs[v][j] - xs[best][j]);
          f.clamp(xs[v]);
          fs[v] = f(xs[v]);
        }
      }
    }
  }
  resort();
  return {xs[order[0]], fs[order[0]]};
}

}  // namespace detail

/// Fit the balanced R model to a curve. Returns converged == false when the
/// curve cannot determine the free parameters or no restart met the
/// tolerance; the result then carries the best point seen.
inline FitResult fit_model(const NRFCurve& curve, const FitSpec& spec,
                           const FitOptions& opts = {}) {
  spec.start.validate();
  detail::FitProblem prob;
  prob.curve = &curve;
  prob.spec = &spec;
  for (std::size_t i = 0; i < fitidx::kCount; ++i) {
    if (!spec.free[i]) continue;
    if (spec.tie_eps && i == fitidx::kEps2) continue;
    const auto [lo, hi] = spec.bounds[i];
    if (!(lo < hi)) throw std::invalid_argument("fit_model: bounds must have lo < hi");
    prob.idx.push_back(i);
    prob.lo.push_back(lo);
    prob.hi.push_back(hi);
  }
  const std::size_t d = prob.idx.size();
  if (d == 0) throw std::invalid_argument("fit_model: no free parameters");

  FitResult res;
  res.n_free = d;
  res.n_points = curve.points.size();

  std::vector<double> x0(d);
  for (std::size_t j = 0; j < d; ++j)
    x0[j] = detail::param_get(spec.start, prob.idx[j]);
  prob.clamp(x0);

  if (curve.points.size() < d + 1) {  // underdetermined: report, do not optimize
    res.params = prob.assemble(x0);
    res.chi2 = prob(x0);
    res.reduced_chi2 = std::numeric_limits<double>::infinity();
    res.converged = false;
    return res;
  }

  std::vector<double> best_x = x0;
  double best_f = std::numeric_limits<double>::infinity();
  bool any_converged = false;
  for (std::size_t r = 0; r < std::max<std::size_t>(opts.restarts, 1); ++r) {
    std::vector<double> start = x0;
    if (r > 0) {
      auto g = make_stream(opts.seed, stream::kFit, r);
      for (std::size_t j = 0; j < d; ++j) {
        std::uniform_real_distribution<double> u(prob.lo[j], prob.hi[j]);
        start[j] = u(g);
      }
    }
    bool run_converged = false;
    auto [x, fval] = detail::nelder_mead(prob, start, opts.max_iters, opts.tol,
                                         &run_converged);
    if (fval < best_f) {
      best_f = fval;
      best_x = x;
    }
    ++res.restarts_run;
    if (run_converged) ++res.restarts_converged;
    any_converged = any_converged || run_converged;
  }

  res.params = prob.assemble(best_x);
  res.chi2 = best_f;
  const std::size_t dof = curve.points.size() > d ? curve.points.size() - d : 1;
  res.reduced_chi2 = best_f / static_cast<double>(dof);
  res.converged = any_converged && best_f < 1e9;  // penalized minima are failures
  return res;
}

}  // namespace sipmsim
