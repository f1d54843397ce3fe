#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "sipmsim/correlation.hpp"
#include "sipmsim/fit.hpp"
#include "sipmsim/stats.hpp"

using namespace sipmsim;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

NRFModelParams classical_balanced(double eps, double m1dc = 0.0, double m2dc = 0.0) {
  NRFModelParams p;
  p.eps1 = p.eps2 = eps;
  p.m1dc = m1dc;
  p.m2dc = m2dc;
  return p;
}

NRFModelParams fig_twin_params() {
  NRFModelParams p;
  p.mu = 9256.0;
  p.eta1 = p.eta2 = 0.182;
  p.eps1 = p.eps2 = 0.019;
  p.m1dc = 0.349;
  p.m2dc = 0.349;
  p.t = 0.913;
  p.quantum = true;
  return p;
}

}  // namespace

TEST_CASE("nrf statistic on hand-checkable shot lists") {
  const std::vector<double> same{3, 1, 4, 1, 5};
  CHECK(nrf_statistic(same, same) == 0.0);

  const std::vector<double> k1{2, 0, 2, 0};
  const std::vector<double> k2{0, 2, 0, 2};
  CHECK_THAT(nrf_statistic(k1, k2), WithinRel(8.0 / 3.0, 1e-12));
  CHECK_THAT(nrf_statistic(k1, k2, VarianceConvention::Population),
             WithinRel(2.0, 1e-12));

  CHECK(nrf_statistic(k1, k2) == nrf_statistic(k2, k1));

  CHECK_THROWS_AS(nrf_statistic({1, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(nrf_statistic({1}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(nrf_statistic({0, 0, 0}, {0, 0, 0}), std::invalid_argument);
}

TEST_CASE("independent Poisson arms give R = 1 within bootstrap error") {
  auto g = make_stream(11, stream::kShot, 0);
  std::poisson_distribution<int> pois(5.0);
  const std::size_t n = 100'000;
  std::vector<double> k1(n), k2(n);
  for (std::size_t i = 0; i < n; ++i) {
    k1[i] = pois(g);
    k2[i] = pois(g);
  }
  auto bg = make_stream(11, stream::kBootstrap, 0);
  const NRFPoint pt = noise_reduction(k1, k2, bg);
  REQUIRE(pt.sigma_R > 0.0);
  CHECK_THAT(pt.R, WithinAbs(1.0, 4.0 * pt.sigma_R));
  CHECK_THAT(pt.mean_k1, WithinAbs(5.0, 0.1));
  CHECK(pt.mean_k == pt.mean_k1);

  auto bg2 = make_stream(11, stream::kBootstrap, 0);
  const NRFPoint again = noise_reduction(k1, k2, bg2);
  CHECK(again.sigma_R == pt.sigma_R);
}

TEST_CASE("model R pins the worked examples") {
  SECTION("balanced ideal classical split is exactly 1") {
    const NRFModelParams p = classical_balanced(0.0);
    CHECK_THAT(model_R_general(p, 7.0, 7.0), WithinRel(1.0, 1e-12));
  }
  SECTION("quantum floor 1 - sqrt(eta1 eta2) at zero cross-talk and dark") {
    NRFModelParams p;
    p.quantum = true;
    p.eta1 = 0.2;
    p.eta2 = 0.2;
    CHECK_THAT(model_R_general(p, 4.0, 4.0), WithinRel(0.8, 1e-12));
    p.eta1 = 0.5;
    p.eta2 = 0.32;
    CHECK_THAT(model_R_general(p, 6.0, 6.0),
               WithinRel(1.0 - std::sqrt(0.5 * 0.32), 1e-12));
  }
  SECTION("balanced classical cross-talk adds 2 eps/(1+eps)") {
    const NRFModelParams p = classical_balanced(0.03);
    CHECK_THAT(model_R_general(p, 5.0, 5.0), WithinRel(1.0 + 0.06 / 1.03, 1e-12));
    CHECK_THAT(model_R_general(p, 5.0, 5.0), WithinAbs(1.0583, 5e-5));
  }
  SECTION("classical imbalance term in the balanced form") {
    NRFModelParams p;
    p.t = 0.9;
    CHECK_THAT(model_R_balanced(p, 10.0), WithinRel(1.0 + 0.01 / 1.9 * 10.0, 1e-12));
    CHECK_THAT(model_R_balanced(p, 10.0), WithinAbs(1.0526, 5e-5));
  }
  SECTION("twin-beam working point") {
    CHECK_THAT(model_R_balanced(fig_twin_params(), 11.0), WithinAbs(0.858, 1e-3));
  }
}

TEST_CASE("general and balanced forms agree on random parameter draws") {
  auto g = make_stream(23, stream::kShot, 0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    NRFModelParams p;
    p.mu = 1.0 + 9999.0 * u01(g);
    p.eta1 = 0.05 + 0.95 * u01(g);
    p.eta2 = 0.05 + 0.95 * u01(g);
    p.eps1 = 0.1 * u01(g);
    p.eps2 = 0.1 * u01(g);
    p.m1dc = 0.5 * u01(g);
    p.m2dc = 0.5 * u01(g);
    p.t = 0.5 + 0.5 * u01(g);
    p.quantum = trial % 2 == 0;
    const double k = 3.0 + 47.0 * u01(g);
    // k >= 3 and m <= 0.5 keep both square-root arguments positive
    CHECK_THAT(model_R_general(p, k, p.t * k), WithinRel(model_R_balanced(p, k), 1e-12));
  }
}

TEST_CASE("model invariances and domain errors") {
  SECTION("arm exchange symmetry") {
    NRFModelParams p;
    p.mu = 3.0;
    p.eta1 = 0.4;
    p.eta2 = 0.25;
    p.eps1 = 0.02;
    p.eps2 = 0.05;
    p.m1dc = 0.2;
    p.m2dc = 0.4;
    p.quantum = true;
    NRFModelParams q = p;
    std::swap(q.eta1, q.eta2);
    std::swap(q.eps1, q.eps2);
    std::swap(q.m1dc, q.m2dc);
    CHECK_THAT(model_R_general(p, 8.0, 6.0), WithinRel(model_R_general(q, 6.0, 8.0), 1e-12));
  }
  SECTION("classical R grows with cross-talk") {
    double prev = model_R_general(classical_balanced(0.0), 5.0, 5.0);
    for (double eps : {0.01, 0.03, 0.06, 0.10, 0.15}) {
      const double r = model_R_general(classical_balanced(eps), 5.0, 5.0);
      CHECK(r > prev);
      prev = r;
    }
  }
  SECTION("R stays nonnegative across the safe grid") {
    auto g = make_stream(29, stream::kShot, 0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
      NRFModelParams p;
      p.eta1 = u01(g);
      p.eta2 = u01(g);
      p.eps1 = 0.1 * u01(g);
      p.eps2 = 0.1 * u01(g);
      p.m1dc = 0.3 * u01(g);
      p.m2dc = 0.3 * u01(g);
      p.mu = 1.0 + 99.0 * u01(g);
      p.quantum = true;
      const double k = 2.0 + 30.0 * u01(g);
      CHECK(model_R_general(p, k, k) >= 0.0);
    }
  }
  SECTION("means below the dark floor are rejected in quantum mode") {
    NRFModelParams p;
    p.quantum = true;
    p.m1dc = 5.0;
    CHECK_THROWS_AS(model_R_general(p, 2.0, 2.0), std::invalid_argument);
    CHECK_THROWS_AS(model_R_balanced(p, 2.0), std::invalid_argument);
    p.quantum = false;  // classical form never evaluates the square roots
    CHECK_NOTHROW(model_R_general(p, 2.0, 2.0));
  }
  SECTION("parameter validation") {
    NRFModelParams p;
    p.mu = 0.0;
    CHECK_THROWS_AS(model_R_balanced(p, 5.0), std::invalid_argument);
    p = NRFModelParams{};
    p.t = 1.5;
    CHECK_THROWS_AS(model_R_balanced(p, 5.0), std::invalid_argument);
    p = NRFModelParams{};
    CHECK_THROWS_AS(model_R_general(p, 0.0, 1.0), std::invalid_argument);
  }
}

TEST_CASE("thermal light split 50:50 on ideal detectors gives R = 1") {
  FastPathConfig cfg;
  cfg.state.kind = LightKind::Thermal;
  cfg.bs.transmittance = 0.5;
  cfg.det1 = DetectorConfig{};
  cfg.det1.eta = 1.0;
  cfg.det1.dark_rate = 0.0;
  cfg.det1.eps_prompt = 0.0;
  cfg.det1.eps_delayed = 0.0;
  cfg.det2 = cfg.det1;
  cfg.gate = 100.0;
  cfg.shots_per_point = 60'000;
  cfg.seed = 31;
  const NRFCurve curve = simulate_R_curve(cfg, {10.0});
  REQUIRE(curve.points.size() == 1);
  const auto& pt = curve.points[0];
  REQUIRE(pt.sigma_R > 0.0);
  CHECK_THAT(pt.R, WithinAbs(1.0, 4.0 * pt.sigma_R));
  CHECK_THAT(pt.mean_k1, WithinAbs(5.0, 0.15));
  CHECK_THAT(pt.mean_k2, WithinAbs(5.0, 0.15));
}

TEST_CASE("twin beam through lossy detectors reaches the quantum floor") {
  FastPathConfig cfg;
  cfg.state.kind = LightKind::TwinBeam;
  cfg.state.modes = 100.0;
  cfg.det1 = DetectorConfig{};
  cfg.det1.eta = 0.2;
  cfg.det1.dark_rate = 0.0;
  cfg.det1.eps_prompt = 0.0;
  cfg.det1.eps_delayed = 0.0;
  cfg.det2 = cfg.det1;
  cfg.shots_per_point = 60'000;
  cfg.seed = 37;
  const NRFCurve curve = simulate_R_curve(cfg, {10.0});
  const auto& pt = curve.points[0];
  REQUIRE(pt.sigma_R > 0.0);
  CHECK_THAT(pt.R, WithinAbs(0.8, 4.0 * pt.sigma_R));
}

TEST_CASE("simulated classical curve with cross-talk and dark matches the model") {
  FastPathConfig cfg;
  cfg.state.kind = LightKind::Thermal;
  cfg.state.mean_photons = 20.0;
  cfg.bs.transmittance = 0.5;
  cfg.det1 = DetectorConfig{};
  cfg.det1.eta = 0.4;
  cfg.det1.eps_prompt = 0.03;
  cfg.det1.eps_delayed = 0.0;
  cfg.det1.dark_rate = 0.23 / 100e-9;
  cfg.det1.record_window = 100.0;
  cfg.det2 = cfg.det1;
  cfg.det2.dark_rate = 0.57 / 100e-9;
  cfg.gate = 100.0;
  cfg.shots_per_point = 80'000;
  cfg.seed = 41;
  const NRFCurve curve = simulate_R_curve(cfg, {20.0, 60.0});

  NRFModelParams p;
  p.eps1 = p.eps2 = 0.03;
  p.m1dc = 0.23;
  p.m2dc = 0.57;
  for (const auto& pt : curve.points) {
    REQUIRE(pt.sigma_R > 0.0);
    const double model = model_R_general(p, pt.mean_k1, pt.mean_k2);
    CHECK_THAT(pt.R, WithinAbs(model, 4.0 * pt.sigma_R));
  }
}

TEST_CASE("simulated twin-beam sweep follows the quantum model") {
  const NRFModelParams p = fig_twin_params();
  FastPathConfig cfg;
  cfg.state.kind = LightKind::TwinBeam;
  cfg.state.modes = p.mu;
  cfg.det1 = DetectorConfig{};
  cfg.det1.eta = p.eta1;
  cfg.det1.eps_prompt = p.eps1;
  cfg.det1.eps_delayed = 0.0;
  cfg.det1.record_window = 110.0;
  cfg.det1.dark_rate = p.m1dc / 110e-9;
  cfg.det2 = cfg.det1;
  // arm imbalance t realized through efficiency and dark rate
  cfg.det2.eta = p.t * p.eta1;
  cfg.det2.dark_rate = p.t * p.m1dc / 110e-9;
  cfg.gate = 110.0;
  cfg.shots_per_point = 80'000;
  cfg.seed = 43;

  std::vector<double> means;
  for (double target_k : {2.0, 11.0})
    means.push_back(source_mean_for_k(cfg.det1, target_k, cfg.gate));
  const NRFCurve curve = simulate_R_curve(cfg, means);

  std::vector<double> targets{2.0, 11.0};
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const auto& pt = curve.points[i];
    REQUIRE(pt.sigma_R > 0.0);
    CHECK_THAT(pt.mean_k1, WithinAbs(targets[i], 0.08));
    CHECK_THAT(pt.mean_k2 / pt.mean_k1, WithinAbs(p.t, 0.02));
    NRFModelParams q = p;
    q.m2dc = p.t * p.m1dc;  // dark scales with the realized imbalance
    const double model = model_R_general(q, pt.mean_k1, pt.mean_k2);
    CHECK_THAT(pt.R, WithinAbs(model, 4.0 * pt.sigma_R));
    CHECK(pt.R < 1.0);  // sub-shot-noise
  }
}

TEST_CASE("peak counting ignores delayed cross-talk in the fast path") {
  FastPathConfig cfg;
  cfg.state.kind = LightKind::Coherent;
  cfg.det1 = DetectorConfig{};
  cfg.det1.eta = 0.5;
  cfg.det1.dark_rate = 0.0;
  cfg.det1.eps_prompt = 0.0;
  cfg.det1.eps_delayed = 0.30;
  cfg.det1.ct_delay_tau = 5.0;
  cfg.det2 = cfg.det1;
  cfg.bs.transmittance = 0.5;
  cfg.shots_per_point = 40'000;
  cfg.seed = 47;

  cfg.mode = CountingMode::PeakCount;
  const auto peak = simulate_R_curve(cfg, {12.0});
  cfg.mode = CountingMode::GateCount;
  cfg.gate = 100.0;
  const auto gate = simulate_R_curve(cfg, {12.0});
  // delayed cross-talk inflates the gate count but not the peak count
  CHECK_THAT(peak.points[0].mean_k1, WithinAbs(3.0, 0.05));
  CHECK(gate.points[0].mean_k1 > 1.25 * peak.points[0].mean_k1);
}

TEST_CASE("fit recovers exact model parameters from a noiseless curve") {
  const NRFModelParams truth = fig_twin_params();
  NRFCurve curve;
  for (int k = 2; k <= 12; ++k) {
    NRFPoint pt;
    pt.mean_k = pt.mean_k1 = static_cast<double>(k);
    pt.mean_k2 = truth.t * pt.mean_k1;
    pt.R = model_R_balanced(truth, pt.mean_k);
    pt.sigma_R = 0.01;
    curve.points.push_back(pt);
  }

  FitSpec spec;
  spec.start = truth;
  spec.start.eps1 = spec.start.eps2 = 0.05;
  spec.start.m1dc = 0.10;
  spec.start.t = 0.70;
  spec.tie_eps = true;
  spec.free[fitidx::kEps1] = true;
  spec.free[fitidx::kM1dc] = true;
  spec.free[fitidx::kT] = true;
  spec.bounds[fitidx::kEps1] = {0.0, 0.1};
  spec.bounds[fitidx::kM1dc] = {0.0, 1.0};
  spec.bounds[fitidx::kT] = {0.5, 1.0};

  const FitResult res = fit_model(curve, spec);
  REQUIRE(res.converged);
  CHECK(res.n_free == 3);
  CHECK(res.chi2 < 1e-10);
  CHECK_THAT(res.params.eps1, WithinRel(truth.eps1, 1e-4));
  CHECK(res.params.eps2 == res.params.eps1);
  CHECK_THAT(res.params.m1dc, WithinRel(truth.m1dc, 1e-4));
  CHECK_THAT(res.params.t, WithinRel(truth.t, 1e-4));
}

TEST_CASE("fit pulls cross-talk out of a noisy classical curve") {
  NRFModelParams truth;
  truth.eps1 = truth.eps2 = 0.03;
  truth.m1dc = 0.23;
  truth.m2dc = 0.57;
  truth.t = 0.999;

  auto g = make_stream(53, stream::kNoise, 0);
  std::normal_distribution<double> noise(0.0, 0.01);
  NRFCurve curve;
  for (int k = 1; k <= 30; k += 2) {
    NRFPoint pt;
    pt.mean_k = pt.mean_k1 = static_cast<double>(k);
    pt.mean_k2 = truth.t * pt.mean_k1;
    pt.R = model_R_balanced(truth, pt.mean_k) + noise(g);
    pt.sigma_R = 0.01;
    curve.points.push_back(pt);
  }

  FitSpec spec;
  spec.start = NRFModelParams{};
  spec.start.t = 0.99;
  spec.tie_eps = true;
  spec.free[fitidx::kEps1] = true;
  spec.free[fitidx::kM1dc] = true;
  spec.free[fitidx::kM2dc] = true;
  spec.free[fitidx::kT] = true;
  spec.bounds[fitidx::kEps1] = {0.0, 0.2};
  spec.bounds[fitidx::kM1dc] = {0.0, 2.0};
  spec.bounds[fitidx::kM2dc] = {0.0, 2.0};
  spec.bounds[fitidx::kT] = {0.9, 1.0};

  const FitResult res = fit_model(curve, spec);
  REQUIRE(res.converged);
  CHECK(res.n_free == 4);
  CHECK_THAT(res.params.eps1, WithinAbs(truth.eps1, 0.2 * truth.eps1));
  CHECK(res.reduced_chi2 < 3.0);
}

TEST_CASE("underdetermined fit reports failure with the start point") {
  NRFCurve curve;
  NRFPoint pt;
  pt.mean_k = pt.mean_k1 = pt.mean_k2 = 5.0;
  pt.R = 1.05;
  pt.sigma_R = 0.01;
  curve.points.push_back(pt);

  FitSpec spec;
  spec.free[fitidx::kEps1] = true;
  spec.free[fitidx::kT] = true;
  spec.bounds[fitidx::kEps1] = {0.0, 0.2};
  spec.bounds[fitidx::kT] = {0.5, 1.0};

  const FitResult res = fit_model(curve, spec);
  CHECK_FALSE(res.converged);
  CHECK(res.n_points == 1);
  CHECK(std::isinf(res.reduced_chi2));
  CHECK(res.params.eps1 == 0.0);
  CHECK(res.params.t == 1.0);

  FitSpec none;
  CHECK_THROWS_AS(fit_model(curve, none), std::invalid_argument);
}
