#include "doctest.h"
#include "ioss/fixtures.hpp"
#include "ioss/observer.hpp"

#include <cmath>
#include <random>

using namespace ioss;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

// x' = -x + u, h = x with V = x^2/2, alpha = r^2/2, sigma1 = r^2/2.
LyapCandidate half_square() {
  return quadratic_candidate(Mat::Constant(1, 1, 0.5), ComparisonFn::power(0.5, 2.0),
                             ComparisonFn::power(0.5, 2.0), ComparisonFn::zero());
}

struct LinearSetup {
  SystemModel sys;
  LyapCandidate W;
  NormEstimator est;
};

LinearSetup linear_setup() {
  LinearSystem ls = double_integrator();
  QuadraticCertificate cert = synthesize_certificate(ls, Mat{{-2.0}, {-1.0}});
  Rescaled res = exp_decay_rescale(certificate_candidate(cert));
  return {to_model(ls, "linear-double-integrator"), res.W, build_estimator(res.W)};
}

BatteryPlan linear_plan() {
  BatteryPlan plan;
  plan.r_min = 0.05;
  plan.r_max = 3.0;
  plan.shells = 10;
  plan.directions = 5;
  plan.signals_per_state = 2;
  plan.horizon = 8.0;
  plan.seed = 7;
  return plan;
}

}  // namespace

TEST_CASE("estimator requires the exponential-decay form") {
  CHECK_THROWS_AS(build_estimator(half_square()), std::invalid_argument);
  // W = V^2 = x^4 / 4, so rho_est(s) = (8 s)^{1/4}.
  NormEstimator e = build_estimator(exp_decay_rescale(half_square()).W);
  for (double r : {1e-3, 0.1, 0.5, 1.0, 4.0}) {
    CHECK(e.alpha2(r) >= r);
    CHECK(e.rho_est(r) == doctest::Approx(std::pow(8.0 * r, 0.25)).epsilon(1e-6));
  }
}

TEST_CASE("coupled run keeps W below p plus the decaying initial gap") {
  SystemModel s = make_fixture("scalar-input");
  Rescaled res = exp_decay_rescale(half_square());
  NormEstimator e = build_estimator(res.W);
  Signal u = Signal::piecewise({0.0, 2.0, 4.5}, {v1(0.8), v1(-1.5), v1(0.3)});
  CoupledRun run = run_coupled(s, e, v1(1.0), 0.0, u, Signal::zero(0), 8.0);
  REQUIRE(run.plant.termination == Termination::HorizonReached);
  const double W0 = res.W.V(v1(1.0));
  for (std::size_t k = 0; k < run.p.size(); ++k) {
    double t = run.plant.times[k];
    CHECK(run.V[k] <= run.p[k] + std::exp(-t) * W0 + 1e-9);
  }
  GapCheck g = check_gap_decay(run, res.W);
  CHECK(g.violations == 0);
  CHECK(g.steps + 1 == run.plant.times.size());
}

TEST_CASE("zero drive keeps the estimator at zero") {
  SystemModel s = make_fixture("scalar-input");
  NormEstimator e = build_estimator(exp_decay_rescale(half_square()).W);
  CoupledRun run = run_coupled(s, e, v1(0.0), 0.0, Signal::zero(1), Signal::zero(0), 5.0);
  for (double p : run.p) CHECK(p == 0.0);
}

TEST_CASE("starting at p = V(x0) keeps V below p") {
  SystemModel s = make_fixture("scalar-input");
  Rescaled res = exp_decay_rescale(half_square());
  NormEstimator e = build_estimator(res.W);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  for (int k = 0; k < 8; ++k) {
    Vec x0 = v1(U(rng));
    Signal u = Signal::piecewise({0.0, 1.7}, {v1(U(rng)), v1(U(rng))});
    CoupledRun run = run_coupled(s, e, x0, res.W.V(x0), u, Signal::zero(0), 6.0);
    for (std::size_t i = 0; i < run.p.size(); ++i)
      CHECK(run.V[i] <= run.p[i] + 1e-9 * (1.0 + run.p[i]));
  }
}

TEST_CASE("scalar decay against variation of constants") {
  // x' = -x, h = x, V = x^2/2 with alpha = 2 r^2, sigma2 = r^2. The rescale
  // is the identity; with x0 = 1 and zeta = 0,
  // p(t) = int_0^t e^{-(t-s)} sigma_hat2(e^{-s}) ds.
  SystemModel s = make_fixture("scalar-decay");
  LyapCandidate c = quadratic_candidate(Mat::Constant(1, 1, 0.5), ComparisonFn::power(2.0, 2.0),
                                        ComparisonFn::zero(), ComparisonFn::power(1.0, 2.0));
  Rescaled res = exp_decay_rescale(c);
  for (double v = 0.01; v <= 10.0; v *= 1.7) CHECK(res.rho(v) == doctest::Approx(v).epsilon(1e-6));
  NormEstimator e = build_estimator(res.W);
  for (double r = 1e-3; r <= 3.0; r *= 1.4) CHECK(e.sigma2(r) >= 2.0 * r * r);

  CoupledRun run = run_coupled(s, e, v1(1.0), 0.0, Signal(), Signal::zero(0), 10.0);
  const double V1 = res.W.V(v1(1.0));
  for (std::size_t k = 0; k < run.p.size(); k += 3) {
    double t = run.plant.times[k];
    auto g = [&](double q) { return std::exp(-(t - q)) * e.sigma2(std::exp(-q)); };
    const int n = 4000;
    double p = 0.0;
    for (int i = 0; i < n; ++i) {
      double a = t * i / n, b = t * (i + 1) / n;
      p += (b - a) * (g(a) + 4.0 * g(0.5 * (a + b)) + g(b)) / 6.0;
    }
    CHECK(run.p[k] == doctest::Approx(p).epsilon(1e-5));
    CHECK(run.V[k] - run.p[k] <= std::exp(-t) * V1 + 1e-9);
  }
}

TEST_CASE("estimator alone is ISS in (u, y) and stays nonnegative") {
  SystemModel s = make_fixture("scalar-input");
  NormEstimator e = build_estimator(exp_decay_rescale(half_square()).W);
  BatteryPlan plan;
  plan.shells = 6;
  plan.r_max = 3.0;
  plan.horizon = 6.0;
  std::vector<BatteryItem> items = expand_battery(s, plan);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> Z(0.0, 3.0);
  for (const BatteryItem& it : items) {
    double zeta = Z(rng);
    CoupledRun run = run_coupled(s, e, it.x0, zeta, it.u, it.w, plan.horizon);
    double sup_u = 0.0, sup_y = 0.0;
    for (std::size_t k = 0; k < run.p.size(); ++k) {
      double t = run.plant.times[k];
      // The input is piecewise constant: the running sup includes the piece
      // that starts at t.
      sup_u = std::max(sup_u, it.u.at(t, t).norm());
      if (k > 0) sup_u = std::max(sup_u, it.u.at(t, 0.5 * (t + run.plant.times[k - 1])).norm());
      sup_y = std::max(sup_y, run.plant.outputs[k].norm());
      double bound = zeta * std::exp(-t) + e.sigma1(sup_u) + e.sigma2(sup_y);
      CHECK(run.p[k] >= 0.0);
      CHECK(run.p[k] <= bound + 1e-9 * (1.0 + bound));
    }
  }
}

TEST_CASE("linear fixture: estimator contract and the assembled UIOSS estimate") {
  LinearSetup L = linear_setup();
  BatteryPlan plan = linear_plan();
  REQUIRE(expand_battery(L.sys, plan).size() == 100);

  CheckReport contract = check_estimator_contract(L.sys, L.est, L.W, plan);
  CHECK(contract.verdict == Verdict::HoldsOnSamples);
  CHECK(contract.metrics["gap_violations"] == 0.0);
  CHECK(contract.metrics["bound_violations"] == 0.0);
  CHECK(contract.metrics["steps"] > 1000.0);

  CheckReport r = verify_estimator_implies_uioss(L.sys, L.est, plan);
  CHECK(r.verdict == Verdict::HoldsOnSamples);
  CHECK(r.check == "estimator-UIOSS");

  EstimateSpec shrunk = assembled_uioss_spec(L.est);
  shrunk.beta = scale(1e-3, *shrunk.beta);
  shrunk.gamma1 = scale(1e-3, *shrunk.gamma1);
  shrunk.gamma2 = scale(1e-3, *shrunk.gamma2);
  CHECK(check_estimate(L.sys, shrunk, plan).verdict == Verdict::Falsified);
}

TEST_CASE("corrupted estimator gains break the contract") {
  LinearSetup L = linear_setup();
  NormEstimator bad = L.est;
  bad.sigma1 = ComparisonFn::zero();
  bad.sigma2 = ComparisonFn::zero();
  BatteryPlan plan = linear_plan();
  CheckReport r = check_estimator_contract(L.sys, bad, L.W, plan);
  CHECK(r.verdict == Verdict::Falsified);
  CHECK(r.metrics["gap_violations"] > 0.0);
  REQUIRE(r.witness.has_value());
}

TEST_CASE("constant trajectories need beta(r, 0) >= r") {
  SystemDef d;
  d.name = "zero";
  d.n = 1;
  d.p = 1;
  d.f = [](const Vec&, const Vec&, const Vec&) { return Vec::Zero(1).eval(); };
  d.h = [](const Vec&) { return Vec::Zero(1).eval(); };
  SystemModel zero(std::move(d));

  // Storage bounds below the identity for r < 16.
  LyapCandidate c = quadratic_candidate(Mat::Constant(1, 1, 1.0 / 16.0),
                                        ComparisonFn::power(1.0 / 16.0, 2.0),
                                        ComparisonFn::zero(), ComparisonFn::zero());
  c.form = LyapCandidate::Form::Exponential;
  NormEstimator e = build_estimator(c);
  for (double r = 1e-3; r <= 100.0; r *= 1.5) CHECK(e.beta_est(r, 0.0) >= r);

  BatteryPlan plan;
  plan.shells = 6;
  plan.horizon = 1e-3;
  CHECK(verify_estimator_implies_uioss(zero, e, plan).verdict == Verdict::HoldsOnSamples);
}

TEST_CASE("assembled gains are monotone in the estimator gains") {
  LinearSetup L = linear_setup();
  NormEstimator big = L.est;
  big.sigma1 = scale(3.0, big.sigma1);
  big.sigma2 = scale(3.0, big.sigma2);
  EstimateSpec a = assembled_uioss_spec(L.est), b = assembled_uioss_spec(big);
  for (double r = 1e-3; r <= 10.0; r *= 1.3) {
    CHECK((*b.gamma1)(r) >= (*a.gamma1)(r));
    CHECK((*b.gamma2)(r) >= (*a.gamma2)(r));
  }
}
