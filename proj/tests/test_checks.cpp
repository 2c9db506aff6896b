#include "doctest.h"
#include "ioss/checks.hpp"
#include "ioss/fixtures.hpp"
#include "ioss/linear.hpp"

#include <cmath>

using namespace ioss;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

KLFn exp_decay(double c = 1.0, double rate = 1.0) {
  return KLFn::decay(ComparisonFn::linear(c), 1.0 / rate);
}

BatteryPlan small_plan(double horizon = 8.0, std::uint64_t seed = 11) {
  BatteryPlan p;
  p.shells = 8;
  p.horizon = horizon;
  p.seed = seed;
  return p;
}

SystemModel input_no_output() {
  SystemDef d;
  d.name = "iss";
  d.n = 1;
  d.m_u = 1;
  d.p = 0;
  d.f = [](const Vec& x, const Vec& u, const Vec&) { return Vec(-x + u); };
  d.h = [](const Vec&) { return Vec(0); };
  return SystemModel(d);
}

EstimateSpec uoss(KLFn beta, ComparisonFn gamma2) {
  EstimateSpec s;
  s.kind = EstimateKind::UOSS;
  s.beta = beta;
  s.gamma2 = gamma2;
  return s;
}

}  // namespace

TEST_CASE("kind names round trip") {
  for (auto k : {EstimateKind::UIOSS, EstimateKind::UOSS, EstimateKind::GASMO,
                 EstimateKind::iiUOSS, EstimateKind::UO, EstimateKind::UiIOSS,
                 EstimateKind::UiIOSSsum, EstimateKind::Incremental})
    CHECK(estimate_kind_from_string(to_string(k)) == k);
  CHECK_THROWS(estimate_kind_from_string("ISS-ish"));
}

TEST_CASE("missing and ill-classed slots are rejected") {
  SystemModel s = make_fixture("scalar-decay");
  EstimateSpec e;
  e.kind = EstimateKind::UOSS;
  CHECK_THROWS_AS(e.validate(s), std::invalid_argument);
  e.beta = exp_decay();
  CHECK_THROWS_AS(e.validate(s), std::invalid_argument);
  e.gamma2 = ComparisonFn::identity();
  CHECK_NOTHROW(e.validate(s));

  EstimateSpec ii;
  ii.kind = EstimateKind::iiUOSS;
  ii.chi = ComparisonFn::sat_exp(1.0, 1.0);
  ii.kappa = ComparisonFn::identity();
  ii.gamma = ComparisonFn::identity();
  CHECK_THROWS_AS(ii.validate(s), std::invalid_argument);
}

TEST_CASE("battery expansion is seeded and covers the shells") {
  SystemModel s = make_fixture("scalar-input");
  BatteryPlan p = small_plan();
  auto a = expand_battery(s, p);
  auto b = expand_battery(s, p);
  REQUIRE(a.size() == 8 * 2 * 2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x0 == b[i].x0);
    CHECK(a[i].u.times() == b[i].u.times());
    int switches = static_cast<int>(a[i].u.breakpoints().size());
    CHECK(switches <= 4);
  }
  CHECK(a[0].u.values()[0].norm() == 0.0);
  p.seed = 12;
  auto c = expand_battery(s, p);
  CHECK(c[1].u.times() != a[1].u.times());
  CHECK(a.front().x0.norm() == doctest::Approx(0.01));
  CHECK(a.back().x0.norm() == doctest::Approx(10.0));
}

TEST_CASE("decay holds its exact UOSS estimate") {
  CheckReport r = check_estimate(make_fixture("scalar-decay"),
                                 uoss(exp_decay(), ComparisonFn::identity()), small_plan());
  CHECK(r.verdict == Verdict::HoldsOnSamples);
  CHECK(r.worst_margin >= 0.0);
  CHECK(r.trajectories == 16);
  CHECK(r.knots > 16);
}

TEST_CASE("the gated linear fixture is not OSS") {
  SystemModel s = make_fixture("example-6-3-sigma1");
  KLFn big = KLFn::decay(ComparisonFn::power_exp(1.0, 1.0, 2.0), 1.0, 1.0);
  for (const KLFn& beta : {exp_decay(), exp_decay(10.0, 0.1), big}) {
    for (double g : {1.0, 10.0, 1000.0}) {
      BatteryPlan p = small_plan(10.0);
      p.shells = 12;
      CheckReport r = check_estimate(s, uoss(beta, ComparisonFn::linear(g)), p);
      REQUIRE(r.verdict == Verdict::Falsified);
      REQUIRE(r.witness);
      const Witness& w = *r.witness;
      CHECK(std::abs(w.input.x0[0]) > 1.0);
      CHECK(w.lhs > w.rhs);
      TrajectoryVerdict again = replay_witness(s, uoss(beta, ComparisonFn::linear(g)), w,
                                               p.sim, 10.0);
      CHECK(again.margin < 0.0);
    }
  }
}

TEST_CASE("the gated linear fixture satisfies its integral estimate") {
  SystemModel s = make_fixture("example-6-3-sigma1");
  EstimateSpec e;
  e.kind = EstimateKind::UiIOSS;
  e.beta = KLFn::decay(ComparisonFn::power_exp(1.0, 1.0, 2.0), 1.0, 1.0);
  e.gamma2 = ComparisonFn::identity();
  e.gamma = ComparisonFn::power_exp(1.0, 1.0, 1.0);
  BatteryPlan p = small_plan(10.0);
  p.shells = 16;
  p.extra_states = {v1(0.95), v1(1.0), v1(1.05), v1(-1.1), v1(0.1)};
  CheckReport r = check_estimate(s, e, p);
  CHECK(r.verdict == Verdict::HoldsOnSamples);
}

TEST_CASE("integral estimate for the escaping cubic fixture") {
  SystemModel s = make_fixture("remark-3-10");
  auto kappa = ComparisonFn::linear(1.0 / (1.0 + kRemarkEps));
  BatteryPlan p = small_plan(4.0);
  p.shells = 20;
  p.r_min = 0.05;
  p.r_max = 5.0;
  p.extra_states = {v1(1.0), v1(1.1), v1(1.2), v1(1.21), v1(-1.3)};
  CheckReport r = check_iiuoss(s, ComparisonFn::identity(), kappa, ComparisonFn::identity(), p);
  CHECK(r.verdict == Verdict::HoldsOnSamples);
  CHECK(r.escaped > 10);
  CHECK(r.skipped == 0);

  CheckReport bad = check_iiuoss(s, ComparisonFn::linear(100.0), kappa,
                                 ComparisonFn::identity(), p);
  CHECK(bad.verdict == Verdict::Falsified);

  CheckReport lin = check_iiuoss(make_fixture("scalar-decay"), ComparisonFn::identity(),
                                 ComparisonFn::identity(), ComparisonFn::zero(), small_plan());
  CHECK(lin.verdict == Verdict::HoldsOnSamples);
}

TEST_CASE("GASMO margin") {
  ComparisonFn rho = gasmo_margin_from_uoss(KLFn::decay(ComparisonFn::linear(2.0)),
                                            ComparisonFn::identity());
  CHECK(rho(1.0) == doctest::Approx(8.08));
  KLFn b2 = KLFn::decay(ComparisonFn::linear(2.0));
  ComparisonFn rho2 = gasmo_margin_from_uoss(b2, ComparisonFn::power(1.0, 2.0));
  CHECK(rho2(1.0) == doctest::Approx(1.01 * std::max(b2(4.0, 0.0), 4.0)));
  CHECK(rho2.unbounded());

  for (const char* name : {"scalar-decay", "scalar-decay-blind"}) {
    SystemModel s = make_fixture(name);
    EstimateSpec g;
    g.kind = EstimateKind::GASMO;
    g.beta = exp_decay();
    g.rho = gasmo_margin_from_uoss(exp_decay(), ComparisonFn::identity());
    CHECK(check_estimate(s, g, small_plan()).verdict == Verdict::HoldsOnSamples);
  }
}

TEST_CASE("stability margin") {
  ComparisonFn phi = stability_margin(exp_decay(), ComparisonFn::identity());
  CHECK(phi(4.0) == doctest::Approx(0.99));
  ComparisonFn phi2 = stability_margin(exp_decay(), ComparisonFn::linear(2.0));
  CHECK(phi2(8.0) == doctest::Approx(0.99));
  CHECK_THROWS(stability_margin(exp_decay(), ComparisonFn::sat_exp(1.0, 1.0)));

  // x' = -x + u is UIOSS with beta = 2r e^{-t}, gamma1 = 2 id; the closed
  // loop with |u| <= phi(|x|) = 0.99 |x| / 16 decays at rate above 0.9.
  ComparisonFn phi3 = stability_margin(exp_decay(2.0), ComparisonFn::linear(2.0));
  CHECK(phi3(16.0) == doctest::Approx(0.99));
  SystemModel loop = close_robust_loop(make_fixture("scalar-input"), phi3);
  CheckReport r = check_estimate(loop, uoss(exp_decay(1.0, 0.5), ComparisonFn::zero()),
                                 small_plan());
  CHECK(r.verdict == Verdict::HoldsOnSamples);
}

TEST_CASE("output-free ISS estimate reads two slots") {
  SystemModel s = input_no_output();
  EstimateSpec e;
  e.kind = EstimateKind::UIOSS;
  // |x| <= |xi| e^{-t} + (1 - e^{-t}) ||u|| <= max{2|xi| e^{-t}, 2||u||}
  e.beta = exp_decay(2.0);
  e.gamma1 = ComparisonFn::linear(2.0);
  CHECK(e.slots_used(s) == 2);
  CheckReport r = check_estimate(s, e, small_plan());
  CHECK(r.metrics.at("gain_slots") == 2);
  CHECK(r.verdict == Verdict::HoldsOnSamples);
  e.gamma1 = ComparisonFn::linear(0.5);
  CHECK(check_estimate(s, e, small_plan()).verdict == Verdict::Falsified);
}

TEST_CASE("monotone gain inflation") {
  SystemModel s = make_fixture("scalar-input");
  EstimateSpec e;
  e.kind = EstimateKind::UIOSS;
  e.beta = exp_decay(2.0);
  e.gamma1 = ComparisonFn::linear(2.0);
  e.gamma2 = ComparisonFn::linear(0.1);
  BatteryPlan p = small_plan();
  CheckReport base = check_estimate(s, e, p);
  REQUIRE(base.verdict == Verdict::HoldsOnSamples);
  for (double c : {1.5, 4.0, 100.0}) {
    EstimateSpec big = e;
    big.beta = scale(c, *e.beta);
    big.gamma1 = scale(c, *e.gamma1);
    big.gamma2 = max(*e.gamma2, ComparisonFn::power(c, 2.0));
    CheckReport r = check_estimate(s, big, p);
    CHECK(r.verdict == Verdict::HoldsOnSamples);
    CHECK(r.worst_margin >= base.worst_margin);
  }
}

TEST_CASE("UOSS implies UO with the derived gains") {
  for (const char* name : {"scalar-decay", "scalar-disturbed"}) {
    SystemModel s = make_fixture(name);
    KLFn beta = exp_decay(1.0, 0.5);
    REQUIRE(check_estimate(s, uoss(beta, ComparisonFn::identity()), small_plan()).verdict ==
            Verdict::HoldsOnSamples);
    EstimateSpec uo;
    uo.kind = EstimateKind::UO;
    uo.rho1 = gasmo_margin_from_uoss(beta, ComparisonFn::identity());
    uo.chi2 = scale(2.0, max(beta.at_zero(), ComparisonFn::identity()));
    uo.chi1 = ComparisonFn::power(0.01, 3.0);
    uo.c = 0.0;
    CHECK(check_estimate(s, uo, small_plan()).verdict == Verdict::HoldsOnSamples);
  }
}

TEST_CASE("unboundedness observability is falsified by a silent escape") {
  SystemModel s = make_fixture("example-6-3-sigma1");
  EstimateSpec uo;
  uo.kind = EstimateKind::UO;
  uo.rho1 = ComparisonFn::linear(10.0);
  uo.chi1 = ComparisonFn::linear(10.0);
  uo.chi2 = ComparisonFn::linear(10.0);
  uo.c = 1.0;
  BatteryPlan p = small_plan(10.0);
  p.shells = 12;
  CHECK(check_estimate(s, uo, p).verdict == Verdict::Falsified);
}

TEST_CASE("incremental estimates") {
  SystemModel lin = make_fixture("linear-double-integrator");
  LinearSystem ls = double_integrator();
  QuadraticCertificate cert = synthesize_certificate(ls, Mat{{-2.0}, {-1.0}});
  LinearIossGains g = linear_ioss_gains(cert);
  EstimateSpec e;
  e.kind = EstimateKind::Incremental;
  e.beta = g.beta;
  e.gamma1 = g.gamma1;
  e.gamma2 = g.gamma2;

  BatteryPlan p = small_plan(10.0);
  p.shells = 6;
  p.directions = 3;
  CheckReport r = check_estimate(lin, e, p);
  CHECK(r.verdict == Verdict::HoldsOnSamples);

  auto pairs = expand_paired_battery(lin, p);
  std::vector<BatteryItem> same = pairs;
  for (auto& it : same) {
    it.x0_pair = it.x0;
    it.u_pair = it.u;
  }
  EstimateSpec tiny = e;
  tiny.beta = scale(1e-6, *e.beta);
  tiny.gamma1 = scale(1e-6, *e.gamma1);
  tiny.gamma2 = scale(1e-6, *e.gamma2);
  CheckReport zero = check_incremental(lin, tiny, same, p);
  CHECK(zero.verdict == Verdict::HoldsOnSamples);
  CHECK(check_incremental(lin, tiny, pairs, p).verdict == Verdict::Falsified);
  CHECK_THROWS(check_incremental(lin, tiny, expand_battery(lin, p), p));

  // The non-incremental UIOSS estimate with the same gains also holds.
  EstimateSpec plain = e;
  plain.kind = EstimateKind::UIOSS;
  CHECK(check_estimate(lin, plain, p).verdict == Verdict::HoldsOnSamples);
}

TEST_CASE("sum-form integral estimate") {
  // x' = -x + u: |x| <= |xi| e^{-t} + int |u|.
  SystemModel s = input_no_output();
  EstimateSpec e;
  e.kind = EstimateKind::UiIOSSsum;
  e.alpha_x = ComparisonFn::identity();
  e.beta = exp_decay();
  e.gamma1 = ComparisonFn::identity();
  CHECK(check_estimate(s, e, small_plan()).verdict == Verdict::HoldsOnSamples);
  e.gamma1 = ComparisonFn::linear(0.01);
  CHECK(check_estimate(s, e, small_plan()).verdict == Verdict::Falsified);
}

TEST_CASE("reports do not depend on the thread count") {
  SystemModel s = make_fixture("example-6-3-sigma1");
  BatteryPlan p = small_plan(10.0);
  p.shells = 12;
  EstimateSpec e = uoss(exp_decay(), ComparisonFn::linear(10.0));
  p.threads = 1;
  CheckReport a = check_estimate(s, e, p);
  p.threads = 4;
  CheckReport b = check_estimate(s, e, p);
  CHECK(a.worst_margin == b.worst_margin);
  CHECK(a.knots == b.knots);
  REQUIRE(a.witness);
  REQUIRE(b.witness);
  CHECK(a.witness->item == b.witness->item);
  CHECK(a.witness->t == b.witness->t);
}
