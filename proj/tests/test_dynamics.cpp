#include "doctest.h"
#include "ioss/dynamics.hpp"
#include "ioss/fixtures.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace ioss;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

std::vector<double> abs_states(const Trajectory& tr) {
  std::vector<double> a;
  for (const Vec& x : tr.states) a.push_back(x.norm());
  return a;
}

}  // namespace

TEST_CASE("fixture registry") {
  for (const auto& name : fixture_names()) {
    SystemModel s = make_fixture(name);
    CHECK(s.name() == name);
  }
  CHECK_THROWS(make_fixture("no-such-system"));
  CHECK(make_fixture("example-6-3-sigma2").waiver() != "");
}

TEST_CASE("registration rejects systems without an equilibrium at the origin") {
  SystemDef d;
  d.name = "drift";
  d.n = 1;
  d.m_w = 1;
  d.p = 1;
  d.f = [](const Vec&, const Vec&, const Vec& w) { return Vec(w); };
  d.h = [](const Vec& x) { return x; };
  CHECK_THROWS_AS(SystemModel{d}, std::invalid_argument);
  SystemDef e = d;
  e.f = [](const Vec& x, const Vec&, const Vec&) { return Vec(-x); };
  e.h = [](const Vec& x) { return Vec(x.array() + 1.0); };
  CHECK_THROWS_AS(SystemModel{e}, std::invalid_argument);
}

TEST_CASE("hypercube samples") {
  CHECK(hypercube_samples(0).size() == 1);
  CHECK(hypercube_samples(1).size() == 3);
  CHECK(hypercube_samples(2).size() == 9);
  for (const Vec& w : hypercube_samples(3)) CHECK(w.lpNorm<Eigen::Infinity>() <= 1.0);
}

TEST_CASE("finite escape of the cubic fixture") {
  SystemModel s = make_fixture("remark-3-10");
  Trajectory tr = simulate(s, v1(2.0), Signal::zero(0), Signal::zero(0), 1.0);
  REQUIRE(tr.termination == Termination::FiniteEscape);
  CHECK(std::abs(tr.t_escape - 0.125) <= 1e-3);
  CHECK(tr.states.back().norm() >= 1e9);
  CHECK(std::abs(oracle::trapezoid(tr.times, abs_states(tr)) - 0.5) <= 1e-2);
  for (std::size_t k = 1; k < tr.times.size(); ++k) CHECK(tr.times[k] > tr.times[k - 1]);
  for (const Vec& x : tr.states) CHECK(x.allFinite());
}

TEST_CASE("closed-form runs") {
  Trajectory a = simulate(make_fixture("scalar-decay"), v1(1.0), Signal::zero(0),
                          Signal::zero(0), 5.0);
  CHECK(a.termination == Termination::HorizonReached);
  CHECK(a.times.back() == 5.0);
  CHECK(std::abs(a.states.back()[0] - std::exp(-5.0)) <= 1e-8);

  Trajectory b = simulate(make_fixture("example-6-3-sigma2"), v1(1.0), Signal::zero(0),
                          Signal::zero(0), 2.0);
  CHECK(std::abs(b.states.back()[0] - std::exp(2.0)) <= 1e-6);

  // x' = -x + u, u = 1 on [0,1), 0 afterwards.
  Signal u = Signal::piecewise({0.0, 1.0}, {v1(1.0), v1(0.0)});
  Trajectory c = simulate(make_fixture("scalar-input"), v1(0.0), u, Signal::zero(0), 3.0);
  double x1 = 1.0 - std::exp(-1.0);
  CHECK(std::abs(c.states.back()[0] - x1 * std::exp(-2.0)) <= 1e-9);
  bool has_switch = false;
  for (double t : c.times) has_switch |= (t == 1.0);
  CHECK(has_switch);
}

TEST_CASE("sigma1 grows like the comparison system outside the gate") {
  for (double xi : {1.2, 2.0, 3.5}) {
    Trajectory a = simulate(make_fixture("example-6-3-sigma1"), v1(xi), Signal::zero(0),
                            Signal::zero(0), 2.0);
    CHECK(std::abs(a.states.back()[0] - xi * std::exp(2.0)) <= 1e-6 * xi * std::exp(2.0));
  }
  // Inside the unit interval the state decays.
  Trajectory b = simulate(make_fixture("example-6-3-sigma1"), v1(0.95), Signal::zero(0),
                          Signal::zero(0), 20.0);
  CHECK(std::abs(b.states.back()[0]) < 0.95);
}

TEST_CASE("set entry is located by bisection on the step") {
  SimOptions o;
  o.stop = StopSet{"half", [](const Vec& x) { return x.norm() <= 0.5; }};
  Trajectory tr = simulate(make_fixture("scalar-decay"), v1(1.0), Signal::zero(0),
                           Signal::zero(0), 5.0, o);
  REQUIRE(tr.termination == Termination::EnteredSet);
  CHECK(tr.set_id == "half");
  CHECK(std::abs(tr.t_entry - std::log(2.0)) <= 1e-8);
}

TEST_CASE("halving the tolerance moves terminal states within the declared bound") {
  for (const auto& name : {"scalar-decay", "example-6-3-sigma1", "scalar-input",
                           "linear-double-integrator", "scalar-disturbed"}) {
    SystemModel s = make_fixture(name);
    Vec x0 = Vec::Constant(s.n(), 0.7);
    Signal u = s.m_u() ? Signal::piecewise({0.0, 0.5}, {Vec::Constant(s.m_u(), 1.0),
                                                        Vec::Constant(s.m_u(), -0.5)})
                       : Signal::zero(0);
    Signal w = s.m_w() ? Signal::piecewise({0.0, 0.3}, {Vec::Constant(s.m_w(), 1.0),
                                                        Vec::Constant(s.m_w(), -1.0)})
                       : Signal::zero(0);
    SimOptions a, b;
    a.ode.rtol = 1e-8;
    a.ode.atol = 1e-10;
    b.ode.rtol = 0.5e-8;
    b.ode.atol = 0.5e-10;
    Trajectory ta = simulate(s, x0, u, w, 3.0, a);
    Trajectory tb = simulate(s, x0, u, w, 3.0, b);
    double scale = 1.0 + ta.states.back().norm();
    CHECK((ta.states.back() - tb.states.back()).norm() <= 1e-6 * scale);
  }
}

TEST_CASE("robust loop closure") {
  SystemModel s = make_fixture("scalar-input");
  SystemModel g = close_robust_loop(s, ComparisonFn::linear(0.5));
  CHECK(g.m_u() == 0);
  CHECK(g.m_w() == 1);
  CHECK(g.f(v1(2.0), Vec(0), v1(1.0))[0] == doctest::Approx(-1.0));
  for (double x : {-2.0, 0.3, 4.0})
    CHECK(g.f(v1(x), Vec(0), v1(0.0))[0] == s.f(v1(x), v1(0.0), Vec(0))[0]);
}

TEST_CASE("slowed system") {
  SystemDef d;
  d.name = "expanding";
  d.n = 1;
  d.f = [](const Vec& x, const Vec&, const Vec&) { return Vec(x); };
  d.h = [](const Vec&) { return Vec(0); };
  SystemModel s(d);
  SystemModel z = slow_system(s, [](const Vec&) { return 0.0; });
  CHECK(z.f(v1(3.0), Vec(0), Vec(0))[0] == doctest::Approx(0.3));

  SystemDef still = d;
  still.f = [](const Vec& x, const Vec&, const Vec&) { return Vec(Vec::Zero(x.size())); };
  SystemModel zs = slow_system(SystemModel(still), [](const Vec&) { return 1.0; });
  CHECK(zs.f(v1(5.0), Vec(0), Vec(0))[0] == 0.0);

  CHECK_THROWS_AS(slow_system(s, [](const Vec&) { return -1.0; }), std::domain_error);
  SystemModel late = slow_system(s, [](const Vec& x) { return x[0] > 1.0 ? -1.0 : 0.0; });
  CHECK_THROWS_AS(late.f(v1(2.0), Vec(0), Vec(0)), std::domain_error);

  for (double x = -20; x <= 20; x += 0.5)
    CHECK(std::abs(z.f(v1(x), Vec(0), Vec(0))[0]) <= 1.0);
}

// Time change: with sigma' = 1 + |f|^2 + kappa along the fast trajectory,
// the slowed trajectory at sigma(t) coincides with the fast one at t.
TEST_CASE("slowed remark fixture is a reparametrization and does not escape") {
  SystemModel s = make_fixture("remark-3-10");
  auto kappa = [](const Vec& x) { return 0.1 * x.squaredNorm(); };
  SystemModel z = slow_system(s, kappa);
  Trajectory slow = simulate(z, v1(2.0), Signal::zero(0), Signal::zero(0), 50.0);
  CHECK(slow.termination == Termination::HorizonReached);

  OdeRhs aug = [&](double, double, const Vec& q, Vec& dq) {
    Vec x = q.head(1);
    Vec fx = s.f(x, Vec(0), Vec(0));
    dq.resize(2);
    dq[0] = fx[0];
    dq[1] = 1.0 + fx.squaredNorm() + kappa(x);
  };
  Vec q0(2);
  q0 << 2.0, 0.0;
  OdeOptions o;
  o.rtol = 1e-11;
  o.atol = 1e-13;
  auto norm0 = [](const Vec& q) { return std::abs(q[0]); };
  OdeSolution fast = integrate(aug, q0, 0.1249, {}, o, norm0);
  REQUIRE(fast.termination == Termination::HorizonReached);
  std::size_t usable = 0;
  while (usable < fast.t.size() && fast.x[usable][1] <= 50.0) ++usable;
  REQUIRE(usable >= 6);
  int probes = 0;
  for (std::size_t k = usable / 6; k < usable; k += usable / 6) {
    double sigma = fast.x[k][1];
    SimOptions so;
    so.ode = o;
    Trajectory zt = simulate(z, v1(2.0), Signal::zero(0), Signal::zero(0), sigma, so);
    double xf = fast.x[k][0];
    CHECK(std::abs(zt.states.back()[0] - xf) <= 1e-6 * (1.0 + std::abs(xf)));
    ++probes;
  }
  CHECK(probes >= 3);
}

TEST_CASE("default kappa") {
  SystemModel blind = make_fixture("scalar-decay-blind");
  auto k0 = default_kappa(blind, ComparisonFn::identity());
  for (double x = -5; x <= 5; x += 0.25) CHECK(k0(v1(x)) == 0.0);

  SystemDef d;
  d.name = "pure-disturbance";
  d.n = 1;
  d.m_w = 1;
  d.p = 1;
  d.f = [](const Vec&, const Vec&, const Vec& w) { return Vec(w); };
  d.h = [](const Vec& x) { return x; };
  d.zero_check_waiver = "test system with f(x,d) = d";
  SystemModel pd(d);
  auto k1 = default_kappa(pd, ComparisonFn::identity());
  for (double x : {-4.0, -1.0, 1.0, 1.5, 3.0}) CHECK(k1(v1(x)) >= 2.0);
  CHECK(k1(v1(0.25)) == 0.0);

  SystemModel s1 = make_fixture("example-6-3-sigma1");
  auto k2 = default_kappa(s1, ComparisonFn::linear(3.0));
  for (double x = -6; x <= 6; x += 0.05) {
    double k = k2(v1(x));
    CHECK(std::isfinite(k));
    CHECK(k >= 0.0);
  }
}
