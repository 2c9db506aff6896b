#include "doctest.h"
#include "ioss/fixtures.hpp"
#include "ioss/lyapunov.hpp"

#include <cmath>
#include <random>

using namespace ioss;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

// x' = -x + u, h = x, V = x^2/2 with alpha = r^2/2, sigma1 = r^2/2, sigma2 = 0.
LyapCandidate half_square(ComparisonFn alpha = ComparisonFn::power(0.5, 2.0),
                          ComparisonFn sigma1 = ComparisonFn::power(0.5, 2.0)) {
  return quadratic_candidate(Mat::Constant(1, 1, 0.5), alpha, sigma1, ComparisonFn::zero());
}

DissipationGrid scalar_grid(double xw = 5.0, double uw = 5.0, int nx = 201, int nu = 101) {
  return {box_grid(1, xw, nx), box_grid(1, uw, nu), {}};
}

}  // namespace

TEST_CASE("grids") {
  CHECK(box_grid(2, 1.0, 5).size() == 25);
  CHECK(box_grid(0, 1.0, 5).size() == 1);
  auto b = ball_grid(2, 1.0, 21);
  for (const Vec& u : b) CHECK(u.norm() <= 1.0 + 1e-12);
  CHECK(b.size() < 21 * 21);
  CHECK(ball_grid(1, 2.0, 5).size() == 5);
}

TEST_CASE("completing the square") {
  SystemModel s = make_fixture("scalar-input");
  LyapCandidate c = half_square();
  CheckReport r = verify_dissipation(s, c, scalar_grid());
  CHECK(r.verdict == Verdict::HoldsOnSamples);
  // Equality on the locus x = u, which the lattice contains.
  CHECK(std::abs(r.worst_margin) <= 1e-12);
  CHECK(r.skipped == 1);  // the origin
  CHECK(check_bounds(c, box_grid(1, 5.0, 101)).verdict == Verdict::HoldsOnSamples);
  CHECK(gradient_mismatch(c, box_grid(1, 5.0, 101)) <= 1e-4);
}

TEST_CASE("inflated decay rate is falsified near the balance locus") {
  SystemModel s = make_fixture("scalar-input");
  LyapCandidate c = half_square(ComparisonFn::power(5.0, 2.0));
  CheckReport r = verify_dissipation(s, c, scalar_grid());
  REQUIRE(r.verdict == Verdict::Falsified);
  // Slack of -x^2 + xu + 5x^2 - u^2/2 = 4x^2 + xu - u^2/2 is most negative
  // for |x| small against |u|; the explicit scan agrees with the report.
  double worst = std::numeric_limits<double>::infinity();
  for (const Vec& x : box_grid(1, 5.0, 201)) {
    if (x.norm() < 1e-6) continue;
    for (const Vec& u : box_grid(1, 5.0, 101)) {
      double xs = x[0], us = u[0];
      worst = std::min(worst, -5.0 * xs * xs + 0.5 * us * us - (-xs * xs + xs * us));
    }
  }
  CHECK(r.worst_margin == doctest::Approx(worst).epsilon(1e-12));
  const Witness& w = *r.witness;
  CHECK(w.lhs > w.rhs);
}

TEST_CASE("linear certificate dissipation") {
  LinearSystem ls = double_integrator();
  QuadraticCertificate cert = synthesize_certificate(ls, Mat{{-2.0}, {-1.0}});
  SystemModel s = to_model(ls, "linear-double-integrator");
  LyapCandidate c = certificate_candidate(cert);
  DissipationGrid g{box_grid(2, 3.0, 41), box_grid(1, 3.0, 9), {}};
  CheckReport r = verify_dissipation(s, c, g);
  CHECK(r.verdict == Verdict::HoldsOnSamples);
  CHECK(r.worst_margin >= -1e-9);
  CHECK(r.knots >= 10000);

  LyapCandidate hot = c;
  hot.alpha = scale(10.0, c.alpha);
  CHECK(verify_dissipation(s, hot, g).verdict == Verdict::Falsified);
}

TEST_CASE("integrated dissipation along trajectories") {
  LinearSystem ls = double_integrator();
  QuadraticCertificate cert = synthesize_certificate(ls, Mat{{-2.0}, {-1.0}});
  SystemModel s = to_model(ls, "linear-double-integrator");
  LyapCandidate c = certificate_candidate(cert);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  for (int k = 0; k < 10; ++k) {
    Vec x0(2);
    x0 << U(rng), U(rng);
    Signal u = Signal::piecewise({0.0, 1.3, 2.9}, {v1(U(rng)), v1(U(rng)), v1(U(rng))});
    Trajectory tr = simulate(s, x0, u, Signal::zero(0), 6.0);
    // Integrate piecewise so the trapezoid rule does not straddle switches.
    double budget = 0.0;
    for (std::size_t i = 1; i < tr.times.size(); ++i) {
      double mid = 0.5 * (tr.times[i] + tr.times[i - 1]);
      double um = u(mid).norm();
      double a = -c.alpha(tr.states[i - 1].norm()) + c.sigma1(um) + c.sigma2(tr.outputs[i - 1].norm());
      double b = -c.alpha(tr.states[i].norm()) + c.sigma1(um) + c.sigma2(tr.outputs[i].norm());
      budget += 0.5 * (a + b) * (tr.times[i] - tr.times[i - 1]);
    }
    double dV = c.V(tr.states.back()) - c.V(x0);
    CHECK(dV <= budget + 1e-6 * (1.0 + std::abs(budget)));
  }
}

TEST_CASE("dissipation implies the integral estimate with chi = alpha3, kappa = alpha2") {
  // x' = -x, h = x, V = x^2/2: grad V . f = -x^2 <= -alpha3(|x|) + gamma(|h|)
  // with alpha3 = r^2, gamma = 0.
  SystemModel s = make_fixture("scalar-decay");
  LyapCandidate c = quadratic_candidate(Mat::Constant(1, 1, 0.5), ComparisonFn::power(1.0, 2.0),
                                        ComparisonFn::zero(), ComparisonFn::zero());
  REQUIRE(verify_dissipation(s, c, {box_grid(1, 5.0, 201), {}, {}}).verdict ==
          Verdict::HoldsOnSamples);
  BatteryPlan p;
  p.shells = 10;
  p.horizon = 10.0;
  CheckReport r = check_iiuoss(s, c.alpha, c.alpha2, ComparisonFn::identity(), p);
  CHECK(r.verdict == Verdict::HoldsOnSamples);
}

TEST_CASE("reconstruction from the implication form") {
  SystemModel s = make_fixture("scalar-input");
  LyapCandidate c = half_square();
  c.chi1 = ComparisonFn::linear(2.0);
  c.sigma1 = ComparisonFn::zero();
  ReconstructOptions o;
  o.r_max = 5.0;
  Reconstruction rec = remark23_reconstruct(s, c, o);
  CHECK_FALSE(rec.candidate.chi1.has_value());
  // Brute-force oracle at resolution 200^2 for the raw maxima.
  for (std::size_t k = 1; k < rec.r.size(); k += 6) {
    double r = rec.r[k], best = -1e300;
    for (int i = 0; i < 200; ++i)
      for (int j = 0; j < 200; ++j) {
        double x = -2.0 * r + 4.0 * r * i / 199.0, u = -r + 2.0 * r * j / 199.0;
        best = std::max(best, x * (-x + u) + 0.5 * (2.0 * std::abs(u)) * (2.0 * std::abs(u)));
      }
    CHECK(rec.sigma_hat[k] >= best - 1e-9 * (1 + best));
    CHECK(rec.sigma_hat[k] == doctest::Approx(2.25 * r * r).epsilon(1e-3));
  }
  CHECK(verify_dissipation(s, rec.candidate, scalar_grid()).verdict == Verdict::HoldsOnSamples);
  for (double r = 0.0; r <= 5.0; r += 0.01)
    CHECK(rec.candidate.sigma1(r) >= 2.25 * r * r * (1 - 1e-9));

  LyapCandidate z = c;
  z.chi1 = ComparisonFn::zero();
  Reconstruction zr = remark23_reconstruct(s, z, o);
  CHECK(zr.candidate.sigma1.is_zero());
  CHECK_FALSE(zr.flags.empty());

  LyapCandidate d = quadratic_candidate(Mat::Constant(1, 1, 0.5), ComparisonFn::power(0.5, 2.0),
                                        ComparisonFn::zero(), ComparisonFn::zero());
  d.chi1 = ComparisonFn::identity();
  Reconstruction dr = remark23_reconstruct(make_fixture("scalar-decay"), d, o);
  CHECK(dr.candidate.sigma1.is_zero());
}

TEST_CASE("rescaling function closed forms") {
  ComparisonFn rho = rescaling_function(ComparisonFn::identity());
  for (double r = 0.01; r <= 10.0; r *= 1.07) CHECK(std::abs(rho(r) - r * r) <= 1e-6);
  ComparisonFn rho2 = rescaling_function(ComparisonFn::linear(2.0));
  for (double r = 0.01; r <= 10.0; r *= 1.07) CHECK(rho2(r) == doctest::Approx(r).epsilon(1e-9));
  // a = min(r^1.5, r): log rho = -4 (r^{-1/2} - 1) below 1, rho = r^2 above.
  ComparisonFn rho3 = rescaling_function(min(ComparisonFn::power(1.0, 1.5), ComparisonFn::identity()));
  for (int j = -40; j <= 32; ++j) {
    double r = std::pow(10.0, j / 32.0);
    double exact = r <= 1.0 ? std::exp(-4.0 * (1.0 / std::sqrt(r) - 1.0)) : r * r;
    CHECK(rho3(r) == doctest::Approx(exact).epsilon(1e-8));
  }
  CHECK_THROWS_AS(rescaling_function(ComparisonFn::zero()), std::domain_error);
}

TEST_CASE("exponential-decay rescale") {
  SystemModel s = make_fixture("scalar-input");
  Rescaled res = exp_decay_rescale(half_square());
  for (double r = 0.01; r <= 10.0; r *= 1.1) CHECK(std::abs(res.rho(r) - r * r) <= 1e-6);
  CheckReport r = verify_dissipation(s, res.W, scalar_grid(5.0, 3.0));
  CHECK(r.verdict == Verdict::HoldsOnSamples);
  CHECK(r.worst_margin >= -1e-6);
  CHECK(gradient_mismatch(res.W, box_grid(1, 4.0, 41)) <= 1e-4);
  CHECK_THROWS(exp_decay_rescale(res.W));

  // W along simulated runs: W(x(t)) <= e^{-t} W(x0) + int e^{-(t-s)} sigma_hat1(|u|) ds.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  for (int k = 0; k < 10; ++k) {
    double x0 = U(rng), u0 = U(rng), u1 = U(rng);
    Signal u = Signal::piecewise({0.0, 1.5}, {v1(u0), v1(u1)});
    Trajectory tr = simulate(s, v1(x0), u, Signal::zero(0), 4.0);
    double t_end = tr.times.back();
    auto drive = [&](double t) {
      double uu = t < 1.5 ? std::abs(u0) : std::abs(u1);
      return std::exp(-(t_end - t)) * res.W.sigma1(uu);
    };
    double integral = 0.0;
    const int n = 4000;
    for (int i = 0; i < n; ++i) {
      double a = t_end * i / n, b = t_end * (i + 1) / n;
      integral += (b - a) * (drive(a) + 4 * drive(0.5 * (a + b)) + drive(b)) / 6.0;
    }
    double bound = std::exp(-t_end) * res.W.V(v1(x0)) + integral;
    CHECK(res.W.V(tr.states.back()) <= bound + 1e-6 * (1 + bound));
  }
}

TEST_CASE("HJI display") {
  SystemModel s = make_fixture("scalar-input");
  LyapCandidate c = quadratic_candidate(Mat::Constant(1, 1, 1.0), ComparisonFn::identity(),
                                        ComparisonFn::zero(), ComparisonFn::zero());
  std::vector<Vec> states = box_grid(1, 5.0, 201);
  CheckReport r = hji_check(s, c, ComparisonFn::power(0.5, 2.0), ComparisonFn::zero(), states);
  CHECK(r.verdict == Verdict::HoldsOnSamples);
  CHECK(r.metrics.at("cross_check_gap") <= 1e-3);
  CheckReport bad = hji_check(s, c, ComparisonFn::power(2.0, 2.0), ComparisonFn::zero(), states);
  CHECK(bad.verdict == Verdict::Falsified);
  CHECK(std::abs(bad.witness->input.x0[0]) > 0.0);
  CHECK_THROWS_AS(hji_check(make_fixture("scalar-decay"), c, ComparisonFn::zero(),
                            ComparisonFn::zero(), states),
                  std::invalid_argument);
}
