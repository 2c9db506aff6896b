#include "ioss/ode.hpp"

#include <algorithm>
#include <cmath>

namespace ioss {

std::string to_string(Termination t) {
  switch (t) {
    case Termination::HorizonReached:
      return "HorizonReached";
    case Termination::FiniteEscape:
      return "FiniteEscape";
    case Termination::EnteredSet:
      return "EnteredSet";
  }
  return "?";
}

namespace {

// Dormand-Prince tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

struct Stepper {
  const OdeRhs& f;
  Vec k1, k2, k3, k4, k5, k6, k7, tmp;

  explicit Stepper(const OdeRhs& f, Eigen::Index n)
      : f(f), k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n) {}

  // One step of size h from (t, x). Returns the 5th-order state in `out`
  // and the embedded error vector in `err`.
  void step(double t, const Vec& x, double h, Vec& out, Vec& err) {
    const double ref = t + 0.5 * h;
    f(t, ref, x, k1);
    tmp = x + h * (a21 * k1);
    f(t + c2 * h, ref, tmp, k2);
    tmp = x + h * (a31 * k1 + a32 * k2);
    f(t + c3 * h, ref, tmp, k3);
    tmp = x + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(t + c4 * h, ref, tmp, k4);
    tmp = x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(t + c5 * h, ref, tmp, k5);
    tmp = x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(t + h, ref, tmp, k6);
    out = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    f(t + h, ref, out, k7);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
  }
};

double scaled_error(const Vec& err, const Vec& x0, const Vec& x1, const OdeOptions& o) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    double sc = o.atol + o.rtol * std::max(std::abs(x0[i]), std::abs(x1[i]));
    worst = std::max(worst, std::abs(err[i]) / sc);
  }
  return worst;
}

}  // namespace

OdeSolution integrate(const OdeRhs& f, const Vec& x0, double horizon,
                      std::vector<double> breakpoints, const OdeOptions& opts,
                      const NormFn& blowup_norm, const StopSet* stop) {
  if (!(horizon > 0.0)) throw std::invalid_argument("integrate: horizon must be positive");
  if (!x0.allFinite()) throw std::invalid_argument("integrate: non-finite initial state");
  auto norm = [&](const Vec& x) { return blowup_norm ? blowup_norm(x) : x.norm(); };

  std::sort(breakpoints.begin(), breakpoints.end());
  breakpoints.erase(std::remove_if(breakpoints.begin(), breakpoints.end(),
                                   [&](double b) { return !(b > 0.0) || !(b < horizon); }),
                    breakpoints.end());
  breakpoints.push_back(horizon);

  OdeSolution sol;
  sol.t.push_back(0.0);
  sol.x.push_back(x0);
  sol.local_error.push_back(0.0);

  if (norm(x0) >= opts.blowup) {
    sol.termination = Termination::FiniteEscape;
    sol.t_escape = 0.0;
    return sol;
  }
  if (stop && stop->contains(x0)) {
    sol.termination = Termination::EnteredSet;
    sol.set_id = stop->id;
    sol.t_entry = 0.0;
    return sol;
  }

  const Eigen::Index n = x0.size();
  Stepper st(f, n);
  Vec x = x0, xn(n), err(n), d(n);
  double t = 0.0;

  double h = opts.h_init;
  if (!(h > 0.0)) {
    f(0.0, 0.0, x, d);
    double dn = d.lpNorm<Eigen::Infinity>(), xn0 = x.lpNorm<Eigen::Infinity>();
    h = (dn > 0.0) ? 0.01 * std::max(xn0, opts.atol / std::max(opts.rtol, 1e-300)) / dn : 1e-3;
    h = std::clamp(h, 1e-12, 0.1 * horizon);
  }
  h = std::min(h, opts.h_max);

  std::size_t bp = 0;
  std::size_t subres = 0;
  std::size_t steps = 0;
  while (true) {
    while (bp < breakpoints.size() && breakpoints[bp] <= t) ++bp;
    const double target = breakpoints[bp];
    bool hits_target = false;
    double hs = std::min(h, opts.h_max);
    if (t + hs >= target || target - (t + hs) < 1e-12 * std::max(1.0, std::abs(target))) {
      hs = target - t;
      hits_target = true;
    }
    if (++steps > opts.max_steps)
      throw StiffnessError("stiffness: step budget exhausted at t=" + std::to_string(t));

    st.step(t, x, hs, xn, err);
    double en = xn.allFinite() && err.allFinite() ? scaled_error(err, x, xn, opts)
                                                  : std::numeric_limits<double>::infinity();
    if (!(en <= 1.0)) {
      ++sol.rejected;
      double fac = std::isfinite(en) ? std::max(0.2, 0.9 * std::pow(en, -0.2)) : 0.2;
      h = hs * fac;
      if (!(h > 1e-300))
        throw StiffnessError("stiffness: step size underflow at t=" + std::to_string(t));
      continue;
    }

    // Accepted.
    double t_new = hits_target ? target : t + hs;
    const bool sub_resolution = hs < 4.0 * (std::nextafter(t, INFINITY) - t);
    if (sub_resolution && ++subres > opts.max_subresolution_steps)
      throw StiffnessError("stiffness: steps below time resolution at t=" + std::to_string(t) +
                           " without blowup");

    if (stop && stop->contains(xn)) {
      // Bisect on the step length for the first contained point.
      double lo = 0.0, hi = hs;
      Vec xb = xn, eb(n), xm(n);
      for (int k = 0; k < 60; ++k) {
        double mid = 0.5 * (lo + hi);
        if (!(mid > lo && mid < hi)) break;
        st.step(t, x, mid, xm, eb);
        if (stop->contains(xm)) {
          hi = mid;
          xb = xm;
        } else {
          lo = mid;
        }
      }
      double te = (hi == hs) ? t_new : t + hi;
      if (te == sol.t.back()) {
        sol.x.back() = xb;
      } else {
        sol.t.push_back(te);
        sol.x.push_back(xb);
        sol.local_error.push_back(err.lpNorm<Eigen::Infinity>());
      }
      ++sol.accepted;
      sol.termination = Termination::EnteredSet;
      sol.set_id = stop->id;
      sol.t_entry = te;
      return sol;
    }

    const double t_prev = t;
    if (t_new == sol.t.back()) {
      sol.x.back() = xn;
      sol.local_error.back() = std::max(sol.local_error.back(), err.lpNorm<Eigen::Infinity>());
    } else {
      sol.t.push_back(t_new);
      sol.x.push_back(xn);
      sol.local_error.push_back(err.lpNorm<Eigen::Infinity>());
    }
    ++sol.accepted;
    t = t_new;
    x = xn;

    if (norm(x) >= opts.blowup) {
      sol.termination = Termination::FiniteEscape;
      sol.t_escape = 0.5 * (t_prev + t);
      return sol;
    }
    if (hits_target && target >= horizon) {
      sol.termination = Termination::HorizonReached;
      return sol;
    }
    double fac = en > 0.0 ? std::min(5.0, std::max(0.2, 0.9 * std::pow(en, -0.2))) : 5.0;
    h = hits_target ? std::max(h, hs) : hs * fac;
  }
}

}  // namespace ioss
