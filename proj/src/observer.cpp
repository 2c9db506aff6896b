#include "ioss/observer.hpp"

#include <cmath>
#include <stdexcept>

#include "ioss/parallel.hpp"

namespace ioss {

NormEstimator build_estimator(const LyapCandidate& cand) {
  if (cand.form != LyapCandidate::Form::Exponential)
    throw std::invalid_argument(
        "build_estimator: candidate is not in exponential-decay form; run exp_decay_rescale first");
  ComparisonFn alpha2 = max(cand.alpha2, ComparisonFn::identity());
  ComparisonFn a1inv = invert(cand.alpha1);
  return NormEstimator{cand.sigma1,
                       cand.sigma2,
                       cand.alpha1,
                       alpha2,
                       compose(a1inv, ComparisonFn::linear(2.0)),
                       KLFn::factored(compose(a1inv, ComparisonFn::linear(4.0)), alpha2),
                       cand.V};
}

CoupledRun run_coupled(const SystemModel& sys, const NormEstimator& est, const Vec& x0,
                       double zeta0, const Signal& u, const Signal& w, double horizon,
                       const OdeOptions& ode) {
  const int n = sys.n();
  if (x0.size() != n) throw std::invalid_argument("run_coupled: initial state dimension");
  OdeRhs rhs = [&](double t, double ref, const Vec& q, Vec& dq) {
    Vec x = q.head(n);
    Vec uv = u.at(t, ref);
    dq.resize(n + 1);
    dq.head(n) = sys.f(x, uv, w.at(t, ref));
    double drive = (sys.m_u() ? est.sigma1(uv.norm()) : 0.0) +
                   (sys.p() ? est.sigma2(sys.h(x).norm()) : 0.0);
    dq[n] = -q[n] + drive;
  };
  std::vector<double> bps = u.breakpoints();
  for (double b : w.breakpoints()) bps.push_back(b);
  Vec q0(n + 1);
  q0 << x0, zeta0;
  auto norm = [n](const Vec& q) { return q.head(n).norm(); };
  OdeSolution sol = integrate(rhs, q0, horizon, bps, ode, norm);

  CoupledRun run;
  run.zeta0 = zeta0;
  run.plant.times = sol.t;
  run.plant.termination = sol.termination;
  run.plant.t_escape = sol.t_escape;
  run.plant.local_error = sol.local_error;
  run.plant.u = u;
  run.plant.w = w;
  run.local_error = sol.local_error;
  const double r0 = x0.norm() + std::abs(zeta0);
  for (std::size_t k = 0; k < sol.t.size(); ++k) {
    Vec x = sol.x[k].head(n);
    double p = sol.x[k][n];
    run.plant.states.push_back(x);
    run.plant.outputs.push_back(sys.h(x));
    run.p.push_back(p);
    run.V.push_back(est.V(x));
    run.bound.push_back(est.beta_est(r0, sol.t[k]) + est.rho_est(std::abs(p)));
  }
  return run;
}

GapCheck check_gap_decay(const CoupledRun& run, const LyapCandidate& cand, double factor,
                         double floor) {
  GapCheck g;
  const auto& t = run.plant.times;
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    double dt = t[k + 1] - t[k];
    double gap0 = run.V[k] - run.p[k], gap1 = run.V[k + 1] - run.p[k + 1];
    double gn = cand.grad(run.plant.states[k + 1]).norm();
    double tol = factor * (gn + 1.0) * run.local_error[k + 1] + floor;
    double margin = gap0 * std::exp(-dt) + tol - gap1;
    ++g.steps;
    if (margin < 0.0) ++g.violations;
    if (margin < g.worst_margin) {
      g.worst_margin = margin;
      g.worst_t = t[k + 1];
    }
  }
  return g;
}

CheckReport check_estimator_contract(const SystemModel& sys, const NormEstimator& est,
                                     const LyapCandidate& cand, const BatteryPlan& plan,
                                     double zeta0, const Allowance& allow) {
  std::vector<BatteryItem> items = expand_battery(sys, plan);
  struct Item {
    GapCheck gap;
    double bound_margin = std::numeric_limits<double>::infinity();
    double t = 0.0, lhs = 0.0, rhs = 0.0;
    std::size_t bound_violations = 0, knots = 0;
    bool escaped = false;
  };
  std::vector<Item> out(items.size());
  parallel_for(
      items.size(),
      [&](std::size_t i) {
        CoupledRun run = run_coupled(sys, est, items[i].x0, zeta0, items[i].u, items[i].w,
                                     plan.horizon, plan.sim.ode);
        Item& it = out[i];
        it.gap = check_gap_decay(run, cand);
        it.knots = run.plant.times.size();
        it.escaped = run.plant.termination == Termination::FiniteEscape;
        for (std::size_t k = 0; k < run.plant.times.size(); ++k) {
          double lhs = run.plant.states[k].norm(), rhs = run.bound[k];
          double m = rhs - lhs + allow.credit(lhs, rhs, false);
          if (m < 0.0) ++it.bound_violations;
          if (m < it.bound_margin) {
            it.bound_margin = m;
            it.t = run.plant.times[k];
            it.lhs = lhs;
            it.rhs = rhs;
          }
        }
      },
      plan.threads);

  CheckReport r;
  r.check = "estimator-contract";
  double gap_worst = std::numeric_limits<double>::infinity(), bound_worst = gap_worst;
  double gap_violations = 0, bound_violations = 0, steps = 0;
  std::size_t worst = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Item& it = out[i];
    r.trajectories += 1;
    r.knots += it.knots;
    if (it.escaped) ++r.escaped;
    gap_worst = std::min(gap_worst, it.gap.worst_margin);
    bound_worst = std::min(bound_worst, it.bound_margin);
    gap_violations += it.gap.violations;
    bound_violations += it.bound_violations;
    steps += it.gap.steps;
    double m = std::min(it.bound_margin, it.gap.worst_margin);
    if (m < r.worst_margin) {
      r.worst_margin = m;
      worst = i;
    }
  }
  r.verdict = gap_violations + bound_violations > 0 ? Verdict::Falsified : Verdict::HoldsOnSamples;
  if (!items.empty()) {
    const Item& it = out[worst];
    Witness w;
    w.item = worst;
    w.input = items[worst];
    w.horizon = plan.horizon;
    w.t = it.t;
    w.lhs = it.lhs;
    w.rhs = it.rhs;
    r.witness = w;
  }
  r.metrics["gap_worst"] = gap_worst;
  r.metrics["gap_violations"] = gap_violations;
  r.metrics["bound_worst"] = bound_worst;
  r.metrics["bound_violations"] = bound_violations;
  r.metrics["steps"] = steps;
  r.metrics["zeta0"] = zeta0;
  return r;
}

EstimateSpec assembled_uioss_spec(const NormEstimator& est) {
  EstimateSpec s;
  s.kind = EstimateKind::UIOSS;
  s.beta = scale(2.0, est.beta_est);
  s.gamma1 = scale(4.0, compose(est.rho_est, est.sigma1));
  s.gamma2 = scale(4.0, compose(est.rho_est, est.sigma2));
  return s;
}

CheckReport verify_estimator_implies_uioss(const SystemModel& sys, const NormEstimator& est,
                                           const BatteryPlan& plan, const Allowance& allow) {
  CheckReport r = check_estimate(sys, assembled_uioss_spec(est), plan, allow);
  r.check = "estimator-UIOSS";
  return r;
}

}  // namespace ioss
