#pragma once

#include <vector>

#include "ioss/checks.hpp"
#include "ioss/lyapunov.hpp"

namespace ioss {

// p' = -p + sigma1(|u|) + sigma2(|y|), readout k(p, y) = p.
struct NormEstimator {
  ComparisonFn sigma1, sigma2;
  // Bounds of the storage function, alpha2 premajorized so that r <= alpha2(r).
  ComparisonFn alpha1, alpha2;
  // |x(t)| <= beta_est(|xi| + |zeta|, t) + rho_est(|p(t)|)
  ComparisonFn rho_est;  // alpha1^{-1}(2 s)
  KLFn beta_est;         // alpha1^{-1}(4 e^{-t} alpha2(s))
  ScalarFieldFn V;
};

NormEstimator build_estimator(const LyapCandidate& cand);

struct CoupledRun {
  Trajectory plant;
  std::vector<double> p;      // estimator state at the plant knots
  std::vector<double> V;      // storage function along the plant
  std::vector<double> bound;  // beta_est(|xi| + |zeta|, t) + rho_est(|p|)
  std::vector<double> local_error;
  double zeta0 = 0.0;
};

// Plant and estimator integrated as one augmented state [x; p].
CoupledRun run_coupled(const SystemModel& sys, const NormEstimator& est, const Vec& x0,
                       double zeta0, const Signal& u, const Signal& w, double horizon,
                       const OdeOptions& ode = {});

struct GapCheck {
  // Smallest (V_k - p_k) e^{-dt} + tol_k - (V_{k+1} - p_{k+1}) over the steps,
  // with tol_k = factor * (|grad V| + 1) * local error + floor.
  double worst_margin = std::numeric_limits<double>::infinity();
  std::size_t steps = 0, violations = 0;
  double worst_t = 0.0;
};

GapCheck check_gap_decay(const CoupledRun& run, const LyapCandidate& cand, double factor = 10.0,
                         double floor = 1e-12);

// Coupled runs over the battery with p(0) = zeta0: the discretized gap decay
// at every accepted step and |x(t)| <= bound(t) at every knot (credited by
// `allow`). metrics: gap_worst, gap_violations, bound_worst, bound_violations, steps.
CheckReport check_estimator_contract(const SystemModel& sys, const NormEstimator& est,
                                     const LyapCandidate& cand, const BatteryPlan& plan,
                                     double zeta0 = 0.0, const Allowance& allow = {});

// UIOSS gains assembled from the estimator with zeta = 0:
// max{2 beta_est(|xi|, t), 4 rho_est(sigma1(||u||)), 4 rho_est(sigma2(||y||))}.
EstimateSpec assembled_uioss_spec(const NormEstimator& est);

CheckReport verify_estimator_implies_uioss(const SystemModel& sys, const NormEstimator& est,
                                           const BatteryPlan& plan, const Allowance& allow = {});

}  // namespace ioss
