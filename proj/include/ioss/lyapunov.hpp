#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ioss/checks.hpp"
#include "ioss/comparison.hpp"
#include "ioss/dynamics.hpp"
#include "ioss/linear.hpp"

namespace ioss {

using GradientFn = std::function<Vec(const Vec&)>;

struct LyapCandidate {
  // Standard:    grad V . f <= -alpha(|x|) + sigma1(|u|) + sigma2(|h(x)|)
  // Exponential: grad V . f <= -V(x)       + sigma1(|u|) + sigma2(|h(x)|)
  // With chi1 set, the standard form is only required where |x| >= chi1(|u|).
  enum class Form { Standard, Exponential };

  std::string name;
  ScalarFieldFn V;
  GradientFn gradV;  // empty: central differences
  ComparisonFn alpha1, alpha2;
  Form form = Form::Standard;
  ComparisonFn alpha, sigma1, sigma2;
  std::optional<ComparisonFn> chi1;

  Vec grad(const Vec& x) const;
};

// V = x'Px with alpha1 = lambda_min r^2, alpha2 = lambda_max r^2.
LyapCandidate quadratic_candidate(const Mat& P, ComparisonFn alpha, ComparisonFn sigma1,
                                  ComparisonFn sigma2);
// The quadratic storage function of a linear certificate with its gains.
LyapCandidate certificate_candidate(const QuadraticCertificate& c);

// Box lattice [-h, h]^n with `per_axis` points per coordinate.
std::vector<Vec> box_grid(int n, double half_width, int per_axis);
// Points of box_grid(m, radius, per_axis) inside the closed ball; for
// m = 0 a single empty vector.
std::vector<Vec> ball_grid(int m, double radius, int per_axis);

struct DissipationGrid {
  std::vector<Vec> states;
  std::vector<Vec> controls;     // empty: the zero control (or none if m_u = 0)
  std::vector<Vec> disturbances; // empty: the system's disturbance samples
};

struct PointwiseOptions {
  // States with |x| below this are excluded (finite-difference gradients
  // are unreliable there).
  double exclude_radius = 1e-6;
  // A sample fails when its slack is below -(tol_abs + tol_rel * scale),
  // scale being the largest magnitude among the terms.
  double tol_abs = 1e-9;
  double tol_rel = 1e-9;
  unsigned threads = 0;
};

// Pointwise dissipation inequality. The report's worst_margin is the raw
// slack; the witness holds (x, u, w) as constant signals.
CheckReport verify_dissipation(const SystemModel& sys, const LyapCandidate& cand,
                               const DissipationGrid& grid, const PointwiseOptions& opts = {});

// alpha1(|x|) <= V(x) <= alpha2(|x|) and V(0) = 0 on the states.
CheckReport check_bounds(const LyapCandidate& cand, const std::vector<Vec>& states,
                         const PointwiseOptions& opts = {});

// Largest |g - g_fd| / (|g_fd| + 1e-8) between the candidate's gradient and
// central differences of V over the states.
double gradient_mismatch(const LyapCandidate& cand, const std::vector<Vec>& states);

struct ReconstructOptions {
  // sigma1 knots: 0 and geometric r_min..r_max.
  double r_min = 1e-3, r_max = 10.0;
  int knots = 49;
  // Uniform lattice resolution per axis for the state ball and the
  // control ball; one local refinement pass around each maximizer.
  int state_points = 41;
  int control_points = 21;
  int refine_points = 11;
};

struct Reconstruction {
  LyapCandidate candidate;
  std::vector<double> r;          // knots
  std::vector<double> sigma_hat;  // raw grid maxima at the knots
  std::vector<std::string> flags;
  int state_points = 0, control_points = 0;
};

// Turns the implication form (alpha3, gamma, chi1) into the standard form
// with alpha = alpha3, sigma2 = gamma and sigma1 the K-infinity majorant of
// max{0, max{grad V . f(x,u,w) + alpha3(chi1(|u|)) : |u| <= r, |x| <= chi1(r), w}}.
Reconstruction remark23_reconstruct(const SystemModel& sys, const LyapCandidate& cand,
                                    const ReconstructOptions& opts = {});

struct RescaleOptions {
  double lo = 1e-4, hi = 1e4;
  int per_decade = 32;
  int simpson_panels = 16;
  double anchor = 1.0;
};

// rho with rho' = 2 rho / a and rho(anchor) = 1, by quadrature of
// log rho in log r; a must be positive on (0, inf).
ComparisonFn rescaling_function(const ComparisonFn& a, const RescaleOptions& opts = {},
                                std::vector<std::string>* diagnostics = nullptr);

struct Rescaled {
  LyapCandidate W;
  ComparisonFn rho;
  ComparisonFn alpha_bar;  // alpha o alpha2^{-1}
  ComparisonFn a_used;     // min(alpha_bar, k id), the rate handed to rho
  std::vector<std::string> diagnostics;
};

// W = rho o V in exponential-decay form.
Rescaled exp_decay_rescale(const LyapCandidate& cand, const RescaleOptions& opts = {});

struct HjiOptions {
  int u_points = 10000;  // per control axis (capped for m > 1)
  double cross_tol = 1e-3;
  PointwiseOptions pointwise;
};

// grad V . g0 + 1/4 sum (grad V . g_i)^2 + sigma1(|x|) - sigma2(|h(x)|) <= 0
// on the states, plus a brute-force cross-check of the inner maximization
// max_u [grad V . (g0 + G u) - |u|^2]; the largest gap is in
// metrics["cross_check_gap"].
CheckReport hji_check(const SystemModel& sys, const LyapCandidate& cand,
                      const ComparisonFn& sigma1, const ComparisonFn& sigma2,
                      const std::vector<Vec>& states, const HjiOptions& opts = {});

}  // namespace ioss
