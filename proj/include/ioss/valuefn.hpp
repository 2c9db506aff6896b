#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ioss/checks.hpp"
#include "ioss/comparison.hpp"
#include "ioss/dynamics.hpp"

namespace ioss {

// Rectangular node lattice lo + i * spacing, i in [0, counts), row-major
// with the last axis fastest. At most three axes.
struct StateGrid {
  Vec lo, hi;
  std::vector<int> counts;

  StateGrid() = default;
  StateGrid(Vec lo, Vec hi, std::vector<int> counts);

  int dim() const { return static_cast<int>(counts.size()); }
  std::size_t size() const;
  Vec spacing() const;
  double max_spacing() const;
  Vec node(std::size_t index) const;
  std::vector<int> multi_index(std::size_t index) const;
  std::size_t flat(const std::vector<int>& idx) const;
  bool contains(const Vec& x, double slack = 1e-12) const;
};

enum class Region { D, B, E1, E };
std::string to_string(Region r);

struct GeometrySets {
  ComparisonFn rho;  // GASMO margin, rho(s) > s
  std::function<Vec(const Vec&)> h;
  StateGrid grid;
  double tol = 1e-12;

  GeometrySets(ComparisonFn rho, std::function<Vec(const Vec&)> h, StateGrid grid);
  // D = {|x| <= rho(|h|)}, B = {rho(|h|) <= |x| <= 1.5 rho(|h|)},
  // E1 = {|x| > 2 rho(|h|)}, E = complement of D.
  bool in_D(const Vec& x) const;
  bool in_B(const Vec& x) const;
  bool in_E1(const Vec& x) const;
  // D before B before E1 before E.
  Region region(const Vec& x) const;
  // 1 on D, 0 off D u B, the bump profile across the collar.
  double collar(const Vec& x) const;
};

struct ValueIterationOptions {
  double dt = 0.0;  // 0: the smallest grid spacing
  double tol = 1e-6;
  std::size_t max_sweeps = 10000;
  // Convex combinations of vertex dynamics with weights on a lattice of
  // step 1/mixture_levels instead of the vertices alone.
  bool mixture = false;
  int mixture_levels = 4;
  unsigned threads = 0;
};

struct GridValueFn {
  StateGrid grid;
  std::vector<double> values;
  std::vector<Region> regions;
  // Nodes whose discrete trajectories leave the window or never settle;
  // their values are the cost accumulated before that (a lower bound).
  std::vector<char> unreached;
  ComparisonFn Xi;
  std::optional<ComparisonFn> mu1, mu2;
  std::size_t sweeps = 0;
  double residual = 0.0;
  bool converged = false;
  // Largest decrease of any node between consecutive sweeps.
  double monotonicity_defect = 0.0;
  double dt = 0.0;
  double max_speed = 0.0;

  // Multilinear interpolation, clamped to the window.
  double operator()(const Vec& x) const;
  double max_value() const;
  std::size_t unreached_count() const;
};

// Grid value function of the min-max cost to reach D with running cost
// Xi(|x|): at each node the sup over disturbance samples of the min over
// v in {-1, 0, 1}^n of dt * Xi(|x|) + V(x + dt * f~(x, w, v)), where
// f~ = f + 2 collar(x) f0(x) v and f0(x) = max over samples of |f(x, w)|.
// Zero on D. `sys` is used as given; pass it through slow_system first for
// the bounded-speed construction.
GridValueFn compute_v0(const SystemModel& sys, const GeometrySets& geo, const ComparisonFn& Xi,
                       const ValueIterationOptions& opts = {});
// Xi = mu1^{-1}, with (mu1, mu2) recorded.
GridValueFn compute_v0(const SystemModel& sys, const GeometrySets& geo, const ComparisonFn& mu1,
                       const ComparisonFn& mu2, const ValueIterationOptions& opts);

struct V0DissipationOptions {
  double span = 0.5;
  double tol_factor = 2.0;  // tolerance = tol_factor * max grid spacing
  std::size_t switching_signals = 1;  // per start, on top of the constant samples
  std::uint64_t seed = 1;
  SimOptions sim;
  unsigned threads = 0;
};

// V0(x(t)) - V0(xi) <= -int_0^t Xi(|x|) + tol along runs that stay in
// E \ (D u B) and in the window; each run is cut at its first knot outside.
// Starts outside E \ (D u B) are skipped. Throws std::invalid_argument when
// no run qualifies.
CheckReport check_v0_dissipation(const GridValueFn& v0, const SystemModel& sys,
                                 const GeometrySets& geo, const std::vector<Vec>& starts,
                                 const V0DissipationOptions& opts = {});

// The same test on explicit runs (x0 and w of each item; u is ignored).
CheckReport check_v0_dissipation(const GridValueFn& v0, const SystemModel& sys,
                                 const GeometrySets& geo, const std::vector<BatteryItem>& runs,
                                 const V0DissipationOptions& opts = {});

// min over nodes y of v(y) + |y - x|^2 / (2 alpha^2), one lower-envelope
// pass per axis. alpha in (0, 1].
GridValueFn inf_convolve(const GridValueFn& v, double alpha);

// max |v(x) - v(y)| over node pairs with |x - y| <= delta.
double modulus_of_continuity(const GridValueFn& v, double delta);

// Grid distance from each node to the nearest D node (infinity when the
// grid has no D node).
std::vector<double> distance_to_D(const GridValueFn& v);

}  // namespace ioss
