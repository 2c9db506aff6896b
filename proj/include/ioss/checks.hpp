#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ioss/comparison.hpp"
#include "ioss/dynamics.hpp"

namespace ioss {

enum class EstimateKind {
  UIOSS,       // |x| <= max{beta(|xi|,t), g1(||u||), g2(||y||)}
  UOSS,        // |x| <= max{beta(|xi|,t), g2(||y||)}
  GASMO,       // |x| >= rho(|y|) on [0,T]  =>  |x| <= beta(|xi|,t) on [0,T]
  iiUOSS,      // int chi(|x|) <= kappa(|xi|) + int gamma(|y|)
  UO,          // |y| <= rho1(|x|) on [0,T]  =>  |x| <= chi1(t) + chi2(|xi|) + c
  UiIOSS,      // |x| <= max{beta, gamma(int g1(|u|)), gamma(int g2(|y|))}
  UiIOSSsum,   // alpha_x(|x|) <= beta + int g1(|u|) + g2(||y||)
  Incremental  // |x1-x2| <= max{beta(|xi1-xi2|,t), g1(||u1-u2||), g2(||y1-y2||)}
};

std::string to_string(EstimateKind k);
EstimateKind estimate_kind_from_string(const std::string& s);

struct EstimateSpec {
  EstimateKind kind = EstimateKind::UIOSS;
  std::optional<KLFn> beta;
  std::optional<ComparisonFn> gamma1, gamma2, rho, chi, kappa, gamma, rho1, chi1, chi2,
      alpha_x;
  double c = 0.0;

  // Throws std::invalid_argument naming the first missing or ill-classed
  // slot. Input and output slots are required only when the system has
  // inputs or outputs.
  void validate(const SystemModel& sys) const;
  // Number of gain slots the estimate actually reads for this system.
  int slots_used(const SystemModel& sys) const;
};

struct BatteryPlan {
  // Initial states on log-spaced shells r_min..r_max.
  double r_min = 0.01, r_max = 10.0;
  int shells = 12;
  int directions = 2;
  // (u, w) draws per initial state; draw 0 uses zero input.
  int signals_per_state = 2;
  int max_switches = 4;
  double input_amplitude = 1.0;
  double horizon = 10.0;
  std::uint64_t seed = 1;
  std::vector<Vec> extra_states;
  SimOptions sim;
  unsigned threads = 0;
};

struct BatteryItem {
  Vec x0;
  Signal u, w;
  // Second member of a pair for incremental checks.
  std::optional<Vec> x0_pair;
  std::optional<Signal> u_pair;
};

std::vector<BatteryItem> expand_battery(const SystemModel& sys, const BatteryPlan& plan);
// Pairs share w; partners are drawn on the same shells around the first state.
std::vector<BatteryItem> expand_paired_battery(const SystemModel& sys, const BatteryPlan& plan);

enum class Verdict { HoldsOnSamples, Falsified };
std::string to_string(Verdict v);

struct Witness {
  std::size_t item = 0;
  BatteryItem input;
  double horizon = 0.0;
  double t = 0.0;
  double lhs = 0.0, rhs = 0.0;
};

struct CheckReport {
  std::string check;
  Verdict verdict = Verdict::HoldsOnSamples;
  std::optional<Witness> witness;
  // Smallest credited slack rhs - lhs + allowance over all tested knots.
  double worst_margin = std::numeric_limits<double>::infinity();
  std::size_t trajectories = 0, knots = 0, skipped = 0, escaped = 0;
  std::vector<std::string> notes;
  std::map<std::string, double> metrics;
};

// Slack credited to each tested inequality for integration and quadrature
// error: abs + rel * max(|lhs|, |rhs|), with rel_integral for estimates that
// contain trapezoid integrals.
struct Allowance {
  double abs = 1e-9;
  double rel = 1e-6;
  double rel_integral = 1e-4;
  double credit(double lhs, double rhs, bool integral) const;
};

struct TrajectoryVerdict {
  double margin = std::numeric_limits<double>::infinity();
  double t = 0.0, lhs = 0.0, rhs = 0.0;
  std::size_t knots = 0;
};

// Tests the estimate at every knot of one trajectory. For incremental
// specs `pair` is the partner trajectory on the same knots.
TrajectoryVerdict evaluate_trajectory(const SystemModel& sys, const EstimateSpec& spec,
                                      const Trajectory& tr, const Allowance& allow = {},
                                      const Trajectory* pair = nullptr);

CheckReport check_estimate(const SystemModel& sys, const EstimateSpec& spec,
                           const std::vector<BatteryItem>& battery, const BatteryPlan& plan,
                           const Allowance& allow = {});
CheckReport check_estimate(const SystemModel& sys, const EstimateSpec& spec,
                           const BatteryPlan& plan, const Allowance& allow = {});

CheckReport check_iiuoss(const SystemModel& sys, const ComparisonFn& chi,
                         const ComparisonFn& kappa, const ComparisonFn& gamma,
                         const BatteryPlan& plan, const Allowance& allow = {});

CheckReport check_incremental(const SystemModel& sys, const EstimateSpec& spec,
                              const std::vector<BatteryItem>& pairs, const BatteryPlan& plan,
                              const Allowance& allow = {});

// Simulates both members of a pair as one augmented system so that they
// share knots. The returned trajectories hold the first and second member.
std::pair<Trajectory, Trajectory> simulate_pair(const SystemModel& sys, const BatteryItem& item,
                                                double horizon, const SimOptions& opts = {});

// Re-simulates the witness with tolerances divided by `factor` and returns
// the verdict on that single trajectory.
TrajectoryVerdict replay_witness(const SystemModel& sys, const EstimateSpec& spec,
                                 const Witness& w, const SimOptions& sim, double factor = 10.0,
                                 const Allowance& allow = {});

// rho(s) = 1.01 theta(4 gamma2(s)) with theta = max(beta(., 0), id).
ComparisonFn gasmo_margin_from_uoss(const KLFn& beta, const ComparisonFn& gamma2);

// phi(r) = 0.99 gamma1^{-1}(alpha^{-1}(r) / 4) with alpha = max(beta(., 0), id).
ComparisonFn stability_margin(const KLFn& beta, const ComparisonFn& gamma1);

}  // namespace ioss
