#include "ioss/checks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ioss/parallel.hpp"

namespace ioss {

namespace {

const std::vector<std::pair<EstimateKind, std::string>>& kind_names() {
  static const std::vector<std::pair<EstimateKind, std::string>> names = {
      {EstimateKind::UIOSS, "UIOSS"},         {EstimateKind::UOSS, "UOSS"},
      {EstimateKind::GASMO, "GASMO"},         {EstimateKind::iiUOSS, "iiUOSS"},
      {EstimateKind::UO, "UO"},               {EstimateKind::UiIOSS, "UiIOSS"},
      {EstimateKind::UiIOSSsum, "U(iI)OSS"},  {EstimateKind::Incremental, "dUIOSS"}};
  return names;
}

bool integral_kind(EstimateKind k) {
  return k == EstimateKind::iiUOSS || k == EstimateKind::UiIOSS || k == EstimateKind::UiIOSSsum;
}

bool uses_u(EstimateKind k) {
  return k == EstimateKind::UIOSS || k == EstimateKind::UiIOSS ||
         k == EstimateKind::UiIOSSsum || k == EstimateKind::Incremental;
}

void need(bool present, const char* slot, EstimateKind k) {
  if (!present)
    throw std::invalid_argument("estimate " + to_string(k) + ": missing gain '" + slot + "'");
}

void need_kinf(const std::optional<ComparisonFn>& f, const char* slot, EstimateKind k) {
  need(f.has_value(), slot, k);
  if (!f->unbounded())
    throw std::invalid_argument("estimate " + to_string(k) + ": gain '" + slot +
                                "' must be unbounded (class K-infinity)");
}

Signal random_pwc(std::mt19937_64& rng, int dim, double horizon, int max_switches,
                  const std::function<Vec()>& draw) {
  if (dim == 0) return Signal::zero(0);
  std::uniform_int_distribution<int> count(1, std::max(1, max_switches));
  std::uniform_real_distribution<double> when(0.0, horizon);
  int k = count(rng);
  std::vector<double> times{0.0};
  for (int i = 0; i < k; ++i) times.push_back(when(rng));
  std::sort(times.begin() + 1, times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  std::vector<Vec> values;
  for (std::size_t i = 0; i < times.size(); ++i) values.push_back(draw());
  return Signal::piecewise(std::move(times), std::move(values));
}

Vec random_direction(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g;
  Vec d(n);
  do {
    for (int i = 0; i < n; ++i) d[i] = g(rng);
  } while (d.norm() < 1e-12);
  return d / d.norm();
}

std::vector<double> shell_radii(const BatteryPlan& plan) {
  std::vector<double> r;
  if (plan.shells <= 0) return r;
  if (plan.shells == 1) return {plan.r_min};
  double a = std::log(plan.r_min), b = std::log(plan.r_max);
  for (int i = 0; i < plan.shells; ++i) r.push_back(std::exp(a + (b - a) * i / (plan.shells - 1)));
  return r;
}

struct Drawer {
  const SystemModel& sys;
  const BatteryPlan& plan;
  std::mt19937_64& rng;

  Signal control(bool zero) {
    if (sys.m_u() == 0) return Signal::zero(0);
    if (zero) return Signal::zero(sys.m_u());
    std::uniform_real_distribution<double> a(-plan.input_amplitude, plan.input_amplitude);
    return random_pwc(rng, sys.m_u(), plan.horizon, plan.max_switches, [&] {
      Vec v(sys.m_u());
      for (int i = 0; i < sys.m_u(); ++i) v[i] = a(rng);
      return v;
    });
  }

  Signal disturbance() {
    if (sys.m_w() == 0) return Signal::zero(0);
    const auto& samples = sys.disturbance_samples();
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    return random_pwc(rng, sys.m_w(), plan.horizon, plan.max_switches,
                      [&] { return samples[pick(rng)]; });
  }

  std::vector<Vec> states() {
    std::vector<Vec> out;
    for (double r : shell_radii(plan)) {
      int dirs = sys.n() == 1 ? std::min(plan.directions, 2) : plan.directions;
      for (int d = 0; d < dirs; ++d) {
        Vec x = sys.n() == 1 ? Vec::Constant(1, d % 2 == 0 ? 1.0 : -1.0)
                             : random_direction(rng, sys.n());
        out.push_back(r * x);
      }
    }
    for (const Vec& x : plan.extra_states) {
      if (x.size() != sys.n()) throw std::invalid_argument("battery: extra state dimension");
      out.push_back(x);
    }
    return out;
  }

  int draws() const {
    bool driven = sys.m_u() > 0 || sys.m_w() > 0;
    return driven ? std::max(1, plan.signals_per_state) : 1;
  }
};

// Norm of a signal on the step (t0, t1), where it is constant for
// piecewise signals.
double step_norm(const Signal& s, double t0, double t1) {
  double mid = 0.5 * (t0 + t1);
  return s.at(mid, mid).norm();
}

Vec step_value(const Signal& s, double t0, double t1) {
  double mid = 0.5 * (t0 + t1);
  return s.at(mid, mid);
}

}  // namespace

std::string to_string(EstimateKind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  return "?";
}

EstimateKind estimate_kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kind_names())
    if (name == s) return kind;
  if (s == "UiIOSS-sum") return EstimateKind::UiIOSSsum;
  throw std::invalid_argument("unknown estimate kind '" + s + "'");
}

std::string to_string(Verdict v) {
  return v == Verdict::HoldsOnSamples ? "HoldsOnSamples" : "Falsified";
}

void EstimateSpec::validate(const SystemModel& sys) const {
  const bool u = sys.m_u() > 0, y = sys.p() > 0;
  switch (kind) {
    case EstimateKind::UIOSS:
    case EstimateKind::Incremental:
      need(beta.has_value(), "beta", kind);
      if (u) need(gamma1.has_value(), "gamma1", kind);
      if (y) need(gamma2.has_value(), "gamma2", kind);
      break;
    case EstimateKind::UOSS:
      need(beta.has_value(), "beta", kind);
      if (y) need(gamma2.has_value(), "gamma2", kind);
      break;
    case EstimateKind::GASMO:
      need(beta.has_value(), "beta", kind);
      need_kinf(rho, "rho", kind);
      break;
    case EstimateKind::iiUOSS:
      need_kinf(chi, "chi", kind);
      need(kappa.has_value(), "kappa", kind);
      need(gamma.has_value(), "gamma", kind);
      break;
    case EstimateKind::UO:
      need(rho1.has_value(), "rho1", kind);
      need(chi1.has_value(), "chi1", kind);
      need(chi2.has_value(), "chi2", kind);
      if (!(c >= 0.0)) throw std::invalid_argument("estimate UO: constant c must be >= 0");
      break;
    case EstimateKind::UiIOSS:
      need(beta.has_value(), "beta", kind);
      need(gamma.has_value(), "gamma", kind);
      if (u) need(gamma1.has_value(), "gamma1", kind);
      if (y) need(gamma2.has_value(), "gamma2", kind);
      break;
    case EstimateKind::UiIOSSsum:
      need_kinf(alpha_x, "alpha_x", kind);
      need(beta.has_value(), "beta", kind);
      if (u) need(gamma1.has_value(), "gamma1", kind);
      if (y) need(gamma2.has_value(), "gamma2", kind);
      break;
  }
}

int EstimateSpec::slots_used(const SystemModel& sys) const {
  const int u = sys.m_u() > 0 ? 1 : 0, y = sys.p() > 0 ? 1 : 0;
  switch (kind) {
    case EstimateKind::UIOSS:
    case EstimateKind::Incremental:
      return 1 + u + y;
    case EstimateKind::UOSS:
      return 1 + y;
    case EstimateKind::GASMO:
      return 2;
    case EstimateKind::iiUOSS:
      return 3;
    case EstimateKind::UO:
      return 3;
    case EstimateKind::UiIOSS:
      return 2 + u + y;
    case EstimateKind::UiIOSSsum:
      return 2 + u + y;
  }
  return 0;
}

std::vector<BatteryItem> expand_battery(const SystemModel& sys, const BatteryPlan& plan) {
  std::mt19937_64 rng(plan.seed);
  Drawer d{sys, plan, rng};
  std::vector<BatteryItem> items;
  for (const Vec& x : d.states()) {
    for (int k = 0; k < d.draws(); ++k) {
      BatteryItem it;
      it.x0 = x;
      it.u = d.control(k == 0 && d.draws() > 1);
      it.w = d.disturbance();
      items.push_back(std::move(it));
    }
  }
  if (items.empty()) throw std::invalid_argument("battery: empty sampling plan");
  return items;
}

std::vector<BatteryItem> expand_paired_battery(const SystemModel& sys, const BatteryPlan& plan) {
  std::mt19937_64 rng(plan.seed);
  Drawer d{sys, plan, rng};
  std::vector<double> radii = shell_radii(plan);
  std::uniform_int_distribution<std::size_t> pick(0, radii.empty() ? 0 : radii.size() - 1);
  std::vector<BatteryItem> items;
  for (const Vec& x : d.states()) {
    for (int k = 0; k < d.draws(); ++k) {
      BatteryItem it;
      it.x0 = x;
      double r = radii.empty() ? 1.0 : radii[pick(rng)];
      it.x0_pair = x + r * random_direction(rng, sys.n());
      it.u = d.control(false);
      it.u_pair = d.control(k == 0 && d.draws() > 1);
      it.w = d.disturbance();
      items.push_back(std::move(it));
    }
  }
  if (items.empty()) throw std::invalid_argument("battery: empty sampling plan");
  return items;
}

double Allowance::credit(double lhs, double rhs, bool integral) const {
  double scale = std::max(std::abs(lhs), std::abs(rhs));
  if (!std::isfinite(scale)) return 0.0;
  return abs + (integral ? rel_integral : rel) * scale;
}

TrajectoryVerdict evaluate_trajectory(const SystemModel& sys, const EstimateSpec& spec,
                                      const Trajectory& tr, const Allowance& allow,
                                      const Trajectory* pair) {
  TrajectoryVerdict v;
  const EstimateKind kind = spec.kind;
  const bool incremental = kind == EstimateKind::Incremental;
  if (incremental && (!pair || pair->times.size() != tr.times.size()))
    throw std::invalid_argument("incremental check needs a partner on the same knots");
  const bool has_u = sys.m_u() > 0 && uses_u(kind);
  const bool has_y = sys.p() > 0;
  const bool integral = integral_kind(kind);

  auto state = [&](std::size_t k) -> Vec {
    return incremental ? Vec(tr.states[k] - pair->states[k]) : tr.states[k];
  };
  auto output = [&](std::size_t k) -> Vec {
    return incremental ? Vec(tr.outputs[k] - pair->outputs[k]) : tr.outputs[k];
  };
  auto u_norm = [&](double t0, double t1) {
    if (!incremental) return step_norm(tr.u, t0, t1);
    return (step_value(tr.u, t0, t1) - step_value(pair->u, t0, t1)).norm();
  };

  const double r0 = state(0).norm();
  double sup_u = 0.0, sup_y = 0.0, int_u = 0.0, int_y = 0.0, int_x = 0.0;
  double prev_y = 0.0, prev_x = 0.0;
  bool active = true;

  for (std::size_t k = 0; k < tr.times.size() && active; ++k) {
    const double t = tr.times[k];
    const double xn = state(k).norm();
    const double yn = has_y ? output(k).norm() : 0.0;
    if (k == 0) {
      if (has_u) sup_u = incremental ? (tr.u(0.0) - pair->u(0.0)).norm() : tr.u(0.0).norm();
    } else {
      const double t0 = tr.times[k - 1], dt = t - t0;
      if (has_u) {
        double un = u_norm(t0, t);
        sup_u = std::max(sup_u, un);
        if (kind == EstimateKind::UiIOSS || kind == EstimateKind::UiIOSSsum)
          int_u += (*spec.gamma1)(un) * dt;
      }
      if (kind == EstimateKind::iiUOSS) {
        int_x += 0.5 * dt * (prev_x + (*spec.chi)(xn));
        int_y += 0.5 * dt * (prev_y + (*spec.gamma)(yn));
      } else if (kind == EstimateKind::UiIOSS && has_y) {
        int_y += 0.5 * dt * (prev_y + (*spec.gamma2)(yn));
      }
    }
    sup_y = std::max(sup_y, yn);
    if (kind == EstimateKind::iiUOSS) {
      prev_x = (*spec.chi)(xn);
      prev_y = (*spec.gamma)(yn);
    } else if (kind == EstimateKind::UiIOSS && has_y) {
      prev_y = (*spec.gamma2)(yn);
    }

    double lhs = xn, rhs = 0.0;
    switch (kind) {
      case EstimateKind::UIOSS:
      case EstimateKind::UOSS:
      case EstimateKind::Incremental:
        rhs = (*spec.beta)(r0, t);
        if (has_u) rhs = std::max(rhs, (*spec.gamma1)(sup_u));
        if (has_y) rhs = std::max(rhs, (*spec.gamma2)(sup_y));
        break;
      case EstimateKind::GASMO:
        if (xn < (*spec.rho)(yn)) {
          active = false;
          continue;
        }
        rhs = (*spec.beta)(r0, t);
        break;
      case EstimateKind::iiUOSS:
        lhs = int_x;
        rhs = (*spec.kappa)(r0) + int_y;
        break;
      case EstimateKind::UO:
        if (yn > (*spec.rho1)(xn)) {
          active = false;
          continue;
        }
        rhs = (*spec.chi1)(t) + (*spec.chi2)(r0) + spec.c;
        break;
      case EstimateKind::UiIOSS:
        rhs = (*spec.beta)(r0, t);
        if (has_u) rhs = std::max(rhs, (*spec.gamma)(int_u));
        if (has_y) rhs = std::max(rhs, (*spec.gamma)(int_y));
        break;
      case EstimateKind::UiIOSSsum:
        lhs = (*spec.alpha_x)(xn);
        rhs = (*spec.beta)(r0, t) + int_u;
        if (has_y) rhs += (*spec.gamma2)(sup_y);
        break;
    }
    ++v.knots;
    double margin = rhs - lhs + allow.credit(lhs, rhs, integral);
    if (std::isnan(margin)) margin = -std::numeric_limits<double>::infinity();
    if (margin < v.margin) {
      v.margin = margin;
      v.t = t;
      v.lhs = lhs;
      v.rhs = rhs;
    }
  }
  return v;
}

std::pair<Trajectory, Trajectory> simulate_pair(const SystemModel& sys, const BatteryItem& item,
                                                double horizon, const SimOptions& opts) {
  if (!item.x0_pair || !item.u_pair) throw std::invalid_argument("simulate_pair: item has no partner");
  const int n = sys.n();
  const Signal &u1 = item.u, &u2 = *item.u_pair, &w = item.w;
  OdeRhs rhs = [&](double t, double ref, const Vec& q, Vec& dq) {
    Vec wv = w.at(t, ref);
    dq.resize(2 * n);
    dq.head(n) = sys.f(q.head(n), u1.at(t, ref), wv);
    dq.tail(n) = sys.f(q.tail(n), u2.at(t, ref), wv);
  };
  std::vector<double> bps = u1.breakpoints();
  for (const Signal* s : {&u2, &w})
    for (double b : s->breakpoints()) bps.push_back(b);
  Vec q0(2 * n);
  q0 << item.x0, *item.x0_pair;
  auto norm = [n](const Vec& q) { return std::max(q.head(n).norm(), q.tail(n).norm()); };
  OdeSolution sol = integrate(rhs, q0, horizon, bps, opts.ode, norm);
  Trajectory a, b;
  for (Trajectory* tr : {&a, &b}) {
    tr->times = sol.t;
    tr->local_error = sol.local_error;
    tr->termination = sol.termination;
    tr->t_escape = sol.t_escape;
  }
  for (const Vec& q : sol.x) {
    a.states.push_back(q.head(n));
    b.states.push_back(q.tail(n));
    a.outputs.push_back(sys.h(q.head(n)));
    b.outputs.push_back(sys.h(q.tail(n)));
  }
  a.u = u1;
  b.u = u2;
  a.w = b.w = w;
  return {std::move(a), std::move(b)};
}

namespace {

struct ItemResult {
  TrajectoryVerdict verdict;
  bool escaped = false;
  bool skipped = false;
  std::string note;
};

ItemResult run_item(const SystemModel& sys, const EstimateSpec& spec, const BatteryItem& item,
                    double horizon, const SimOptions& sim, const Allowance& allow) {
  ItemResult r;
  try {
    if (spec.kind == EstimateKind::Incremental) {
      auto [a, b] = simulate_pair(sys, item, horizon, sim);
      r.escaped = a.termination == Termination::FiniteEscape;
      if (a.times.size() < 2) {
        r.skipped = true;
        r.note = "escaped before the first step";
        return r;
      }
      r.verdict = evaluate_trajectory(sys, spec, a, allow, &b);
    } else {
      Trajectory tr = simulate(sys, item.x0, item.u, item.w, horizon, sim);
      r.escaped = tr.termination == Termination::FiniteEscape;
      if (tr.times.size() < 2) {
        r.skipped = true;
        r.note = "escaped before the first step";
        return r;
      }
      r.verdict = evaluate_trajectory(sys, spec, tr, allow);
    }
  } catch (const StiffnessError& e) {
    r.skipped = true;
    r.note = std::string("integration failed: ") + e.what();
  }
  return r;
}

SimOptions tightened(const SimOptions& sim, double factor) {
  SimOptions s = sim;
  s.ode.rtol /= factor;
  s.ode.atol /= factor;
  return s;
}

}  // namespace

TrajectoryVerdict replay_witness(const SystemModel& sys, const EstimateSpec& spec,
                                 const Witness& w, const SimOptions& sim, double factor,
                                 const Allowance& allow) {
  ItemResult r = run_item(sys, spec, w.input, w.horizon, tightened(sim, factor), allow);
  return r.verdict;
}

CheckReport check_estimate(const SystemModel& sys, const EstimateSpec& spec,
                           const std::vector<BatteryItem>& battery, const BatteryPlan& plan,
                           const Allowance& allow) {
  spec.validate(sys);
  if (battery.empty()) throw std::invalid_argument("check: empty battery");
  CheckReport rep;
  rep.check = to_string(spec.kind);
  rep.metrics["gain_slots"] = spec.slots_used(sys);
  rep.metrics["horizon"] = plan.horizon;
  rep.metrics["items"] = static_cast<double>(battery.size());

  std::vector<ItemResult> results(battery.size());
  parallel_for(
      battery.size(),
      [&](std::size_t i) {
        ItemResult r = run_item(sys, spec, battery[i], plan.horizon, plan.sim, allow);
        // Candidate violations are confirmed at a tighter tolerance; the
        // tighter run is the one that counts.
        if (!r.skipped && r.verdict.margin < 0.0) {
          Witness w{i, battery[i], plan.horizon, 0, 0, 0};
          r.verdict = replay_witness(sys, spec, w, plan.sim, 10.0, allow);
        }
        results[i] = std::move(r);
      },
      plan.threads);

  std::map<std::string, std::size_t> note_counts;
  std::optional<std::size_t> worst;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const ItemResult& r = results[i];
    if (r.escaped) ++rep.escaped;
    if (r.skipped) {
      ++rep.skipped;
      ++note_counts[r.note];
      continue;
    }
    ++rep.trajectories;
    rep.knots += r.verdict.knots;
    if (r.verdict.knots > 0 && (!worst || r.verdict.margin < results[*worst].verdict.margin))
      worst = i;
  }
  for (const auto& [note, count] : note_counts)
    rep.notes.push_back(std::to_string(count) + " item(s) skipped: " + note);
  if (worst) {
    const TrajectoryVerdict& v = results[*worst].verdict;
    rep.worst_margin = v.margin;
    if (v.margin < 0.0) {
      rep.verdict = Verdict::Falsified;
      rep.witness = Witness{*worst, battery[*worst], plan.horizon, v.t, v.lhs, v.rhs};
    }
  }
  return rep;
}

CheckReport check_estimate(const SystemModel& sys, const EstimateSpec& spec,
                           const BatteryPlan& plan, const Allowance& allow) {
  auto battery = spec.kind == EstimateKind::Incremental ? expand_paired_battery(sys, plan)
                                                        : expand_battery(sys, plan);
  return check_estimate(sys, spec, battery, plan, allow);
}

CheckReport check_iiuoss(const SystemModel& sys, const ComparisonFn& chi,
                         const ComparisonFn& kappa, const ComparisonFn& gamma,
                         const BatteryPlan& plan, const Allowance& allow) {
  EstimateSpec spec;
  spec.kind = EstimateKind::iiUOSS;
  spec.chi = chi;
  spec.kappa = kappa;
  spec.gamma = gamma;
  return check_estimate(sys, spec, plan, allow);
}

CheckReport check_incremental(const SystemModel& sys, const EstimateSpec& spec,
                              const std::vector<BatteryItem>& pairs, const BatteryPlan& plan,
                              const Allowance& allow) {
  if (spec.kind != EstimateKind::Incremental)
    throw std::invalid_argument("check_incremental: spec kind must be dUIOSS");
  for (const auto& it : pairs)
    if (!it.x0_pair || !it.u_pair)
      throw std::invalid_argument("check_incremental: battery item without a partner");
  return check_estimate(sys, spec, pairs, plan, allow);
}

ComparisonFn gasmo_margin_from_uoss(const KLFn& beta, const ComparisonFn& gamma2) {
  ComparisonFn theta = max(beta.at_zero(), ComparisonFn::identity());
  ComparisonFn rho = scale(1.01, compose(theta, scale(4.0, gamma2)));
  if (!rho.unbounded()) rho = max(rho, ComparisonFn::identity());
  return rho;
}

ComparisonFn stability_margin(const KLFn& beta, const ComparisonFn& gamma1) {
  if (!gamma1.unbounded())
    throw std::domain_error("stability_margin: gamma1 must be class K-infinity");
  ComparisonFn alpha = max(beta.at_zero(), ComparisonFn::identity());
  return scale(0.99, compose(invert(gamma1), scale(0.25, invert(alpha))));
}

}  // namespace ioss
