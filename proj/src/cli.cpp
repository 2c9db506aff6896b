#include "ioss/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ioss/fixtures.hpp"
#include "ioss/lyapunov.hpp"

namespace ioss {

namespace {

const std::set<std::string> kTasks = {"simulate", "check", "lyapunov", "linear", "observe", "valuefn"};

std::string at(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

double num(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

double num_or(const Json& block, const std::string& key, double fallback, const std::string& path) {
  return block.contains(key) ? num(block[key], at(path, key)) : fallback;
}

int int_or(const Json& block, const std::string& key, int fallback, const std::string& path) {
  if (!block.contains(key)) return fallback;
  double v = num(block[key], at(path, key));
  if (v != std::floor(v)) throw ConfigError(at(path, key), "expected an integer");
  return static_cast<int>(v);
}

const Json& require(const Json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(at(path, key), "missing");
  return *it;
}

void only_keys(const Json& j, const std::set<std::string>& allowed, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(at(path, it.key()), "unknown key");
}

template <class F>
auto guarded(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  } catch (const std::domain_error& e) {
    throw ConfigError(path, e.what());
  }
}

double trapezoid_norm(const Trajectory& tr) {
  double s = 0.0;
  for (std::size_t k = 1; k < tr.times.size(); ++k)
    s += 0.5 * (tr.times[k] - tr.times[k - 1]) * (tr.states[k].norm() + tr.states[k - 1].norm());
  return s;
}

Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

// Everything a task needs from the top level of the config.
struct Context {
  Json config;  // with seed and tolerance resolved
  std::string task;
  Json block;
  SystemModel sys;
  std::optional<LinearSystem> linear;
  std::optional<std::uint64_t> seed;
  std::optional<double> tolerance;
  bool seed_from_flag = false;
};

// A --seed flag also overrides seeds given inside battery blocks.
BatteryPlan battery(const Context& c, const Json& j, const std::string& path) {
  Json b = j;
  if (c.seed_from_flag && b.is_object()) b.erase("seed");
  return battery_from_json(b, path, c.seed);
}

Context make_context(const std::string& task, const Json& config, const CliOptions& opts) {
  if (!config.is_object()) throw ConfigError("", "config must be a JSON object");
  std::set<std::string> allowed = {"system", "task", "seed", "tolerance"};
  allowed.insert(task);
  for (auto it = config.begin(); it != config.end(); ++it) {
    if (kTasks.count(it.key()) && it.key() != task)
      throw ConfigError(it.key(), "block for a different task; one task per config");
    if (!allowed.count(it.key())) throw ConfigError(it.key(), "unknown key");
  }
  if (config.contains("task")) {
    const Json& t = config["task"];
    if (!t.is_string() || t.get<std::string>() != task)
      throw ConfigError("task", "does not match the subcommand '" + task + "'");
  }
  const Json& sj = require(config, "system", "");
  Context c{config, task, config.value(task, Json::object()), system_from_json(sj, "system"),
            linear_system_from_json(sj, "system"), std::nullopt, std::nullopt};
  if (config.contains("seed")) {
    double s = num(config["seed"], "seed");
    if (s < 0 || s != std::floor(s)) throw ConfigError("seed", "expected a nonnegative integer");
    c.seed = static_cast<std::uint64_t>(s);
  }
  if (opts.seed) {
    c.seed = opts.seed;
    c.seed_from_flag = true;
    if (c.config[task].is_object() && c.config[task].contains("battery") && c.config[task]["battery"].is_object())
      c.config[task]["battery"].erase("seed");
  }
  if (config.contains("tolerance")) c.tolerance = num(config["tolerance"], "tolerance");
  if (opts.tolerance) c.tolerance = opts.tolerance;
  if (c.tolerance && !(*c.tolerance > 0.0)) throw ConfigError("tolerance", "must be positive");
  if (c.seed) c.config["seed"] = *c.seed;
  if (c.tolerance) c.config["tolerance"] = *c.tolerance;
  c.config["task"] = task;
  if (!c.block.is_object()) throw ConfigError(task, "expected an object");
  return c;
}

Json witness_file(const Context& c, const Witness& w) {
  return Json{{"task", c.task}, {"config", c.config}, {"witness", to_json(w)}};
}

// ---- candidates and grids ------------------------------------------------

struct CandidateBuild {
  LyapCandidate cand;
  std::optional<QuadraticCertificate> cert;
};

CandidateBuild candidate_from_json(const Json& j, const Context& c, const std::string& path) {
  if (!j.is_object() || j.size() != 1)
    throw ConfigError(path, "expected {\"quadratic\": {...}} or {\"certificate\": {...}}");
  const std::string kind = j.begin().key();
  const Json& body = j.begin().value();
  const std::string p = at(path, kind);
  if (kind == "quadratic") {
    only_keys(body, {"P", "alpha", "sigma1", "sigma2", "chi1"}, p);
    Mat P = mat_from_json(require(body, "P", p), at(p, "P"));
    if (P.rows() != c.sys.n() || P.cols() != c.sys.n())
      throw ConfigError(at(p, "P"), "expected an n x n matrix");
    auto gain = [&](const char* key) {
      return body.contains(key) ? comparison_from_json(body[key], at(p, key)) : ComparisonFn::zero();
    };
    CandidateBuild b{guarded(p, [&] {
                       return quadratic_candidate(P, comparison_from_json(require(body, "alpha", p), at(p, "alpha")),
                                                  gain("sigma1"), gain("sigma2"));
                     }),
                     std::nullopt};
    if (body.contains("chi1")) b.cand.chi1 = comparison_from_json(body["chi1"], at(p, "chi1"));
    return b;
  }
  if (kind == "certificate") {
    if (!c.linear) throw ConfigError(p, "needs a linear system");
    only_keys(body, {"L"}, p);
    Mat L = mat_from_json(require(body, "L", p), at(p, "L"));
    QuadraticCertificate cert = guarded(at(p, "L"), [&] { return synthesize_certificate(*c.linear, L); });
    return {certificate_candidate(cert), cert};
  }
  throw ConfigError(path, "unknown candidate form '" + kind + "'");
}

DissipationGrid grid_from_json(const Json& j, const SystemModel& sys, const std::string& path) {
  Json g = j.is_null() ? Json::object() : j;
  only_keys(g, {"half_width", "per_axis", "control_radius", "control_points"}, path);
  double hw = num_or(g, "half_width", 3.0, path);
  int per = int_or(g, "per_axis", sys.n() == 1 ? 201 : sys.n() == 2 ? 41 : 13, path);
  double cr = num_or(g, "control_radius", 2.0, path);
  int cp = int_or(g, "control_points", 21, path);
  if (!(hw > 0.0) || per < 2) throw ConfigError(path, "need half_width > 0 and per_axis >= 2");
  DissipationGrid grid;
  grid.states = box_grid(sys.n(), hw, per);
  if (sys.m_u() > 0) grid.controls = ball_grid(sys.m_u(), cr, cp);
  return grid;
}

// ---- tasks ----------------------------------------------------------------

TaskResult run_simulate(const Context& c) {
  const std::string p = "simulate";
  only_keys(c.block, {"x0", "horizon", "u", "w", "ode"}, p);
  Vec x0 = vec_from_json(require(c.block, "x0", p), at(p, "x0"));
  if (x0.size() != c.sys.n()) throw ConfigError(at(p, "x0"), "state dimension mismatch");
  double horizon = num(require(c.block, "horizon", p), at(p, "horizon"));
  if (!(horizon > 0.0)) throw ConfigError(at(p, "horizon"), "must be positive");
  Signal u = c.block.contains("u") ? signal_from_json(c.block["u"], c.sys.m_u(), at(p, "u"))
                                   : Signal::zero(c.sys.m_u());
  Signal w = c.block.contains("w") ? signal_from_json(c.block["w"], c.sys.m_w(), at(p, "w"))
                                   : Signal::zero(c.sys.m_w());
  SimOptions sim;
  if (c.block.contains("ode")) sim.ode = ode_from_json(c.block["ode"], at(p, "ode"));
  Trajectory tr = simulate(c.sys, x0, u, w, horizon, sim);

  TaskResult r;
  r.report = Json{{"task", "simulate"},
                  {"system", c.sys.name()},
                  {"x0", to_json(x0)},
                  {"horizon", horizon},
                  {"termination", to_string(tr.termination)},
                  {"t_end", tr.times.back()},
                  {"t_escape", finite_or_null(tr.t_escape)},
                  {"knots", tr.times.size()},
                  {"final_state", to_json(tr.states.back())},
                  {"integral_norm", trapezoid_norm(tr)}};
  r.artifacts["trajectory.csv"] = trajectory_csv(tr);
  return r;
}

struct CheckSetup {
  EstimateSpec spec;
  BatteryPlan plan;
  Allowance allow;
  double replay_factor = 10.0;
};

CheckSetup check_setup(const Context& c) {
  const std::string p = "check";
  only_keys(c.block, {"estimate", "battery", "allowance", "replay_factor"}, p);
  CheckSetup s;
  s.spec = estimate_from_json(require(c.block, "estimate", p), at(p, "estimate"));
  guarded(at(p, "estimate"), [&] {
    s.spec.validate(c.sys);
    return 0;
  });
  s.plan = battery(c, c.block.value("battery", Json::object()), at(p, "battery"));
  if (c.block.contains("allowance")) {
    const Json& a = c.block["allowance"];
    only_keys(a, {"abs", "rel", "rel_integral"}, at(p, "allowance"));
    s.allow.abs = num_or(a, "abs", s.allow.abs, at(p, "allowance"));
    s.allow.rel = num_or(a, "rel", s.allow.rel, at(p, "allowance"));
    s.allow.rel_integral = num_or(a, "rel_integral", s.allow.rel_integral, at(p, "allowance"));
  }
  if (c.tolerance) s.allow.rel = s.allow.rel_integral = *c.tolerance;
  s.replay_factor = num_or(c.block, "replay_factor", 10.0, p);
  return s;
}

TaskResult run_check(const Context& c) {
  CheckSetup s = check_setup(c);
  CheckReport rep;
  if (s.spec.kind == EstimateKind::iiUOSS)
    rep = check_iiuoss(c.sys, *s.spec.chi, *s.spec.kappa, *s.spec.gamma, s.plan, s.allow);
  else if (s.spec.kind == EstimateKind::Incremental)
    rep = check_incremental(c.sys, s.spec, expand_paired_battery(c.sys, s.plan), s.plan, s.allow);
  else
    rep = check_estimate(c.sys, s.spec, s.plan, s.allow);

  TaskResult r;
  r.report = Json{{"task", "check"},
                  {"system", c.sys.name()},
                  {"estimate", to_json(s.spec)},
                  {"battery", to_json(s.plan)},
                  {"allowance", {{"abs", s.allow.abs}, {"rel", s.allow.rel}, {"rel_integral", s.allow.rel_integral}}},
                  {"result", to_json(rep)}};
  if (rep.verdict == Verdict::Falsified && rep.witness) {
    r.exit_code = kExitFalsified;
    r.artifacts["witness.json"] = witness_file(c, *rep.witness).dump(2) + "\n";
    const BatteryItem& in = rep.witness->input;
    if (in.x0_pair) {
      auto [a, b] = simulate_pair(c.sys, in, rep.witness->horizon, s.plan.sim);
      r.artifacts["witness.csv"] = trajectory_csv(a);
      r.artifacts["witness_pair.csv"] = trajectory_csv(b);
    } else {
      r.artifacts["witness.csv"] =
          trajectory_csv(simulate(c.sys, in.x0, in.u, in.w, rep.witness->horizon, s.plan.sim));
    }
  } else if (rep.verdict == Verdict::Falsified) {
    r.exit_code = kExitFalsified;
  }
  return r;
}

PointwiseOptions pointwise_options(const Context& c) {
  PointwiseOptions o;
  if (c.tolerance) o.tol_abs = *c.tolerance;
  return o;
}

void add_pointwise_witness(TaskResult& r, const Context& c, const CheckReport& rep) {
  if (rep.verdict != Verdict::Falsified) return;
  r.exit_code = kExitFalsified;
  if (rep.witness && !r.artifacts.count("witness.json"))
    r.artifacts["witness.json"] = witness_file(c, *rep.witness).dump(2) + "\n";
}

TaskResult run_lyapunov(const Context& c) {
  const std::string p = "lyapunov";
  only_keys(c.block, {"candidate", "grid", "mode", "hji"}, p);
  CandidateBuild cb = candidate_from_json(require(c.block, "candidate", p), c, at(p, "candidate"));
  DissipationGrid grid = grid_from_json(c.block.value("grid", Json()), c.sys, at(p, "grid"));
  std::string mode = c.block.value("mode", std::string("dissipation"));
  PointwiseOptions po = pointwise_options(c);

  TaskResult r;
  r.report = Json{{"task", "lyapunov"}, {"system", c.sys.name()}, {"mode", mode}};
  auto record = [&](const char* key, const CheckReport& rep) {
    r.report[key] = to_json(rep);
    add_pointwise_witness(r, c, rep);
  };
  if (mode == "dissipation") {
    if (cb.cand.chi1) throw ConfigError(at(p, "mode"), "implication-form candidate; use mode \"reconstruct\"");
    record("bounds", check_bounds(cb.cand, grid.states, po));
    record("dissipation", verify_dissipation(c.sys, cb.cand, grid, po));
  } else if (mode == "rescale") {
    Rescaled res = guarded(at(p, "candidate"), [&] { return exp_decay_rescale(cb.cand); });
    Json rho = Json::array();
    for (double s : {0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0}) rho.push_back({s, res.rho(s)});
    r.report["rho_samples"] = rho;
    r.report["diagnostics"] = res.diagnostics;
    record("dissipation", verify_dissipation(c.sys, res.W, grid, po));
  } else if (mode == "hji") {
    const Json h = c.block.value("hji", Json::object());
    only_keys(h, {"sigma1", "sigma2", "u_points"}, at(p, "hji"));
    HjiOptions ho;
    ho.pointwise = po;
    ho.u_points = int_or(h, "u_points", ho.u_points, at(p, "hji"));
    ComparisonFn s1 = comparison_from_json(require(h, "sigma1", at(p, "hji")), at(p, "hji.sigma1"));
    ComparisonFn s2 = h.contains("sigma2") ? comparison_from_json(h["sigma2"], at(p, "hji.sigma2"))
                                          : ComparisonFn::zero();
    CheckReport rep = guarded(at(p, "mode"), [&] { return hji_check(c.sys, cb.cand, s1, s2, grid.states, ho); });
    record("hji", rep);
  } else if (mode == "reconstruct") {
    if (!cb.cand.chi1) throw ConfigError(at(p, "candidate"), "reconstruct needs chi1");
    Reconstruction rec = remark23_reconstruct(c.sys, cb.cand);
    r.report["sigma1_knots"] = {{"r", rec.r}, {"sigma_hat", rec.sigma_hat}};
    r.report["flags"] = rec.flags;
    record("dissipation", verify_dissipation(c.sys, rec.candidate, grid, po));
  } else {
    throw ConfigError(at(p, "mode"), "expected dissipation, rescale, hji or reconstruct");
  }
  return r;
}

TaskResult run_linear(const Context& c) {
  const std::string p = "linear";
  if (!c.linear) throw ConfigError("system", "the linear task needs a linear system");
  only_keys(c.block, {"L", "grid"}, p);
  std::optional<Mat> L;
  if (c.block.contains("L")) L = mat_from_json(c.block["L"], at(p, "L"));
  DetectabilityVerdict det = guarded(at(p, "L"), [&] { return detectability_check(*c.linear, L); });
  TaskResult r;
  r.report = Json{{"task", "linear"},
                  {"system", c.sys.name()},
                  {"detectable", det.detectable},
                  {"diagnostic", det.diagnostic}};
  if (!L) r.report["observable_dim"] = det.observable_dim;
  if (!det.detectable || !det.L) return r;
  QuadraticCertificate cert = guarded(at(p, "L"), [&] { return synthesize_certificate(*c.linear, *det.L); });
  LinearIossGains g = linear_ioss_gains(cert);
  r.report["certificate"] = to_json(cert);
  r.report["uioss_gains"] = {{"beta", to_json(g.beta)}, {"gamma1", to_json(g.gamma1)}, {"gamma2", to_json(g.gamma2)}};
  DissipationGrid grid = grid_from_json(c.block.value("grid", Json()), c.sys, at(p, "grid"));
  CheckReport rep = verify_dissipation(c.sys, certificate_candidate(cert), grid, pointwise_options(c));
  r.report["dissipation"] = to_json(rep);
  add_pointwise_witness(r, c, rep);
  return r;
}

struct ObserveSetup {
  LyapCandidate W;
  NormEstimator est;
};

ObserveSetup observe_setup(const Context& c) {
  const std::string p = "observe";
  CandidateBuild cb = candidate_from_json(require(c.block, "candidate", p), c, at(p, "candidate"));
  Rescaled res = guarded(at(p, "candidate"), [&] { return exp_decay_rescale(cb.cand); });
  return {res.W, build_estimator(res.W)};
}

double gap_factor(const Context& c) { return c.tolerance ? *c.tolerance : 10.0; }

TaskResult run_observe(const Context& c) {
  const std::string p = "observe";
  only_keys(c.block, {"candidate", "x0", "zeta0", "horizon", "u", "w", "ode", "battery"}, p);
  ObserveSetup s = observe_setup(c);
  Vec x0 = vec_from_json(require(c.block, "x0", p), at(p, "x0"));
  if (x0.size() != c.sys.n()) throw ConfigError(at(p, "x0"), "state dimension mismatch");
  double zeta0 = num_or(c.block, "zeta0", 0.0, p);
  if (zeta0 < 0.0) throw ConfigError(at(p, "zeta0"), "must be nonnegative");
  double horizon = num(require(c.block, "horizon", p), at(p, "horizon"));
  Signal u = c.block.contains("u") ? signal_from_json(c.block["u"], c.sys.m_u(), at(p, "u"))
                                   : Signal::zero(c.sys.m_u());
  Signal w = c.block.contains("w") ? signal_from_json(c.block["w"], c.sys.m_w(), at(p, "w"))
                                   : Signal::zero(c.sys.m_w());
  OdeOptions ode = c.block.contains("ode") ? ode_from_json(c.block["ode"], at(p, "ode")) : OdeOptions{};
  CoupledRun run = run_coupled(c.sys, s.est, x0, zeta0, u, w, horizon, ode);
  GapCheck gap = check_gap_decay(run, s.W, gap_factor(c));

  TaskResult r;
  r.report = Json{{"task", "observe"},
                  {"system", c.sys.name()},
                  {"termination", to_string(run.plant.termination)},
                  {"knots", run.plant.times.size()},
                  {"gap", {{"worst_margin", finite_or_null(gap.worst_margin)},
                           {"worst_t", gap.worst_t},
                           {"steps", gap.steps},
                           {"violations", gap.violations}}}};
  r.artifacts["trace.csv"] = coupled_csv(run);
  if (gap.violations) r.exit_code = kExitFalsified;
  if (c.block.contains("battery")) {
    BatteryPlan plan = battery(c, c.block["battery"], at(p, "battery"));
    CheckReport contract = check_estimator_contract(c.sys, s.est, s.W, plan, zeta0);
    CheckReport uioss = verify_estimator_implies_uioss(c.sys, s.est, plan);
    r.report["contract"] = to_json(contract);
    r.report["uioss"] = to_json(uioss);
    if (contract.verdict == Verdict::Falsified || uioss.verdict == Verdict::Falsified)
      r.exit_code = kExitFalsified;
    if (contract.verdict == Verdict::Falsified && contract.witness) {
      Json wf = witness_file(c, *contract.witness);
      wf["check"] = "contract";
      r.artifacts["witness.json"] = wf.dump(2) + "\n";
    } else if (uioss.verdict == Verdict::Falsified && uioss.witness) {
      Json wf = witness_file(c, *uioss.witness);
      wf["check"] = "uioss";
      r.artifacts["witness.json"] = wf.dump(2) + "\n";
    }
  }
  return r;
}

struct ValueSetup {
  GeometrySets geo;
  GridValueFn v0;
  V0DissipationOptions dopts;
};

ValueSetup valuefn_setup(const Context& c) {
  const std::string p = "valuefn";
  only_keys(c.block, {"grid", "rho", "Xi", "mu1", "mu2", "dt", "tol", "max_sweeps", "mixture",
                      "dissipation", "inf_convolve"},
            p);
  const Json& gj = require(c.block, "grid", p);
  only_keys(gj, {"lo", "hi", "counts"}, at(p, "grid"));
  Vec lo = vec_from_json(require(gj, "lo", at(p, "grid")), at(p, "grid.lo"));
  Vec hi = vec_from_json(require(gj, "hi", at(p, "grid")), at(p, "grid.hi"));
  Vec counts = vec_from_json(require(gj, "counts", at(p, "grid")), at(p, "grid.counts"));
  std::vector<int> cnt;
  for (Eigen::Index i = 0; i < counts.size(); ++i) cnt.push_back(static_cast<int>(counts[i]));
  StateGrid grid = guarded(at(p, "grid"), [&] { return StateGrid(lo, hi, cnt); });
  if (grid.dim() != c.sys.n()) throw ConfigError(at(p, "grid"), "grid and state dimensions differ");

  ComparisonFn rho = comparison_from_json(require(c.block, "rho", p), at(p, "rho"));
  const SystemModel& sys = c.sys;
  GeometrySets geo(rho, [&sys](const Vec& x) { return sys.h(x); }, grid);

  ValueIterationOptions vo;
  vo.dt = num_or(c.block, "dt", 0.0, p);
  vo.tol = c.tolerance ? *c.tolerance : num_or(c.block, "tol", vo.tol, p);
  vo.max_sweeps = static_cast<std::size_t>(int_or(c.block, "max_sweeps", static_cast<int>(vo.max_sweeps), p));
  if (c.block.contains("mixture")) {
    if (!c.block["mixture"].is_boolean()) throw ConfigError(at(p, "mixture"), "expected a boolean");
    vo.mixture = c.block["mixture"].get<bool>();
  }
  GridValueFn v0 = [&] {
    if (c.block.contains("mu1")) {
      ComparisonFn mu1 = comparison_from_json(c.block["mu1"], at(p, "mu1"));
      ComparisonFn mu2 = comparison_from_json(require(c.block, "mu2", p), at(p, "mu2"));
      return compute_v0(sys, geo, mu1, mu2, vo);
    }
    ComparisonFn Xi = c.block.contains("Xi") ? comparison_from_json(c.block["Xi"], at(p, "Xi"))
                                              : ComparisonFn::identity();
    return compute_v0(sys, geo, Xi, vo);
  }();

  V0DissipationOptions d;
  if (c.block.contains("dissipation")) {
    const Json& dj = c.block["dissipation"];
    only_keys(dj, {"starts", "count", "span", "tol_factor", "switching_signals"}, at(p, "dissipation"));
    d.span = num_or(dj, "span", d.span, at(p, "dissipation"));
    d.tol_factor = num_or(dj, "tol_factor", d.tol_factor, at(p, "dissipation"));
    d.switching_signals = static_cast<std::size_t>(
        int_or(dj, "switching_signals", static_cast<int>(d.switching_signals), at(p, "dissipation")));
  }
  if (c.seed) d.seed = *c.seed;
  return {geo, v0, d};
}

// Starts for the dissipation test: explicit, or `count` nodes of E \ (D u B)
// spread evenly over the node order.
std::vector<Vec> dissipation_starts(const Json& dj, const ValueSetup& s, const std::string& path) {
  std::vector<Vec> starts;
  if (dj.contains("starts")) {
    const Json& a = dj["starts"];
    if (!a.is_array()) throw ConfigError(at(path, "starts"), "expected an array of states");
    for (std::size_t i = 0; i < a.size(); ++i)
      starts.push_back(vec_from_json(a[i], at(path, "starts") + "[" + std::to_string(i) + "]"));
    return starts;
  }
  int count = int_or(dj, "count", 50, path);
  std::vector<Vec> pool;
  for (std::size_t i = 0; i < s.v0.grid.size(); ++i) {
    Vec x = s.v0.grid.node(i);
    if (!s.geo.in_D(x) && !s.geo.in_B(x) && !s.v0.unreached[i]) pool.push_back(x);
  }
  if (pool.empty()) return starts;
  for (int k = 0; k < count; ++k) {
    std::size_t idx = static_cast<std::size_t>((static_cast<double>(k) + 0.5) * pool.size() / count);
    starts.push_back(pool[std::min(idx, pool.size() - 1)]);
  }
  return starts;
}

TaskResult run_valuefn(const Context& c) {
  const std::string p = "valuefn";
  ValueSetup s = valuefn_setup(c);
  const GridValueFn& v = s.v0;
  TaskResult r;
  r.report = Json{{"task", "valuefn"},
                  {"system", c.sys.name()},
                  {"nodes", v.values.size()},
                  {"dt", v.dt},
                  {"sweeps", v.sweeps},
                  {"residual", v.residual},
                  {"converged", v.converged},
                  {"unreached", v.unreached_count()},
                  {"max_value", v.max_value()},
                  {"monotonicity_defect", v.monotonicity_defect},
                  {"max_speed", v.max_speed}};
  r.artifacts["values.csv"] = grid_value_csv(v);
  if (c.block.contains("dissipation")) {
    std::vector<Vec> starts = dissipation_starts(c.block["dissipation"], s, at(p, "dissipation"));
    CheckReport rep = guarded(at(p, "dissipation"), [&] {
      return check_v0_dissipation(v, c.sys, s.geo, starts, s.dopts);
    });
    r.report["dissipation"] = to_json(rep);
    if (rep.verdict == Verdict::Falsified) {
      r.exit_code = kExitFalsified;
      if (rep.witness) r.artifacts["witness.json"] = witness_file(c, *rep.witness).dump(2) + "\n";
    }
  }
  if (c.block.contains("inf_convolve")) {
    const Json& ij = c.block["inf_convolve"];
    only_keys(ij, {"alpha"}, at(p, "inf_convolve"));
    double alpha = num(require(ij, "alpha", at(p, "inf_convolve")), at(p, "inf_convolve.alpha"));
    GridValueFn va = guarded(at(p, "inf_convolve.alpha"), [&] { return inf_convolve(v, alpha); });
    double gap = 0.0, low = 0.0;
    for (std::size_t i = 0; i < v.values.size(); ++i) {
      gap = std::max(gap, v.values[i] - va.values[i]);
      low = std::min(low, v.values[i] - va.values[i]);
    }
    double omega = modulus_of_continuity(v, alpha * std::sqrt(2.0 * v.max_value()));
    r.report["inf_convolve"] = {{"alpha", alpha}, {"max_gap", gap}, {"min_gap", low}, {"omega_bound", omega}};
    r.artifacts["smoothed.csv"] = grid_value_csv(va);
  }
  return r;
}

TaskResult run_replay(const Json& file, const CliOptions& opts) {
  const std::string& task = require(file, "task", "").get_ref<const std::string&>();
  if (!kTasks.count(task)) throw ConfigError("task", "unknown task");
  CliOptions inner = opts;
  inner.seed.reset();
  inner.tolerance.reset();
  Context c = make_context(task, require(file, "config", ""), inner);
  Witness w = witness_from_json(require(file, "witness", ""), c.sys, "witness");

  TaskResult r;
  r.report = Json{{"task", "replay"}, {"of", task}, {"system", c.sys.name()}};
  bool falsified = false;
  if (task == "check") {
    CheckSetup s = check_setup(c);
    TrajectoryVerdict v = replay_witness(c.sys, s.spec, w, s.plan.sim, s.replay_factor, s.allow);
    r.report["margin"] = finite_or_null(v.margin);
    r.report["t"] = v.t;
    r.report["lhs"] = finite_or_null(v.lhs);
    r.report["rhs"] = finite_or_null(v.rhs);
    falsified = v.margin < 0.0;
  } else if (task == "lyapunov" || task == "linear") {
    DissipationGrid g;
    g.states = {w.input.x0};
    if (c.sys.m_u() > 0) g.controls = {w.input.u(0.0)};
    g.disturbances = {w.input.w(0.0)};
    LyapCandidate cand = [&] {
      if (task == "linear") {
        std::optional<Mat> L;
        if (c.block.contains("L")) L = mat_from_json(c.block["L"], "linear.L");
        DetectabilityVerdict det = detectability_check(*c.linear, L);
        return certificate_candidate(synthesize_certificate(*c.linear, *det.L));
      }
      CandidateBuild cb = candidate_from_json(require(c.block, "candidate", "lyapunov"), c, "lyapunov.candidate");
      std::string mode = c.block.value("mode", std::string("dissipation"));
      if (mode == "rescale") return exp_decay_rescale(cb.cand).W;
      if (mode == "reconstruct") return remark23_reconstruct(c.sys, cb.cand).candidate;
      return cb.cand;
    }();
    CheckReport rep = verify_dissipation(c.sys, cand, g, pointwise_options(c));
    r.report["result"] = to_json(rep);
    falsified = rep.verdict == Verdict::Falsified;
  } else if (task == "observe") {
    ObserveSetup s = observe_setup(c);
    double zeta0 = num_or(c.block, "zeta0", 0.0, "observe");
    BatteryPlan plan = battery(c, c.block["battery"], "observe.battery");
    if (file.value("check", std::string("contract")) == "uioss") {
      TrajectoryVerdict v = replay_witness(c.sys, assembled_uioss_spec(s.est), w, plan.sim);
      r.report["margin"] = finite_or_null(v.margin);
      falsified = v.margin < 0.0;
    } else {
      OdeOptions ode = plan.sim.ode;
      ode.rtol /= 10.0;
      ode.atol /= 10.0;
      CoupledRun run = run_coupled(c.sys, s.est, w.input.x0, zeta0, w.input.u, w.input.w, w.horizon, ode);
      GapCheck gap = check_gap_decay(run, s.W, gap_factor(c));
      Allowance allow;
      std::size_t bound_violations = 0;
      for (std::size_t k = 0; k < run.bound.size(); ++k) {
        double lhs = run.plant.states[k].norm(), rhs = run.bound[k];
        if (rhs - lhs + allow.credit(lhs, rhs, false) < 0.0) ++bound_violations;
      }
      r.report["gap_violations"] = gap.violations;
      r.report["bound_violations"] = bound_violations;
      falsified = gap.violations + bound_violations > 0;
    }
  } else if (task == "valuefn") {
    ValueSetup s = valuefn_setup(c);
    BatteryItem item = w.input;
    CheckReport rep = check_v0_dissipation(s.v0, c.sys, s.geo, std::vector<BatteryItem>{item}, s.dopts);
    r.report["result"] = to_json(rep);
    falsified = rep.verdict == Verdict::Falsified;
  } else {
    throw ConfigError("task", "no witness replay for '" + task + "'");
  }
  r.report["verdict"] = falsified ? "Falsified" : "NotReproduced";
  r.exit_code = falsified ? kExitFalsified : kExitOk;
  return r;
}

}  // namespace

std::optional<LinearSystem> linear_system_from_json(const Json& j, const std::string& path) {
  if (j.is_string()) {
    if (j.get<std::string>() == "linear-double-integrator") return double_integrator();
    return std::nullopt;
  }
  if (j.is_object() && j.contains("fixture")) return linear_system_from_json(j["fixture"], at(path, "fixture"));
  if (j.is_object() && j.contains("linear")) {
    const Json& l = j["linear"];
    const std::string p = at(path, "linear");
    only_keys(l, {"A", "B", "C"}, p);
    LinearSystem s;
    s.A = mat_from_json(require(l, "A", p), at(p, "A"));
    s.B = l.contains("B") ? mat_from_json(l["B"], at(p, "B")) : Mat::Zero(s.A.rows(), 0);
    s.C = l.contains("C") ? mat_from_json(l["C"], at(p, "C")) : Mat::Zero(0, s.A.rows());
    guarded(p, [&] {
      s.validate();
      return 0;
    });
    return s;
  }
  return std::nullopt;
}

SystemModel system_from_json(const Json& j, const std::string& path) {
  if (j.is_string()) {
    std::string name = j.get<std::string>();
    for (const std::string& f : fixture_names())
      if (f == name) return make_fixture(name);
    throw ConfigError(path, "unknown fixture '" + name + "'");
  }
  if (j.is_object() && j.size() == 1 && j.contains("fixture")) return system_from_json(j["fixture"], at(path, "fixture"));
  if (j.is_object() && j.size() == 1 && j.contains("linear"))
    return to_model(*linear_system_from_json(j, path), "linear");
  throw ConfigError(path, "expected a fixture name, {\"fixture\": name} or {\"linear\": {A, B, C}}");
}

TaskResult run_task(const std::string& task, const Json& config, const CliOptions& opts) {
  if (task == "replay") return run_replay(config, opts);
  if (!kTasks.count(task)) throw ConfigError("task", "unknown task '" + task + "'");
  Context c = make_context(task, config, opts);
  if (task == "simulate") return run_simulate(c);
  if (task == "check") return run_check(c);
  if (task == "lyapunov") return run_lyapunov(c);
  if (task == "linear") return run_linear(c);
  if (task == "observe") return run_observe(c);
  return run_valuefn(c);
}

int run_cli(const std::string& task, const CliOptions& opts, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  Json config;
  try {
    std::ifstream in(opts.config_path);
    if (!in) {
      err << "error: cannot open config '" << opts.config_path << "'\n";
      return kExitUsage;
    }
    config = Json::parse(in);
  } catch (const Json::parse_error& e) {
    err << "error: " << opts.config_path << ": " << e.what() << "\n";
    return kExitUsage;
  }
  TaskResult r;
  try {
    r = run_task(task, config, opts);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) {
    err << "error: cannot create '" << opts.out_dir << "': " << ec.message() << "\n";
    return kExitUsage;
  }
  r.artifacts["report.json"] = r.report.dump(2) + "\n";
  for (const auto& [name, body] : r.artifacts) {
    std::ofstream f(fs::path(opts.out_dir) / name, std::ios::binary);
    f << body;
    if (!f) {
      err << "error: cannot write " << name << "\n";
      return kExitUsage;
    }
  }
  std::string verdict = r.exit_code == kExitFalsified ? "Falsified" : "ok";
  out << task << ": " << verdict << " (" << opts.out_dir << "/report.json)\n";
  return r.exit_code;
}

}  // namespace ioss
