#include "ioss/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace ioss {

namespace {

std::string at(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string at(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

double num(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

std::vector<double> nums(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(num(j[i], at(path, i)));
  return out;
}

const Json& require(const Json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(at(path, key), "missing");
  return *it;
}

// Single-key object {"name": body}.
std::pair<std::string, const Json*> tagged(const Json& j, const std::string& path) {
  if (!j.is_object() || j.size() != 1)
    throw ConfigError(path, "expected an object with exactly one key naming the form");
  return {j.begin().key(), &j.begin().value()};
}

// Rethrows constructor errors (invalid coefficients and the like) at `path`.
template <class F>
auto guarded(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
}

Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

ComparisonFn comparison_from_json(const Json& j, const std::string& path) {
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    if (s == "identity") return ComparisonFn::identity();
    if (s == "zero") return ComparisonFn::zero();
    throw ConfigError(path, "unknown comparison function '" + s + "'");
  }
  auto [name, body] = tagged(j, path);
  const std::string p = at(path, name);
  return guarded(p, [&, name = name, body = body]() -> ComparisonFn {
    if (name == "linear") return ComparisonFn::linear(num(*body, p));
    if (name == "power" || name == "sat_exp" || name == "power_exp") {
      std::vector<double> a = nums(*body, p);
      std::size_t want = name == "power_exp" ? 3 : 2;
      if (a.size() != want) throw ConfigError(p, "expected " + std::to_string(want) + " numbers");
      if (name == "power") return ComparisonFn::power(a[0], a[1]);
      if (name == "sat_exp") return ComparisonFn::sat_exp(a[0], a[1]);
      return ComparisonFn::power_exp(a[0], a[1], a[2]);
    }
    if (name == "table" || name == "log_table") {
      std::vector<double> r = nums(require(*body, "r", p), at(p, "r"));
      std::vector<double> v = nums(require(*body, "v", p), at(p, "v"));
      if (name == "log_table") return ComparisonFn::log_table(r, v);
      bool unbounded = body->value("unbounded", true);
      return ComparisonFn::table(r, v, unbounded);
    }
    if (name == "compose" || name == "max" || name == "min" || name == "sum") {
      if (!body->is_array() || body->size() < 2) throw ConfigError(p, "expected at least two functions");
      ComparisonFn acc = comparison_from_json((*body)[0], at(p, 0));
      for (std::size_t i = 1; i < body->size(); ++i) {
        ComparisonFn g = comparison_from_json((*body)[i], at(p, i));
        if (name == "compose") acc = compose(acc, g);
        else if (name == "max") acc = max(acc, g);
        else if (name == "min") acc = min(acc, g);
        else acc = sum(acc, g);
      }
      return acc;
    }
    if (name == "scale") {
      if (!body->is_array() || body->size() != 2) throw ConfigError(p, "expected [c, f]");
      return scale(num((*body)[0], at(p, 0)), comparison_from_json((*body)[1], at(p, 1)));
    }
    if (name == "inverse") return invert(comparison_from_json(*body, p));
    throw ConfigError(path, "unknown comparison form '" + name + "'");
  });
}

Json to_json(const ComparisonFn& f) {
  using K = ComparisonFn::Kind;
  const auto& p = f.params();
  auto children = [&] {
    Json a = Json::array();
    for (const auto& c : f.children()) a.push_back(to_json(c));
    return a;
  };
  switch (f.kind()) {
    case K::Linear:
      if (f.is_zero()) return "zero";
      if (p[0] == 1.0) return "identity";
      return Json{{"linear", p[0]}};
    case K::Power: return Json{{"power", {p[0], p[1]}}};
    case K::SatExp: return Json{{"sat_exp", {p[0], p[1]}}};
    case K::PowerExp: return Json{{"power_exp", {p[0], p[1], p[2]}}};
    case K::Table:
      return Json{{"table", {{"r", f.knots_r()}, {"v", f.knots_v()}, {"unbounded", f.unbounded()}}}};
    case K::LogTable: return Json{{"log_table", {{"r", f.knots_r()}, {"v", f.knots_v()}}}};
    case K::Compose: return Json{{"compose", children()}};
    case K::Max: return Json{{"max", children()}};
    case K::Min: return Json{{"min", children()}};
    case K::Sum: return Json{{"sum", children()}};
  }
  return f.describe();
}

KLFn kl_from_json(const Json& j, const std::string& path) {
  auto [name, body] = tagged(j, path);
  const std::string p = at(path, name);
  return guarded(p, [&, name = name, body = body]() -> KLFn {
    if (name == "factored") {
      if (!body->is_array() || body->size() != 2) throw ConfigError(p, "expected [mu1, mu2]");
      return KLFn::factored(comparison_from_json((*body)[0], at(p, 0)),
                            comparison_from_json((*body)[1], at(p, 1)));
    }
    if (name == "decay") {
      ComparisonFn a = comparison_from_json(require(*body, "a", p), at(p, "a"));
      double b0 = body->contains("b0") ? num((*body)["b0"], at(p, "b0")) : 1.0;
      double b1 = body->contains("b1") ? num((*body)["b1"], at(p, "b1")) : 0.0;
      return KLFn::decay(a, b0, b1);
    }
    if (name == "grid") {
      std::vector<double> r = nums(require(*body, "r", p), at(p, "r"));
      std::vector<double> t = nums(require(*body, "t", p), at(p, "t"));
      const Json& vals = require(*body, "values", p);
      if (!vals.is_array()) throw ConfigError(at(p, "values"), "expected nested arrays");
      std::vector<std::vector<double>> v;
      for (std::size_t i = 0; i < vals.size(); ++i) v.push_back(nums(vals[i], at(at(p, "values"), i)));
      return KLFn::grid(r, t, v);
    }
    if (name == "max") {
      if (!body->is_array() || body->size() < 2) throw ConfigError(p, "expected at least two functions");
      KLFn acc = kl_from_json((*body)[0], at(p, 0));
      for (std::size_t i = 1; i < body->size(); ++i) acc = max(acc, kl_from_json((*body)[i], at(p, i)));
      return acc;
    }
    if (name == "scale") {
      if (!body->is_array() || body->size() != 2) throw ConfigError(p, "expected [c, beta]");
      return scale(num((*body)[0], at(p, 0)), kl_from_json((*body)[1], at(p, 1)));
    }
    throw ConfigError(path, "unknown KL form '" + name + "'");
  });
}

Json to_json(const KLFn& b) {
  using K = KLFn::Kind;
  switch (b.kind()) {
    case K::Factored: return Json{{"factored", {to_json(b.mu1()), to_json(b.mu2())}}};
    case K::Decay:
      return Json{{"decay", {{"a", to_json(b.amplitude())}, {"b0", b.params()[0]}, {"b1", b.params()[1]}}}};
    case K::Grid:
      return Json{{"grid", {{"r", b.grid_r()}, {"t", b.grid_t()}, {"values", b.grid_values()}}}};
    case K::Max: {
      Json a = Json::array();
      for (const auto& c : b.children()) a.push_back(to_json(c));
      return Json{{"max", a}};
    }
    case K::Scaled: return Json{{"scale", {b.params()[0], to_json(b.children()[0])}}};
    case K::Custom: return Json{{"custom", b.name()}, {"description", b.describe()}};
  }
  return b.describe();
}

Vec vec_from_json(const Json& j, const std::string& path) {
  if (j.is_number()) return Vec::Constant(1, j.get<double>());
  std::vector<double> v = nums(j, path);
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Mat mat_from_json(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a nonempty array of rows");
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < j.size(); ++i) rows.push_back(nums(j[i], at(path, i)));
  Mat m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ConfigError(at(path, i), "ragged matrix row");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(i, k) = rows[i][k];
  }
  return m;
}

Json to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(finite_or_null(v[i]));
  return a;
}

Json to_json(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(finite_or_null(m(i, k)));
    a.push_back(row);
  }
  return a;
}

Signal signal_from_json(const Json& j, int dim, const std::string& path) {
  if (j.is_string() && j.get<std::string>() == "zero") return Signal::zero(dim);
  auto [name, body] = tagged(j, path);
  const std::string p = at(path, name);
  auto check = [&](const Vec& v, const std::string& vp) {
    if (v.size() != dim)
      throw ConfigError(vp, "expected dimension " + std::to_string(dim) + ", got " + std::to_string(v.size()));
    return v;
  };
  if (name == "constant") return Signal::constant(check(vec_from_json(*body, p), p));
  if (name == "piecewise") {
    std::vector<double> times = nums(require(*body, "times", p), at(p, "times"));
    const Json& vals = require(*body, "values", p);
    if (!vals.is_array() || vals.size() != times.size())
      throw ConfigError(at(p, "values"), "expected one value per switching time");
    std::vector<Vec> values;
    for (std::size_t i = 0; i < vals.size(); ++i)
      values.push_back(check(vec_from_json(vals[i], at(at(p, "values"), i)), at(at(p, "values"), i)));
    return guarded(p, [&] { return Signal::piecewise(times, values); });
  }
  throw ConfigError(path, "unknown signal form '" + name + "'");
}

Json to_json(const Signal& s) {
  switch (s.kind()) {
    case Signal::Kind::Constant:
      return Json{{"constant", s.dim() ? to_json(s.values().at(0)) : Json::array()}};
    case Signal::Kind::Piecewise: {
      Json vals = Json::array();
      for (const Vec& v : s.values()) vals.push_back(to_json(v));
      return Json{{"piecewise", {{"times", s.times()}, {"values", vals}}}};
    }
    case Signal::Kind::Closure: return Json{{"closure", s.label()}};
  }
  return nullptr;
}

namespace {

struct Slot {
  const char* name;
  std::optional<ComparisonFn> EstimateSpec::*member;
};

const Slot kSlots[] = {
    {"gamma1", &EstimateSpec::gamma1}, {"gamma2", &EstimateSpec::gamma2},
    {"rho", &EstimateSpec::rho},       {"chi", &EstimateSpec::chi},
    {"kappa", &EstimateSpec::kappa},   {"gamma", &EstimateSpec::gamma},
    {"rho1", &EstimateSpec::rho1},     {"chi1", &EstimateSpec::chi1},
    {"chi2", &EstimateSpec::chi2},     {"alpha_x", &EstimateSpec::alpha_x},
};

}  // namespace

EstimateSpec estimate_from_json(const Json& j, const std::string& path) {
  EstimateSpec s;
  const Json& kind = require(j, "kind", path);
  if (!kind.is_string()) throw ConfigError(at(path, "kind"), "expected a string");
  s.kind = guarded(at(path, "kind"), [&] { return estimate_kind_from_string(kind.get<std::string>()); });
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "kind") continue;
    if (key == "beta") {
      s.beta = kl_from_json(it.value(), at(path, key));
      continue;
    }
    if (key == "c") {
      s.c = num(it.value(), at(path, key));
      continue;
    }
    bool found = false;
    for (const Slot& slot : kSlots)
      if (key == slot.name) {
        s.*(slot.member) = comparison_from_json(it.value(), at(path, key));
        found = true;
      }
    if (!found) throw ConfigError(at(path, key), "unknown estimate slot");
  }
  return s;
}

Json to_json(const EstimateSpec& s) {
  Json j;
  j["kind"] = to_string(s.kind);
  if (s.beta) j["beta"] = to_json(*s.beta);
  for (const Slot& slot : kSlots)
    if (s.*(slot.member)) j[slot.name] = to_json(*(s.*(slot.member)));
  if (s.c != 0.0) j["c"] = s.c;
  return j;
}

OdeOptions ode_from_json(const Json& j, const std::string& path) {
  OdeOptions o;
  if (j.is_null()) return o;
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string p = at(path, it.key());
    const std::string& k = it.key();
    if (k == "rtol") o.rtol = num(*it, p);
    else if (k == "atol") o.atol = num(*it, p);
    else if (k == "h_init") o.h_init = num(*it, p);
    else if (k == "h_max") o.h_max = num(*it, p);
    else if (k == "blowup") o.blowup = num(*it, p);
    else if (k == "max_steps") o.max_steps = static_cast<std::size_t>(num(*it, p));
    else throw ConfigError(p, "unknown integrator option");
    if (!(num(*it, p) > 0.0) && k != "h_init") throw ConfigError(p, "must be positive");
  }
  return o;
}

Json to_json(const OdeOptions& o) {
  Json j{{"rtol", o.rtol}, {"atol", o.atol}, {"blowup", o.blowup}, {"max_steps", o.max_steps}};
  if (o.h_init > 0.0) j["h_init"] = o.h_init;
  if (std::isfinite(o.h_max)) j["h_max"] = o.h_max;
  return j;
}

BatteryPlan battery_from_json(const Json& j, const std::string& path,
                              std::optional<std::uint64_t> seed) {
  BatteryPlan b;
  if (!j.is_null() && !j.is_object()) throw ConfigError(path, "expected an object");
  bool have_seed = false;
  if (j.is_object())
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string p = at(path, it.key());
      const std::string& k = it.key();
      if (k == "r_min") b.r_min = num(*it, p);
      else if (k == "r_max") b.r_max = num(*it, p);
      else if (k == "shells") b.shells = static_cast<int>(num(*it, p));
      else if (k == "directions") b.directions = static_cast<int>(num(*it, p));
      else if (k == "signals_per_state") b.signals_per_state = static_cast<int>(num(*it, p));
      else if (k == "max_switches") b.max_switches = static_cast<int>(num(*it, p));
      else if (k == "input_amplitude") b.input_amplitude = num(*it, p);
      else if (k == "horizon") b.horizon = num(*it, p);
      else if (k == "seed") {
        b.seed = static_cast<std::uint64_t>(num(*it, p));
        have_seed = true;
      } else if (k == "extra_states") {
        if (!it->is_array()) throw ConfigError(p, "expected an array of states");
        for (std::size_t i = 0; i < it->size(); ++i) b.extra_states.push_back(vec_from_json((*it)[i], at(p, i)));
      } else if (k == "ode") b.sim.ode = ode_from_json(*it, p);
      else throw ConfigError(p, "unknown battery option");
    }
  if (seed && !have_seed) {
    b.seed = *seed;
    have_seed = true;
  }
  if (!have_seed) throw ConfigError(at(path, "seed"), "a random battery needs a seed (config or --seed)");
  if (!(b.r_min > 0.0 && b.r_max >= b.r_min)) throw ConfigError(at(path, "r_min"), "need 0 < r_min <= r_max");
  if (b.shells < 1 || b.directions < 1 || b.signals_per_state < 1)
    throw ConfigError(path, "shells, directions and signals_per_state must be positive");
  if (!(b.horizon > 0.0)) throw ConfigError(at(path, "horizon"), "must be positive");
  return b;
}

Json to_json(const BatteryPlan& p) {
  Json extra = Json::array();
  for (const Vec& x : p.extra_states) extra.push_back(to_json(x));
  return Json{{"r_min", p.r_min},
              {"r_max", p.r_max},
              {"shells", p.shells},
              {"directions", p.directions},
              {"signals_per_state", p.signals_per_state},
              {"max_switches", p.max_switches},
              {"input_amplitude", p.input_amplitude},
              {"horizon", p.horizon},
              {"seed", p.seed},
              {"extra_states", extra},
              {"ode", to_json(p.sim.ode)}};
}

Json to_json(const BatteryItem& item) {
  Json j{{"x0", to_json(item.x0)}, {"u", to_json(item.u)}, {"w", to_json(item.w)}};
  if (item.x0_pair) j["x0_pair"] = to_json(*item.x0_pair);
  if (item.u_pair) j["u_pair"] = to_json(*item.u_pair);
  return j;
}

BatteryItem battery_item_from_json(const Json& j, const SystemModel& sys, const std::string& path) {
  BatteryItem it;
  it.x0 = vec_from_json(require(j, "x0", path), at(path, "x0"));
  if (it.x0.size() != sys.n()) throw ConfigError(at(path, "x0"), "state dimension mismatch");
  it.u = j.contains("u") ? signal_from_json(j["u"], sys.m_u(), at(path, "u")) : Signal::zero(sys.m_u());
  it.w = j.contains("w") ? signal_from_json(j["w"], sys.m_w(), at(path, "w")) : Signal::zero(sys.m_w());
  if (j.contains("x0_pair")) it.x0_pair = vec_from_json(j["x0_pair"], at(path, "x0_pair"));
  if (j.contains("u_pair")) it.u_pair = signal_from_json(j["u_pair"], sys.m_u(), at(path, "u_pair"));
  return it;
}

Json to_json(const Witness& w) {
  return Json{{"item", w.item},       {"input", to_json(w.input)}, {"horizon", w.horizon},
              {"t", w.t},             {"lhs", finite_or_null(w.lhs)}, {"rhs", finite_or_null(w.rhs)}};
}

Witness witness_from_json(const Json& j, const SystemModel& sys, const std::string& path) {
  Witness w;
  w.item = static_cast<std::size_t>(num(require(j, "item", path), at(path, "item")));
  w.input = battery_item_from_json(require(j, "input", path), sys, at(path, "input"));
  w.horizon = num(require(j, "horizon", path), at(path, "horizon"));
  w.t = num(require(j, "t", path), at(path, "t"));
  if (j.contains("lhs") && j["lhs"].is_number()) w.lhs = j["lhs"].get<double>();
  if (j.contains("rhs") && j["rhs"].is_number()) w.rhs = j["rhs"].get<double>();
  return w;
}

Json to_json(const CheckReport& r) {
  Json j;
  j["check"] = r.check;
  j["verdict"] = to_string(r.verdict);
  j["worst_margin"] = finite_or_null(r.worst_margin);
  j["trajectories"] = r.trajectories;
  j["knots"] = r.knots;
  j["skipped"] = r.skipped;
  j["escaped"] = r.escaped;
  Json metrics = Json::object();
  for (const auto& [k, v] : r.metrics) metrics[k] = finite_or_null(v);
  j["metrics"] = metrics;
  j["notes"] = r.notes;
  j["witness"] = r.witness ? to_json(*r.witness) : Json(nullptr);
  return j;
}

Json to_json(const QuadraticCertificate& c) {
  return Json{{"P", to_json(c.P)},
              {"L", to_json(c.L)},
              {"residual", c.residual},
              {"lambda_min", c.lambda_min},
              {"lambda_max", c.lambda_max},
              {"norm_P", c.norm_P},
              {"norm_B", c.norm_B},
              {"norm_L", c.norm_L},
              {"alpha", to_json(c.alpha)},
              {"sigma1", to_json(c.sigma1)},
              {"sigma2", to_json(c.sigma2)},
              {"alpha1", to_json(c.alpha1)},
              {"alpha2", to_json(c.alpha2)},
              {"K", c.K},
              {"delta", c.delta},
              {"K_certified", c.K_certified}};
}

std::string trajectory_csv(const Trajectory& tr) {
  std::ostringstream o;
  const int n = tr.states.empty() ? 0 : static_cast<int>(tr.states[0].size());
  const int p = tr.outputs.empty() ? 0 : static_cast<int>(tr.outputs[0].size());
  o << "t";
  for (int i = 0; i < n; ++i) o << ",x" << i + 1;
  for (int i = 0; i < p; ++i) o << ",y" << i + 1;
  o << ",norm_x\n";
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    o << fmt(tr.times[k]);
    for (int i = 0; i < n; ++i) o << ',' << fmt(tr.states[k][i]);
    for (int i = 0; i < p; ++i) o << ',' << fmt(tr.outputs[k][i]);
    o << ',' << fmt(tr.states[k].norm()) << '\n';
  }
  return o.str();
}

std::string coupled_csv(const CoupledRun& run) {
  std::ostringstream o;
  o << "t,norm_x,V,p,bound\n";
  for (std::size_t k = 0; k < run.plant.times.size(); ++k)
    o << fmt(run.plant.times[k]) << ',' << fmt(run.plant.states[k].norm()) << ',' << fmt(run.V[k]) << ','
      << fmt(run.p[k]) << ',' << fmt(run.bound[k]) << '\n';
  return o.str();
}

std::string grid_value_csv(const GridValueFn& v) {
  std::ostringstream o;
  const int n = v.grid.dim();
  for (int i = 0; i < n; ++i) o << 'x' << i + 1 << ',';
  o << "value,region,unreached\n";
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    Vec x = v.grid.node(i);
    for (int a = 0; a < n; ++a) o << fmt(x[a]) << ',';
    o << fmt(v.values[i]) << ',' << to_string(v.regions[i]) << ',' << int(v.unreached[i]) << '\n';
  }
  return o.str();
}

}  // namespace ioss
