#include "ioss/dynamics.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace ioss {

std::vector<Vec> hypercube_samples(int m) {
  if (m < 0) throw std::invalid_argument("hypercube_samples: negative dimension");
  std::vector<Vec> out;
  if (m == 0) {
    out.push_back(Vec(0));
    return out;
  }
  if (m > 16) throw std::invalid_argument("hypercube_samples: dimension too large");
  std::set<std::vector<double>> seen;
  auto add = [&](const Vec& v) {
    std::vector<double> key(v.data(), v.data() + v.size());
    if (seen.insert(key).second) out.push_back(v);
  };
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    Vec v(m);
    for (int i = 0; i < m; ++i) v[i] = (mask >> i) & 1u ? 1.0 : -1.0;
    add(v);
  }
  add(Vec::Zero(m));
  for (int i = 0; i < m; ++i) {
    Vec e = Vec::Zero(m);
    e[i] = 1.0;
    add(e);
    add(-e);
  }
  return out;
}

SystemModel::SystemModel(SystemDef def) : def_(std::move(def)) {
  if (def_.n < 1 || def_.m_u < 0 || def_.m_w < 0 || def_.p < 0)
    throw std::invalid_argument("system '" + def_.name + "': invalid dimensions");
  if (!def_.f || !def_.h)
    throw std::invalid_argument("system '" + def_.name + "': dynamics and output are required");
  if (def_.disturbance_samples.empty()) def_.disturbance_samples = hypercube_samples(def_.m_w);
  for (const Vec& w : def_.disturbance_samples) {
    if (w.size() != def_.m_w)
      throw std::invalid_argument("system '" + def_.name + "': disturbance sample dimension");
    if ((w.array().abs() > 1.0 + 1e-15).any())
      throw std::invalid_argument("system '" + def_.name + "': disturbance sample outside [-1,1]");
  }
  const Vec x0 = Vec::Zero(def_.n), u0 = Vec::Zero(def_.m_u);
  Vec y0 = def_.h(x0);
  if (y0.size() != def_.p)
    throw std::invalid_argument("system '" + def_.name + "': output dimension mismatch");
  for (const Vec& w : def_.disturbance_samples) {
    Vec f0 = def_.f(x0, u0, w);
    if (f0.size() != def_.n)
      throw std::invalid_argument("system '" + def_.name + "': dynamics dimension mismatch");
    if (def_.zero_check_waiver.empty() && f0.lpNorm<Eigen::Infinity>() > 1e-12)
      throw std::invalid_argument("system '" + def_.name + "': f(0,0,w) != 0");
  }
  if (def_.zero_check_waiver.empty() && def_.p > 0 && y0.lpNorm<Eigen::Infinity>() > 1e-12)
    throw std::invalid_argument("system '" + def_.name + "': h(0) != 0");
}

Trajectory simulate(const SystemModel& sys, const Vec& x0, const Signal& u, const Signal& w,
                    double horizon, const SimOptions& opts) {
  if (x0.size() != sys.n()) throw std::invalid_argument("simulate: initial state dimension");
  if (u.dim() != sys.m_u()) throw std::invalid_argument("simulate: control dimension");
  if (w.dim() != sys.m_w()) throw std::invalid_argument("simulate: disturbance dimension");
  if (w.kind() != Signal::Kind::Closure)
    for (const Vec& v : w.values())
      if ((v.array().abs() > 1.0 + 1e-12).any())
        throw std::invalid_argument("simulate: disturbance value outside [-1,1]");

  OdeRhs rhs = [&](double t, double ref, const Vec& x, Vec& dx) {
    dx = sys.f(x, u.at(t, ref), w.at(t, ref));
  };
  std::vector<double> bps = u.breakpoints();
  for (double b : w.breakpoints()) bps.push_back(b);
  const StopSet* stop = opts.stop ? &*opts.stop : nullptr;
  OdeSolution sol = integrate(rhs, x0, horizon, bps, opts.ode, {}, stop);

  Trajectory tr;
  tr.times = std::move(sol.t);
  tr.states = std::move(sol.x);
  tr.local_error = std::move(sol.local_error);
  tr.outputs.reserve(tr.states.size());
  for (const Vec& x : tr.states) tr.outputs.push_back(sys.h(x));
  tr.termination = sol.termination;
  tr.t_escape = sol.t_escape;
  tr.set_id = sol.set_id;
  tr.t_entry = sol.t_entry;
  tr.u = u;
  tr.w = w;
  return tr;
}

SystemModel close_robust_loop(const SystemModel& sys, const ComparisonFn& phi) {
  const SystemDef& base = sys.def();
  SystemDef d;
  d.name = base.name + "+margin";
  d.n = base.n;
  d.m_u = 0;
  d.m_w = base.m_u + base.m_w;
  d.p = base.p;
  const int mu = base.m_u, mw = base.m_w;
  auto f = base.f;
  d.f = [f, phi, mu, mw](const Vec& x, const Vec&, const Vec& dw) {
    Vec u = dw.head(mu) * phi(x.norm());
    return f(x, u, dw.tail(mw));
  };
  d.h = base.h;
  d.zero_check_waiver = base.zero_check_waiver;
  return SystemModel(std::move(d));
}

SystemModel slow_system(const SystemModel& sys, ScalarFieldFn kappa) {
  const SystemDef& base = sys.def();
  SystemDef d = base;
  d.name = base.name + "+slowed";
  d.affine.reset();
  auto f = base.f;
  d.f = [f, kappa](const Vec& x, const Vec& u, const Vec& w) {
    Vec v = f(x, u, w);
    double k = kappa(x);
    if (!(k >= 0.0)) throw std::domain_error("slow_system: negative kappa sample");
    return Vec(v / (1.0 + v.squaredNorm() + k));
  };
  return SystemModel(std::move(d));
}

Vec fd_gradient(const ScalarFieldFn& fn, const Vec& x) {
  const double h = 1e-5 * (1.0 + x.norm());
  Vec g(x.size());
  Vec xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (fn(xp) - fn(xm)) / (2 * h);
    xp[i] = xm[i] = x[i];
  }
  return g;
}

double smooth_step(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  double a = std::exp(-1.0 / s), b = std::exp(-1.0 / (1.0 - s));
  return a / (a + b);
}

ScalarFieldFn default_kappa(const SystemModel& sys, const ComparisonFn& rho, double safety) {
  if (sys.m_u() != 0) throw std::invalid_argument("default_kappa: needs a disturbance-only system");
  SystemModel model = sys;
  return [model, rho, safety](const Vec& x) {
    double hy = model.h(x).norm();
    double blend = smooth_step(2.0 * hy - 1.0);
    if (blend == 0.0) return 0.0;
    ScalarFieldFn v = [&](const Vec& z) { return rho(model.h(z).norm()); };
    Vec g = fd_gradient(v, x);
    const Vec u0(0);
    double worst = 0.0;
    for (const Vec& d : model.disturbance_samples())
      worst = std::max(worst, std::abs(g.dot(model.f(x, u0, d))));
    return safety * 2.0 * worst * blend;
  };
}

}  // namespace ioss
