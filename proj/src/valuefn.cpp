#include "ioss/valuefn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "ioss/fixtures.hpp"
#include "ioss/parallel.hpp"

namespace ioss {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

StateGrid::StateGrid(Vec lo_, Vec hi_, std::vector<int> counts_)
    : lo(std::move(lo_)), hi(std::move(hi_)), counts(std::move(counts_)) {
  const int n = dim();
  if (n < 1 || n > 3) throw std::invalid_argument("StateGrid: 1 to 3 axes supported");
  if (lo.size() != n || hi.size() != n) throw std::invalid_argument("StateGrid: bound dimensions");
  for (int i = 0; i < n; ++i) {
    if (counts[i] < 2) throw std::invalid_argument("StateGrid: at least 2 nodes per axis");
    if (!(hi[i] > lo[i])) throw std::invalid_argument("StateGrid: empty axis");
  }
}

std::size_t StateGrid::size() const {
  std::size_t s = 1;
  for (int c : counts) s *= static_cast<std::size_t>(c);
  return s;
}

Vec StateGrid::spacing() const {
  Vec h(dim());
  for (int i = 0; i < dim(); ++i) h[i] = (hi[i] - lo[i]) / (counts[i] - 1);
  return h;
}

double StateGrid::max_spacing() const { return spacing().maxCoeff(); }

std::vector<int> StateGrid::multi_index(std::size_t index) const {
  std::vector<int> idx(dim());
  for (int i = dim() - 1; i >= 0; --i) {
    idx[i] = static_cast<int>(index % counts[i]);
    index /= counts[i];
  }
  return idx;
}

std::size_t StateGrid::flat(const std::vector<int>& idx) const {
  std::size_t f = 0;
  for (int i = 0; i < dim(); ++i) f = f * counts[i] + idx[i];
  return f;
}

Vec StateGrid::node(std::size_t index) const {
  std::vector<int> idx = multi_index(index);
  Vec h = spacing(), x(dim());
  for (int i = 0; i < dim(); ++i)
    x[i] = idx[i] == counts[i] - 1 ? hi[i] : lo[i] + idx[i] * h[i];
  return x;
}

bool StateGrid::contains(const Vec& x, double slack) const {
  for (int i = 0; i < dim(); ++i)
    if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
  return true;
}

std::string to_string(Region r) {
  switch (r) {
    case Region::D: return "D";
    case Region::B: return "B";
    case Region::E1: return "E1";
    case Region::E: return "E";
  }
  return "?";
}

GeometrySets::GeometrySets(ComparisonFn rho_, std::function<Vec(const Vec&)> h_, StateGrid grid_)
    : rho(std::move(rho_)), h(std::move(h_)), grid(std::move(grid_)) {}

bool GeometrySets::in_D(const Vec& x) const {
  double nx = x.norm();
  return nx <= rho(h(x).norm()) + tol * (1.0 + nx);
}

bool GeometrySets::in_B(const Vec& x) const {
  double nx = x.norm(), r = rho(h(x).norm());
  return nx >= r - tol * (1.0 + nx) && nx <= 1.5 * r + tol * (1.0 + nx);
}

bool GeometrySets::in_E1(const Vec& x) const { return x.norm() > 2.0 * rho(h(x).norm()); }

Region GeometrySets::region(const Vec& x) const {
  if (in_D(x)) return Region::D;
  if (in_B(x)) return Region::B;
  if (in_E1(x)) return Region::E1;
  return Region::E;
}

double GeometrySets::collar(const Vec& x) const {
  double nx = x.norm(), r = rho(h(x).norm());
  if (nx <= r) return 1.0;
  double width = 0.5 * r, s = nx - r;
  if (s >= width) return 0.0;
  return bump(s, width);
}

namespace {

struct Stencil {
  std::size_t idx[8];
  double w[8];
  int size = 0;
  bool exit = false;
};

// Multilinear stencil of x; `exit` when x lies outside the window.
Stencil stencil(const StateGrid& g, const Vec& x) {
  Stencil s;
  if (!g.contains(x, 1e-12)) {
    s.exit = true;
    return s;
  }
  const int n = g.dim();
  Vec h = g.spacing();
  int base[3];
  double frac[3];
  for (int i = 0; i < n; ++i) {
    double u = (x[i] - g.lo[i]) / h[i];
    int b = static_cast<int>(std::floor(u));
    b = std::clamp(b, 0, g.counts[i] - 2);
    base[i] = b;
    frac[i] = std::clamp(u - b, 0.0, 1.0);
  }
  std::vector<int> idx(n);
  for (int corner = 0; corner < (1 << n); ++corner) {
    double w = 1.0;
    for (int i = 0; i < n; ++i) {
      int bit = (corner >> i) & 1;
      idx[i] = base[i] + bit;
      w *= bit ? frac[i] : 1.0 - frac[i];
    }
    if (w <= 0.0) continue;
    s.idx[s.size] = g.flat(idx);
    s.w[s.size] = w;
    ++s.size;
  }
  return s;
}

// Weight vectors on {k / levels} summing to one.
void compositions(int parts, int levels, std::vector<double>& cur, std::vector<std::vector<double>>& out,
                  int left) {
  if (static_cast<int>(cur.size()) == parts - 1) {
    cur.push_back(static_cast<double>(left) / levels);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (int k = 0; k <= left; ++k) {
    cur.push_back(static_cast<double>(k) / levels);
    compositions(parts, levels, cur, out, left - k);
    cur.pop_back();
  }
}

struct NodeOptions {
  double cost = 0.0;
  // Option groups per disturbance choice; the first `groups[k]` stencils
  // belong to choice k.
  std::vector<int> groups;
  std::vector<Stencil> options;
};

}  // namespace

double GridValueFn::operator()(const Vec& x) const {
  Vec c = x;
  for (int i = 0; i < grid.dim(); ++i) c[i] = std::clamp(c[i], grid.lo[i], grid.hi[i]);
  Stencil s = stencil(grid, c);
  double v = 0.0;
  for (int k = 0; k < s.size; ++k) v += s.w[k] * values[s.idx[k]];
  return v;
}

double GridValueFn::max_value() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

std::size_t GridValueFn::unreached_count() const {
  return static_cast<std::size_t>(std::count(unreached.begin(), unreached.end(), 1));
}

GridValueFn compute_v0(const SystemModel& sys, const GeometrySets& geo, const ComparisonFn& Xi,
                       const ValueIterationOptions& opts) {
  const StateGrid& g = geo.grid;
  if (g.dim() != sys.n()) throw std::invalid_argument("compute_v0: grid and state dimensions differ");
  const int n = g.dim();
  const std::size_t N = g.size();
  const double dt = opts.dt > 0.0 ? opts.dt : g.spacing().minCoeff();

  std::vector<Vec> samples = sys.disturbance_samples();
  if (samples.empty()) samples.push_back(Vec::Zero(sys.m_w()));
  const Vec u0 = Vec::Zero(sys.m_u());

  std::vector<std::vector<double>> mix;
  if (opts.mixture && samples.size() > 1) {
    std::vector<double> cur;
    compositions(static_cast<int>(samples.size()), std::max(1, opts.mixture_levels), cur, mix,
                 std::max(1, opts.mixture_levels));
  }

  std::vector<std::vector<double>> vlat;  // {-1, 0, 1}^n
  for (int k = 0; k < static_cast<int>(std::pow(3, n)); ++k) {
    std::vector<double> v(n);
    int c = k;
    for (int i = 0; i < n; ++i) {
      v[i] = c % 3 - 1.0;
      c /= 3;
    }
    vlat.push_back(v);
  }

  GridValueFn out;
  out.grid = g;
  out.Xi = Xi;
  out.dt = dt;
  out.values.assign(N, 0.0);
  out.regions.resize(N);
  out.unreached.assign(N, 0);

  std::vector<NodeOptions> nodes(N);
  std::vector<double> speed(N, 0.0);
  parallel_for(
      N,
      [&](std::size_t i) {
        Vec x = g.node(i);
        out.regions[i] = geo.region(x);
        if (out.regions[i] == Region::D) return;
        NodeOptions& no = nodes[i];
        no.cost = dt * Xi(x.norm());
        std::vector<Vec> fs;
        double f0 = 0.0;
        for (const Vec& w : samples) {
          fs.push_back(sys.f(x, u0, w));
          f0 = std::max(f0, fs.back().norm());
        }
        std::vector<Vec> drifts = fs;
        if (!mix.empty()) {
          drifts.clear();
          for (const auto& lam : mix) {
            Vec f = Vec::Zero(n);
            for (std::size_t j = 0; j < fs.size(); ++j) f += lam[j] * fs[j];
            drifts.push_back(f);
          }
        }
        const double phi = geo.collar(x);
        for (const Vec& f : drifts) {
          int count = 0;
          if (phi > 0.0) {
            for (const auto& v : vlat) {
              Vec ft = f;
              for (int a = 0; a < n; ++a) ft[a] += 2.0 * phi * f0 * v[a];
              speed[i] = std::max(speed[i], ft.norm());
              no.options.push_back(stencil(g, x + dt * ft));
              ++count;
            }
          } else {
            speed[i] = std::max(speed[i], f.norm());
            no.options.push_back(stencil(g, x + dt * f));
            count = 1;
          }
          no.groups.push_back(count);
        }
      },
      opts.threads);
  out.max_speed = *std::max_element(speed.begin(), speed.end());

  std::vector<double> cur(N, 0.0), next(N, 0.0);
  std::vector<char> reached(N, 0), reached_next(N, 0);
  for (std::size_t i = 0; i < N; ++i) reached[i] = out.regions[i] == Region::D;
  std::vector<double> change(N, 0.0);

  const std::size_t chunk = 256;
  const std::size_t chunks = (N + chunk - 1) / chunk;
  double residual = kInf;
  std::size_t sweep = 0;
  while (sweep < opts.max_sweeps) {
    parallel_for(
        chunks,
        [&](std::size_t c) {
          const std::size_t end = std::min(N, (c + 1) * chunk);
          for (std::size_t i = c * chunk; i < end; ++i) {
            if (out.regions[i] == Region::D) {
              next[i] = 0.0;
              reached_next[i] = 1;
              change[i] = 0.0;
              continue;
            }
            const NodeOptions& no = nodes[i];
            double best_w = -kInf;
            char best_w_reached = 0;
            std::size_t o = 0;
            for (int count : no.groups) {
              double best_v = kInf;
              char best_v_reached = 0;
              bool best_v_exit = true;
              for (int k = 0; k < count; ++k, ++o) {
                const Stencil& s = no.options[o];
                double v = no.cost;
                char r = 0;
                if (!s.exit)
                  for (int j = 0; j < s.size; ++j) {
                    v += s.w[j] * cur[s.idx[j]];
                    if (reached[s.idx[j]] && s.w[j] > 1e-12) r = 1;
                  }
                // Leaving the window is no shortcut for the minimizer: exits
                // count only when every control exits.
                bool better = best_v_exit && !s.exit ? true
                              : !best_v_exit && s.exit ? false
                                                       : v < best_v || (v == best_v && r && !best_v_reached);
                if (better) {
                  best_v = v;
                  best_v_reached = r;
                  best_v_exit = s.exit;
                }
              }
              if (best_v > best_w || (best_v == best_w && !best_v_reached)) {
                best_w = best_v;
                best_w_reached = best_v_reached;
              }
            }
            next[i] = best_w;
            reached_next[i] = best_w_reached;
            change[i] = next[i] - cur[i];
          }
        },
        opts.threads);
    ++sweep;
    residual = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      residual = std::max(residual, std::abs(change[i]));
      if (sweep > 1) out.monotonicity_defect = std::max(out.monotonicity_defect, -change[i]);
    }
    cur.swap(next);
    reached.swap(reached_next);
    if (residual < opts.tol) break;
  }
  out.values = cur;
  out.sweeps = sweep;
  out.residual = residual;
  out.converged = residual < opts.tol;
  for (std::size_t i = 0; i < N; ++i)
    out.unreached[i] = !reached[i] || (!out.converged && std::abs(change[i]) >= opts.tol);
  return out;
}

GridValueFn compute_v0(const SystemModel& sys, const GeometrySets& geo, const ComparisonFn& mu1,
                       const ComparisonFn& mu2, const ValueIterationOptions& opts) {
  GridValueFn v = compute_v0(sys, geo, invert(mu1), opts);
  v.mu1 = mu1;
  v.mu2 = mu2;
  return v;
}

CheckReport check_v0_dissipation(const GridValueFn& v0, const SystemModel& sys,
                                 const GeometrySets& geo, const std::vector<Vec>& starts,
                                 const V0DissipationOptions& opts) {
  std::vector<Vec> samples = sys.disturbance_samples();
  if (samples.empty()) samples.push_back(Vec::Zero(sys.m_w()));
  std::vector<BatteryItem> items;
  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::uniform_real_distribution<double> when(0.0, opts.span);
  for (const Vec& x0 : starts) {
    for (const Vec& w : samples)
      items.push_back({x0, Signal::zero(sys.m_u()), Signal::constant(w), std::nullopt, std::nullopt});
    for (std::size_t k = 0; k < opts.switching_signals && samples.size() > 1; ++k) {
      double t1 = when(rng);
      items.push_back({x0, Signal::zero(sys.m_u()),
                       Signal::piecewise({0.0, t1}, {samples[pick(rng)], samples[pick(rng)]}),
                       std::nullopt, std::nullopt});
    }
  }
  return check_v0_dissipation(v0, sys, geo, items, opts);
}

CheckReport check_v0_dissipation(const GridValueFn& v0, const SystemModel& sys,
                                 const GeometrySets& geo, const std::vector<BatteryItem>& items,
                                 const V0DissipationOptions& opts) {
  const double tol = opts.tol_factor * v0.grid.max_spacing();
  SimOptions sim = opts.sim;
  if (!std::isfinite(sim.ode.h_max)) sim.ode.h_max = opts.span / 200.0;
  const Signal u0 = Signal::zero(sys.m_u());

  auto confined = [&](const Vec& x) {
    return geo.grid.contains(x) && !geo.in_D(x) && !geo.in_B(x);
  };

  struct Result {
    bool used = false;
    TrajectoryVerdict v;
  };
  std::vector<Result> res(items.size());
  parallel_for(
      items.size(),
      [&](std::size_t i) {
        const BatteryItem& it = items[i];
        if (!confined(it.x0)) return;
        Trajectory tr = simulate(sys, it.x0, u0, it.w, opts.span, sim);
        std::size_t last = 0;
        while (last + 1 < tr.times.size() && confined(tr.states[last + 1])) ++last;
        if (last == 0) return;
        Result& r = res[i];
        r.used = true;
        r.v.margin = kInf;
        const double V_start = v0(it.x0);
        double integral = 0.0;
        double prev = v0.Xi(tr.states[0].norm());
        for (std::size_t k = 1; k <= last; ++k) {
          double cur = v0.Xi(tr.states[k].norm());
          integral += 0.5 * (tr.times[k] - tr.times[k - 1]) * (prev + cur);
          prev = cur;
          double lhs = v0(tr.states[k]) - V_start + integral;
          double margin = tol - lhs;
          ++r.v.knots;
          if (margin < r.v.margin) {
            r.v.margin = margin;
            r.v.t = tr.times[k];
            r.v.lhs = lhs;
            r.v.rhs = tol;
          }
        }
      },
      opts.threads);

  CheckReport rep;
  rep.check = "V0-dissipation";
  std::size_t worst = items.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!res[i].used) {
      ++rep.skipped;
      continue;
    }
    ++rep.trajectories;
    rep.knots += res[i].v.knots;
    if (res[i].v.margin < rep.worst_margin) {
      rep.worst_margin = res[i].v.margin;
      worst = i;
    }
  }
  if (rep.trajectories == 0)
    throw std::invalid_argument("check_v0_dissipation: no run stays in E \\ (D u B)");
  rep.verdict = rep.worst_margin < 0.0 ? Verdict::Falsified : Verdict::HoldsOnSamples;
  Witness w;
  w.item = worst;
  w.input = items[worst];
  w.horizon = opts.span;
  w.t = res[worst].v.t;
  w.lhs = res[worst].v.lhs;
  w.rhs = res[worst].v.rhs;
  rep.witness = w;
  rep.metrics["tolerance"] = tol;
  rep.metrics["span"] = opts.span;
  if (rep.skipped)
    rep.notes.push_back(std::to_string(rep.skipped) + " runs start outside E \\ (D u B) or the window");
  return rep;
}

namespace {

// Lower envelope of parabolas: out[q] = min_p f[p] + c (q - p)^2, with
// infinite entries ignored.
void envelope_1d(const std::vector<double>& f, double c, std::vector<double>& out,
                 std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  out.assign(n, kInf);
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = -1;
  auto key = [&](int q) { return f[q] + c * q * q; };
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = (key(q) - key(v[k])) / (2.0 * c * (q - v[k]));
    while (s <= z[k]) {  // z[0] = -inf ends the loop
      --k;
      s = (key(q) - key(v[k])) / (2.0 * c * (q - v[k]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) return;
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    double d = q - v[j];
    out[q] = f[v[j]] + c * d * d;
  }
}

// Applies the separable transform with per-axis coefficients c[a] (in index units).
std::vector<double> separable_envelope(const StateGrid& g, std::vector<double> vals,
                                       const std::vector<double>& c) {
  const int n = g.dim();
  std::vector<double> line, out;
  std::vector<int> v;
  std::vector<double> z;
  for (int a = 0; a < n; ++a) {
    std::size_t stride = 1;
    for (int b = a + 1; b < n; ++b) stride *= g.counts[b];
    const std::size_t len = g.counts[a];
    const std::size_t N = g.size();
    for (std::size_t start = 0; start < N; ++start) {
      // `start` is the first node of a line along axis a.
      if ((start / stride) % len != 0) continue;
      line.resize(len);
      for (std::size_t q = 0; q < len; ++q) line[q] = vals[start + q * stride];
      envelope_1d(line, c[a], out, v, z);
      for (std::size_t q = 0; q < len; ++q) vals[start + q * stride] = out[q];
    }
  }
  return vals;
}

}  // namespace

GridValueFn inf_convolve(const GridValueFn& v, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("inf_convolve: alpha must lie in (0, 1]");
  Vec h = v.grid.spacing();
  std::vector<double> c(v.grid.dim());
  for (int a = 0; a < v.grid.dim(); ++a) c[a] = h[a] * h[a] / (2.0 * alpha * alpha);
  GridValueFn out = v;
  out.values = separable_envelope(v.grid, v.values, c);
  return out;
}

double modulus_of_continuity(const GridValueFn& v, double delta) {
  const StateGrid& g = v.grid;
  const int n = g.dim();
  Vec h = g.spacing();
  std::vector<int> reach(n);
  for (int a = 0; a < n; ++a) reach[a] = static_cast<int>(std::floor(delta / h[a] + 1e-9));
  std::vector<std::vector<int>> offsets;
  std::vector<int> o(n, 0);
  std::function<void(int)> rec = [&](int a) {
    if (a == n) {
      double d2 = 0.0;
      for (int b = 0; b < n; ++b) d2 += (o[b] * h[b]) * (o[b] * h[b]);
      if (d2 <= delta * delta * (1.0 + 1e-12)) offsets.push_back(o);
      return;
    }
    for (int k = -reach[a]; k <= reach[a]; ++k) {
      o[a] = k;
      rec(a + 1);
    }
  };
  rec(0);
  const std::size_t N = g.size();
  std::vector<double> best(N, 0.0);
  parallel_for(N, [&](std::size_t i) {
    std::vector<int> idx = g.multi_index(i), j(n);
    double m = 0.0;
    for (const auto& off : offsets) {
      bool ok = true;
      for (int a = 0; a < n && ok; ++a) {
        j[a] = idx[a] + off[a];
        ok = j[a] >= 0 && j[a] < g.counts[a];
      }
      if (ok) m = std::max(m, std::abs(v.values[i] - v.values[g.flat(j)]));
    }
    best[i] = m;
  });
  return N ? *std::max_element(best.begin(), best.end()) : 0.0;
}

std::vector<double> distance_to_D(const GridValueFn& v) {
  const StateGrid& g = v.grid;
  std::vector<double> f(g.size(), kInf);
  for (std::size_t i = 0; i < f.size(); ++i)
    if (v.regions[i] == Region::D) f[i] = 0.0;
  Vec h = g.spacing();
  std::vector<double> c(g.dim());
  for (int a = 0; a < g.dim(); ++a) c[a] = h[a] * h[a];
  std::vector<double> d2 = separable_envelope(g, f, c);
  for (double& d : d2) d = std::sqrt(d);
  return d2;
}

}  // namespace ioss
