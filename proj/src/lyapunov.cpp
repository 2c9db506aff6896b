#include "ioss/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ioss/parallel.hpp"

namespace ioss {

Vec LyapCandidate::grad(const Vec& x) const {
  if (gradV) return gradV(x);
  return fd_gradient(V, x);
}

LyapCandidate quadratic_candidate(const Mat& P, ComparisonFn alpha, ComparisonFn sigma1,
                                  ComparisonFn sigma2) {
  if (P.rows() != P.cols()) throw std::invalid_argument("quadratic candidate: P not square");
  Mat S = 0.5 * (P + P.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(S);
  double lmin = eig.eigenvalues().minCoeff(), lmax = eig.eigenvalues().maxCoeff();
  if (!(lmin > 0.0)) throw std::invalid_argument("quadratic candidate: P not positive definite");
  LyapCandidate c;
  c.name = "quadratic";
  c.V = [S](const Vec& x) { return x.dot(S * x); };
  c.gradV = [S](const Vec& x) { return Vec(2.0 * S * x); };
  c.alpha1 = ComparisonFn::power(lmin, 2.0);
  c.alpha2 = ComparisonFn::power(lmax, 2.0);
  c.alpha = std::move(alpha);
  c.sigma1 = std::move(sigma1);
  c.sigma2 = std::move(sigma2);
  return c;
}

LyapCandidate certificate_candidate(const QuadraticCertificate& cert) {
  LyapCandidate c = quadratic_candidate(cert.P, cert.alpha, cert.sigma1, cert.sigma2);
  c.name = "linear-certificate";
  return c;
}

std::vector<Vec> box_grid(int n, double half_width, int per_axis) {
  if (n == 0) return {Vec(0)};
  if (per_axis < 1) throw std::invalid_argument("box_grid: per_axis must be positive");
  std::vector<double> axis;
  for (int i = 0; i < per_axis; ++i)
    axis.push_back(per_axis == 1 ? 0.0 : -half_width + 2.0 * half_width * i / (per_axis - 1));
  std::size_t total = 1;
  for (int d = 0; d < n; ++d) total *= static_cast<std::size_t>(per_axis);
  std::vector<Vec> out;
  out.reserve(total);
  for (std::size_t k = 0; k < total; ++k) {
    Vec x(n);
    std::size_t rem = k;
    for (int d = 0; d < n; ++d) {
      x[d] = axis[rem % per_axis];
      rem /= per_axis;
    }
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<Vec> ball_grid(int m, double radius, int per_axis) {
  if (m == 0) return {Vec(0)};
  std::vector<Vec> out;
  for (Vec& u : box_grid(m, radius, per_axis))
    if (u.norm() <= radius * (1.0 + 1e-12)) out.push_back(std::move(u));
  return out;
}

namespace {

struct PointResult {
  double slack = std::numeric_limits<double>::infinity();
  double credited = std::numeric_limits<double>::infinity();
  double lhs = 0.0, rhs = 0.0;
  Vec x, u, w;
  std::size_t samples = 0;
  bool excluded = false;
};

void keep_worst(PointResult& acc, double lhs, double rhs, double scale, const PointwiseOptions& o,
                const Vec& x, const Vec& u, const Vec& w) {
  double slack = rhs - lhs;
  double credited = slack + o.tol_abs + o.tol_rel * scale;
  if (std::isnan(slack)) slack = credited = -std::numeric_limits<double>::infinity();
  ++acc.samples;
  acc.slack = std::min(acc.slack, slack);
  if (credited < acc.credited) {
    acc.credited = credited;
    acc.lhs = lhs;
    acc.rhs = rhs;
    acc.x = x;
    acc.u = u;
    acc.w = w;
  }
}

CheckReport reduce_points(const std::string& name, const std::vector<PointResult>& pts) {
  CheckReport rep;
  rep.check = name;
  std::size_t excluded = 0, samples = 0;
  const PointResult* worst = nullptr;
  double slack = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    if (p.excluded) {
      ++excluded;
      continue;
    }
    samples += p.samples;
    slack = std::min(slack, p.slack);
    if (p.samples && (!worst || p.credited < worst->credited)) worst = &p;
  }
  rep.knots = samples;
  rep.skipped = excluded;
  rep.worst_margin = slack;
  rep.metrics["samples"] = static_cast<double>(samples);
  if (excluded)
    rep.notes.push_back(std::to_string(excluded) + " state(s) inside the excluded origin ball");
  if (worst && worst->credited < 0.0) {
    rep.verdict = Verdict::Falsified;
    Witness w;
    w.input.x0 = worst->x;
    w.input.u = Signal::constant(worst->u);
    w.input.w = Signal::constant(worst->w);
    w.lhs = worst->lhs;
    w.rhs = worst->rhs;
    rep.witness = w;
  }
  return rep;
}

std::vector<Vec> controls_or_default(const SystemModel& sys, const std::vector<Vec>& c) {
  if (!c.empty()) {
    for (const Vec& u : c)
      if (u.size() != sys.m_u()) throw std::invalid_argument("grid: control dimension");
    return c;
  }
  return {Vec::Zero(sys.m_u())};
}

std::vector<Vec> disturbances_or_default(const SystemModel& sys, const std::vector<Vec>& d) {
  if (!d.empty()) {
    for (const Vec& w : d)
      if (w.size() != sys.m_w()) throw std::invalid_argument("grid: disturbance dimension");
    return d;
  }
  return sys.disturbance_samples();
}

}  // namespace

CheckReport verify_dissipation(const SystemModel& sys, const LyapCandidate& cand,
                               const DissipationGrid& grid, const PointwiseOptions& opts) {
  if (grid.states.empty()) throw std::invalid_argument("verify_dissipation: no states");
  const auto controls = controls_or_default(sys, grid.controls);
  const auto disturbances = disturbances_or_default(sys, grid.disturbances);
  const bool expo = cand.form == LyapCandidate::Form::Exponential;

  std::vector<PointResult> pts(grid.states.size());
  parallel_for(
      grid.states.size(),
      [&](std::size_t i) {
        const Vec& x = grid.states[i];
        PointResult& acc = pts[i];
        const double r = x.norm();
        if (r < opts.exclude_radius) {
          acc.excluded = true;
          return;
        }
        const Vec g = cand.grad(x);
        if (!g.allFinite()) throw std::runtime_error("verify_dissipation: gradient evaluation failed");
        const double decay = expo ? cand.V(x) : cand.alpha(r);
        const double s2 = sys.p() > 0 ? cand.sigma2(sys.h(x).norm()) : 0.0;
        for (const Vec& u : controls) {
          const double un = u.norm();
          if (cand.chi1 && r < (*cand.chi1)(un)) continue;
          const double s1 = sys.m_u() > 0 ? cand.sigma1(un) : 0.0;
          for (const Vec& w : disturbances) {
            const double lhs = g.dot(sys.f(x, u, w));
            const double rhs = -decay + s1 + s2;
            const double scale = std::max({std::abs(lhs), decay, s1, s2});
            keep_worst(acc, lhs, rhs, scale, opts, x, u, w);
          }
        }
      },
      opts.threads);
  CheckReport rep = reduce_points(expo ? "dissipation-exponential" : "dissipation", pts);
  rep.metrics["controls"] = static_cast<double>(controls.size());
  rep.metrics["disturbances"] = static_cast<double>(disturbances.size());
  return rep;
}

CheckReport check_bounds(const LyapCandidate& cand, const std::vector<Vec>& states,
                         const PointwiseOptions& opts) {
  std::vector<PointResult> pts(states.size() + 1);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const Vec& x = states[i];
    double r = x.norm(), v = cand.V(x), a1 = cand.alpha1(r), a2 = cand.alpha2(r);
    Vec e(0);
    keep_worst(pts[i], a1, v, std::max(a1, v), opts, x, e, e);
    keep_worst(pts[i], v, a2, std::max(a2, v), opts, x, e, e);
  }
  if (!states.empty()) {
    Vec zero = Vec::Zero(states.front().size()), e(0);
    double v0 = cand.V(zero);
    keep_worst(pts.back(), std::abs(v0), 0.0, 0.0, opts, zero, e, e);
  }
  return reduce_points("bounds", pts);
}

double gradient_mismatch(const LyapCandidate& cand, const std::vector<Vec>& states) {
  double worst = 0.0;
  for (const Vec& x : states) {
    Vec g = cand.grad(x), fd = fd_gradient(cand.V, x);
    worst = std::max(worst, (g - fd).norm() / (fd.norm() + 1e-8));
  }
  return worst;
}

namespace {

// Local lattice around `centre` with `points` per axis spanning +-h,
// restricted to the ball of radius `radius`.
std::vector<Vec> local_lattice(const Vec& centre, double h, int points, double radius) {
  std::vector<Vec> out;
  for (const Vec& d : box_grid(static_cast<int>(centre.size()), h, points)) {
    Vec p = centre + d;
    if (p.norm() <= radius * (1.0 + 1e-12)) out.push_back(std::move(p));
  }
  return out;
}

std::vector<double> strictly_increasing(std::vector<double> v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    v[k] = std::max(v[k], v[k - 1] + 1e-12 * (1.0 + v[k - 1]));
  return v;
}

}  // namespace

Reconstruction remark23_reconstruct(const SystemModel& sys, const LyapCandidate& cand,
                                    const ReconstructOptions& opts) {
  if (!cand.chi1) throw std::invalid_argument("remark23_reconstruct: candidate has no chi1");
  Reconstruction out;
  out.state_points = opts.state_points;
  out.control_points = opts.control_points;
  out.candidate = cand;
  out.candidate.name = cand.name + "+reconstructed";
  out.candidate.chi1.reset();
  const ComparisonFn& chi1 = *cand.chi1;

  if (sys.m_u() == 0) {
    out.candidate.sigma1 = ComparisonFn::zero();
    out.flags.push_back("system has no controls: sigma1 = 0");
    return out;
  }
  if (chi1.is_zero()) out.flags.push_back("chi1 is identically zero: state set is {0}");

  std::vector<double> r{0.0};
  for (int k = 0; k < opts.knots; ++k)
    r.push_back(opts.r_min *
                std::pow(opts.r_max / opts.r_min, opts.knots == 1 ? 0.0 : double(k) / (opts.knots - 1)));
  const auto& ws = sys.disturbance_samples();
  std::vector<double> hat(r.size(), 0.0);

  parallel_for(r.size() - 1, [&](std::size_t k0) {
    const std::size_t k = k0 + 1;
    const double rk = r[k], R = chi1(rk);
    auto value = [&](const Vec& x, const Vec& u) {
      Vec g = cand.grad(x);
      double best = -std::numeric_limits<double>::infinity();
      for (const Vec& w : ws) best = std::max(best, g.dot(sys.f(x, u, w)));
      return best + cand.alpha(chi1(u.norm()));
    };
    std::vector<Vec> xs = R > 0.0 ? ball_grid(sys.n(), R, opts.state_points)
                                  : std::vector<Vec>{Vec::Zero(sys.n())};
    std::vector<Vec> us = ball_grid(sys.m_u(), rk, opts.control_points);
    double best = -std::numeric_limits<double>::infinity();
    Vec bx, bu;
    for (const Vec& x : xs)
      for (const Vec& u : us) {
        double v = value(x, u);
        if (v > best) {
          best = v;
          bx = x;
          bu = u;
        }
      }
    if (opts.refine_points > 1) {
      double hx = opts.state_points > 1 ? 2.0 * R / (opts.state_points - 1) : 0.0;
      double hu = opts.control_points > 1 ? 2.0 * rk / (opts.control_points - 1) : 0.0;
      auto lx = R > 0.0 ? local_lattice(bx, hx, opts.refine_points, R) : std::vector<Vec>{bx};
      auto lu = local_lattice(bu, hu, opts.refine_points, rk);
      for (const Vec& x : lx)
        for (const Vec& u : lu) best = std::max(best, value(x, u));
    }
    hat[k] = best;
  });
  out.r = r;
  out.sigma_hat = hat;

  // max{0, .}, running max, shifted one knot up so that the linear
  // interpolant dominates the nondecreasing envelope between knots.
  std::vector<double> env(r.size(), 0.0);
  for (std::size_t k = 1; k < r.size(); ++k) env[k] = std::max(env[k - 1], std::max(0.0, hat[k]));
  if (env.back() <= 0.0) {
    out.candidate.sigma1 = ComparisonFn::zero();
    return out;
  }
  std::vector<double> v(r.size(), 0.0);
  for (std::size_t k = 1; k + 1 < r.size(); ++k) v[k] = env[k + 1];
  const std::size_t last = r.size() - 1;
  double slope = last >= 2 ? (env[last] - env[last - 1]) / (r[last] - r[last - 1]) : env[last] / r[last];
  v[last] = env[last] + slope * (r[last] - r[last - 1]);
  v = strictly_increasing(v);
  out.candidate.sigma1 = ComparisonFn::table(r, v, true);
  if (last >= 2 && hat[last] / r[last] > 1.01 * std::max(hat[last - 1], 0.0) / r[last - 1])
    out.flags.push_back("sigma1 grows superlinearly at r = " + std::to_string(r[last]) +
                        "; linear extrapolation beyond the grid may under-estimate");
  return out;
}

ComparisonFn rescaling_function(const ComparisonFn& a, const RescaleOptions& opts,
                                std::vector<std::string>* diagnostics) {
  if (!(opts.lo > 0.0 && opts.hi > opts.lo && opts.anchor >= opts.lo && opts.anchor <= opts.hi))
    throw std::invalid_argument("rescaling_function: need 0 < lo <= anchor <= hi");
  const double step = std::log(10.0) / opts.per_decade;
  const int panels = std::max(2, opts.simpson_panels + opts.simpson_panels % 2);
  // d log rho / d sigma = 2 e^sigma / a(e^sigma), sigma = log r
  auto integrand = [&](double sigma) {
    double r = std::exp(sigma), av = a(r);
    if (!(av > 0.0)) throw std::domain_error("rescaling_function: rate vanishes at r = " + std::to_string(r));
    return 2.0 * r / av;
  };
  auto simpson = [&](double s0, double s1) {
    double h = (s1 - s0) / panels, acc = integrand(s0) + integrand(s1);
    for (int i = 1; i < panels; ++i) acc += (i % 2 ? 4.0 : 2.0) * integrand(s0 + i * h);
    return acc * h / 3.0;
  };
  const double s_anchor = std::log(opts.anchor);
  const double s_lo = std::log(opts.lo), s_hi = std::log(opts.hi);
  const double limit = 690.0;

  std::vector<double> down_r, down_L, up_r, up_L;
  double L = 0.0;
  for (double s = s_anchor; s - step >= s_lo - 1e-12;) {
    double s1 = s - step;
    L -= simpson(s1, s);
    if (L < -limit) {
      if (diagnostics)
        diagnostics->push_back("rho underflows below r = " + std::to_string(std::exp(s)) +
                               "; table truncated there");
      break;
    }
    down_r.push_back(std::exp(s1));
    down_L.push_back(L);
    s = s1;
  }
  L = 0.0;
  for (double s = s_anchor; s + step <= s_hi + 1e-12;) {
    double s1 = s + step;
    L += simpson(s, s1);
    if (L > limit) {
      if (diagnostics)
        diagnostics->push_back("rho overflows beyond r = " + std::to_string(std::exp(s)) +
                               "; move the anchor or shrink the grid");
      break;
    }
    up_r.push_back(std::exp(s1));
    up_L.push_back(L);
    s = s1;
  }
  std::vector<double> rr, vv;
  for (std::size_t i = down_r.size(); i-- > 0;) {
    rr.push_back(down_r[i]);
    vv.push_back(std::exp(down_L[i]));
  }
  rr.push_back(opts.anchor);
  vv.push_back(1.0);
  for (std::size_t i = 0; i < up_r.size(); ++i) {
    rr.push_back(up_r[i]);
    vv.push_back(std::exp(up_L[i]));
  }
  return ComparisonFn::log_table(std::move(rr), std::move(vv));
}

namespace {

// sup of rho' over (0, v], sampled on a geometric grid that is extended on
// demand; the value at the first grid point >= v is returned.
class RunningMaxDerivative {
 public:
  RunningMaxDerivative(std::function<double(double)> d, double lo, double ratio)
      : d_(std::move(d)), ratio_(ratio) {
    r_.push_back(lo);
    m_.push_back(d_(lo));
  }
  double operator()(double v) {
    while (r_.back() < v) {
      double next = r_.back() * ratio_;
      double val = d_(next);
      if (!std::isfinite(val)) return std::numeric_limits<double>::infinity();
      r_.push_back(next);
      m_.push_back(std::max(m_.back(), val));
    }
    auto it = std::lower_bound(r_.begin(), r_.end(), v);
    return m_[static_cast<std::size_t>(it - r_.begin())];
  }

 private:
  std::function<double(double)> d_;
  double ratio_;
  std::vector<double> r_, m_;
};

}  // namespace

Rescaled exp_decay_rescale(const LyapCandidate& cand, const RescaleOptions& opts) {
  if (cand.form != LyapCandidate::Form::Standard)
    throw std::invalid_argument("exp_decay_rescale: candidate already in exponential form");
  if (cand.chi1)
    throw std::invalid_argument("exp_decay_rescale: implication form; run remark23_reconstruct first");
  if (!cand.alpha.unbounded())
    throw std::invalid_argument("exp_decay_rescale: alpha must be class K-infinity");
  Rescaled out;
  out.alpha_bar = compose(cand.alpha, invert(cand.alpha2));
  const double k = std::min(out.alpha_bar(opts.anchor) / opts.anchor, 2.0);
  out.a_used = min(out.alpha_bar, ComparisonFn::linear(k));
  out.rho = rescaling_function(out.a_used, opts, &out.diagnostics);

  const ComparisonFn rho = out.rho, a = out.a_used;
  auto drho = [rho, a, lo = opts.lo](double v) {
    double s = std::max(v, lo);
    return 2.0 * rho(s) / a(s);
  };
  const ComparisonFn abar_inv = invert(out.alpha_bar);
  const double ratio = std::pow(10.0, 1.0 / opts.per_decade);

  auto gain = [&](const ComparisonFn& sigma, const char* which) -> ComparisonFn {
    if (sigma.is_zero()) return ComparisonFn::zero();
    RunningMaxDerivative M(drho, opts.lo, ratio);
    // rho'(V)(s1 + s2) <= sigma_hat1 + sigma_hat2 whenever
    // V <= alpha_bar^{-1}(2 s1 + 2 s2): with s the larger of the two,
    // V <= alpha_bar^{-1}(4 s) and the left side is at most 2 s M(alpha_bar^{-1}(4 s)).
    auto q = [&](double r) { return 2.0 * sigma(r) * M(abar_inv(4.0 * sigma(r))); };
    std::vector<double> knots = log_knots();
    std::vector<double> rr{0.0}, vv{0.0};
    for (std::size_t i = 1; i + 1 < knots.size(); ++i) {
      double val = q(knots[i + 1]);
      if (!std::isfinite(val) || val > 1e300) {
        out.diagnostics.push_back(std::string(which) + " truncated at r = " + std::to_string(knots[i]));
        break;
      }
      rr.push_back(knots[i]);
      vv.push_back(val);
    }
    if (rr.size() < 3) throw std::domain_error(std::string("exp_decay_rescale: ") + which + " overflows");
    return ComparisonFn::table(rr, strictly_increasing(vv), true);
  };

  LyapCandidate W;
  W.name = cand.name + "+exp";
  W.form = LyapCandidate::Form::Exponential;
  ScalarFieldFn V = cand.V;
  W.V = [V, rho](const Vec& x) { return rho(V(x)); };
  W.gradV = [cand, drho](const Vec& x) { return Vec(drho(cand.V(x)) * cand.grad(x)); };
  W.alpha1 = compose(rho, cand.alpha1);
  W.alpha2 = compose(rho, cand.alpha2);
  W.alpha = W.alpha1;
  W.sigma1 = gain(cand.sigma1, "sigma1_hat");
  W.sigma2 = gain(cand.sigma2, "sigma2_hat");
  out.W = std::move(W);
  return out;
}

CheckReport hji_check(const SystemModel& sys, const LyapCandidate& cand,
                      const ComparisonFn& sigma1, const ComparisonFn& sigma2,
                      const std::vector<Vec>& states, const HjiOptions& opts) {
  if (!sys.affine()) throw std::invalid_argument("hji_check: system '" + sys.name() + "' is not control-affine");
  const AffineStructure& aff = *sys.affine();
  std::vector<PointResult> pts(states.size());
  std::vector<double> gaps(states.size(), 0.0);
  const int N = std::max(2, opts.u_points);
  parallel_for(
      states.size(),
      [&](std::size_t i) {
        const Vec& x = states[i];
        const Vec g = cand.grad(x);
        const Vec g0 = aff.g0(x);
        const Mat G = aff.g(x);
        const Vec b = G.transpose() * g;
        const double drift = g.dot(g0);
        const double closed = drift + 0.25 * b.squaredNorm();
        // The inner objective is separable in the u_i.
        double brute = drift;
        for (Eigen::Index j = 0; j < b.size(); ++j) {
          const double U = 0.5 * std::abs(b[j]) + 1.0;
          double best = -std::numeric_limits<double>::infinity();
          for (int k = 0; k < N; ++k) {
            double u = -U + 2.0 * U * k / (N - 1);
            best = std::max(best, b[j] * u - u * u);
          }
          brute += best;
        }
        gaps[i] = std::abs(closed - brute);
        const double s1 = sigma1(x.norm());
        const double s2 = sys.p() > 0 ? sigma2(sys.h(x).norm()) : 0.0;
        const double display = closed + s1 - s2;
        const double scale = std::max({std::abs(drift), 0.25 * b.squaredNorm(), s1, s2});
        Vec e(0);
        keep_worst(pts[i], display, 0.0, scale, opts.pointwise, x, e, e);
      },
      opts.pointwise.threads);
  CheckReport rep = reduce_points("hji", pts);
  double gap = states.empty() ? 0.0 : *std::max_element(gaps.begin(), gaps.end());
  rep.metrics["cross_check_gap"] = gap;
  rep.metrics["u_points"] = N;
  if (gap > opts.cross_tol)
    rep.notes.push_back("inner maximization cross-check gap " + std::to_string(gap) +
                        " exceeds tolerance");
  return rep;
}

}  // namespace ioss
