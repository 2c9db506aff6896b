#include "ioss/comparison.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ioss {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double interp_linear(const std::vector<double>& r, const std::vector<double>& v,
                     double x, bool unbounded) {
  const std::size_t n = r.size();
  if (x >= r.back()) {
    if (!unbounded) return v.back();
    double slope = (v[n - 1] - v[n - 2]) / (r[n - 1] - r[n - 2]);
    return v.back() + slope * (x - r.back());
  }
  auto it = std::upper_bound(r.begin(), r.end(), x);
  std::size_t k = static_cast<std::size_t>(it - r.begin()) - 1;
  double w = (x - r[k]) / (r[k + 1] - r[k]);
  return v[k] + w * (v[k + 1] - v[k]);
}

double interp_loglog(const std::vector<double>& r, const std::vector<double>& v,
                     double x) {
  if (x <= 0.0) return 0.0;
  const std::size_t n = r.size();
  std::size_t k;
  if (x <= r.front()) {
    k = 0;
  } else if (x >= r.back()) {
    k = n - 2;
  } else {
    auto it = std::upper_bound(r.begin(), r.end(), x);
    k = static_cast<std::size_t>(it - r.begin()) - 1;
  }
  double lr0 = std::log(r[k]), lr1 = std::log(r[k + 1]);
  double lv0 = std::log(v[k]), lv1 = std::log(v[k + 1]);
  double slope = (lv1 - lv0) / (lr1 - lr0);
  return std::exp(lv0 + slope * (std::log(x) - lr0));
}

void check_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x))
    throw std::invalid_argument(std::string(what) + " must be positive and finite");
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

}  // namespace

std::vector<double> log_knots(const TableOptions& opts) {
  if (!(opts.lo > 0.0) || !(opts.hi > opts.lo) || opts.per_decade < 1)
    throw std::invalid_argument("log_knots: need 0 < lo < hi and per_decade >= 1");
  int kmin = static_cast<int>(std::floor(std::log10(opts.lo) * opts.per_decade + 1e-9));
  int kmax = static_cast<int>(std::ceil(std::log10(opts.hi) * opts.per_decade - 1e-9));
  std::vector<double> r{0.0};
  for (int k = kmin; k <= kmax; ++k)
    r.push_back(std::pow(10.0, static_cast<double>(k) / opts.per_decade));
  return r;
}

struct ComparisonFn::Node {
  Kind kind = Kind::Linear;
  std::vector<double> p;
  std::vector<ComparisonFn> ch;
  std::vector<double> r, v;
  bool unbounded = true;
  double sup = kInf;
};

ComparisonFn::ComparisonFn() : ComparisonFn(linear(1.0)) {}
ComparisonFn::ComparisonFn(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

ComparisonFn ComparisonFn::identity() { return linear(1.0); }

ComparisonFn ComparisonFn::linear(double c) {
  if (c == 0.0) return zero();
  check_positive(c, "linear coefficient");
  auto n = std::make_shared<Node>();
  n->kind = Kind::Linear;
  n->p = {c};
  return ComparisonFn(n);
}

ComparisonFn ComparisonFn::zero() {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Linear;
  n->p = {0.0};
  n->unbounded = false;
  n->sup = 0.0;
  return ComparisonFn(n);
}

bool ComparisonFn::is_zero() const {
  return node_->kind == Kind::Linear && node_->p[0] == 0.0;
}

ComparisonFn ComparisonFn::power(double c, double p) {
  if (c == 0.0) return zero();
  check_positive(c, "power coefficient");
  check_positive(p, "power exponent");
  auto n = std::make_shared<Node>();
  n->kind = Kind::Power;
  n->p = {c, p};
  return ComparisonFn(n);
}

ComparisonFn ComparisonFn::sat_exp(double c, double k) {
  check_positive(c, "saturation level");
  check_positive(k, "saturation rate");
  auto n = std::make_shared<Node>();
  n->kind = Kind::SatExp;
  n->p = {c, k};
  n->unbounded = false;
  n->sup = c;
  return ComparisonFn(n);
}

ComparisonFn ComparisonFn::power_exp(double c, double p, double k) {
  check_positive(c, "coefficient");
  check_positive(p, "exponent");
  if (!(k >= 0.0) || !std::isfinite(k))
    throw std::invalid_argument("exponential rate must be nonnegative");
  auto n = std::make_shared<Node>();
  n->kind = Kind::PowerExp;
  n->p = {c, p, k};
  return ComparisonFn(n);
}

ComparisonFn ComparisonFn::table(std::vector<double> r, std::vector<double> v,
                                 bool unbounded) {
  if (r.size() != v.size() || r.size() < 2)
    throw std::invalid_argument("table: need at least two knots of equal length");
  if (r[0] != 0.0 || v[0] != 0.0)
    throw std::invalid_argument("table: first knot must be (0, 0)");
  for (std::size_t i = 1; i < r.size(); ++i) {
    if (!std::isfinite(r[i]) || !std::isfinite(v[i]))
      throw std::invalid_argument("table: non-finite knot");
    if (!(r[i] > r[i - 1]) || !(v[i] > v[i - 1]))
      throw std::invalid_argument("table: knots not strictly increasing at index " +
                                  std::to_string(i));
  }
  auto n = std::make_shared<Node>();
  n->kind = Kind::Table;
  n->r = std::move(r);
  n->v = std::move(v);
  n->unbounded = unbounded;
  n->sup = unbounded ? kInf : n->v.back();
  return ComparisonFn(n);
}

ComparisonFn ComparisonFn::log_table(std::vector<double> r, std::vector<double> v) {
  if (r.size() != v.size() || r.size() < 2)
    throw std::invalid_argument("log_table: need at least two knots of equal length");
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!(r[i] > 0.0) || !(v[i] > 0.0) || !std::isfinite(r[i]) || !std::isfinite(v[i]))
      throw std::invalid_argument("log_table: knots must be positive and finite");
    if (i > 0 && (!(r[i] > r[i - 1]) || !(v[i] > v[i - 1])))
      throw std::invalid_argument("log_table: knots not strictly increasing at index " +
                                  std::to_string(i));
  }
  auto n = std::make_shared<Node>();
  n->kind = Kind::LogTable;
  n->r = std::move(r);
  n->v = std::move(v);
  return ComparisonFn(n);
}

double ComparisonFn::operator()(double r) const {
  if (std::isnan(r)) return r;
  if (r < 0.0) throw std::domain_error("comparison function evaluated at negative argument");
  const Node& n = *node_;
  switch (n.kind) {
    case Kind::Linear:
      return n.p[0] * r;
    case Kind::Power:
      return n.p[0] * std::pow(r, n.p[1]);
    case Kind::SatExp:
      return -n.p[0] * std::expm1(-n.p[1] * r);
    case Kind::PowerExp:
      return n.p[0] * std::pow(r, n.p[1]) * std::exp(n.p[2] * r);
    case Kind::Table:
      return interp_linear(n.r, n.v, r, n.unbounded);
    case Kind::LogTable:
      return interp_loglog(n.r, n.v, r);
    case Kind::Compose:
      return n.ch[0](n.ch[1](r));
    case Kind::Max:
      return std::max(n.ch[0](r), n.ch[1](r));
    case Kind::Min:
      return std::min(n.ch[0](r), n.ch[1](r));
    case Kind::Sum:
      return n.ch[0](r) + n.ch[1](r);
  }
  return 0.0;
}

ComparisonFn::Kind ComparisonFn::kind() const { return node_->kind; }
bool ComparisonFn::unbounded() const { return node_->unbounded; }
double ComparisonFn::sup() const { return node_->sup; }
const std::vector<double>& ComparisonFn::params() const { return node_->p; }
const std::vector<ComparisonFn>& ComparisonFn::children() const { return node_->ch; }
const std::vector<double>& ComparisonFn::knots_r() const { return node_->r; }
const std::vector<double>& ComparisonFn::knots_v() const { return node_->v; }

std::string ComparisonFn::describe() const {
  const Node& n = *node_;
  switch (n.kind) {
    case Kind::Linear:
      if (n.p[0] == 0.0) return "0";
      return n.p[0] == 1.0 ? "id" : fmt(n.p[0]) + "*r";
    case Kind::Power:
      return fmt(n.p[0]) + "*r^" + fmt(n.p[1]);
    case Kind::SatExp:
      return fmt(n.p[0]) + "*(1-exp(-" + fmt(n.p[1]) + "*r))";
    case Kind::PowerExp:
      return fmt(n.p[0]) + "*r^" + fmt(n.p[1]) + "*exp(" + fmt(n.p[2]) + "*r)";
    case Kind::Table:
      return "table[" + std::to_string(n.r.size()) + "]";
    case Kind::LogTable:
      return "logtable[" + std::to_string(n.r.size()) + "]";
    case Kind::Compose:
      return "(" + n.ch[0].describe() + ")o(" + n.ch[1].describe() + ")";
    case Kind::Max:
      return "max(" + n.ch[0].describe() + ", " + n.ch[1].describe() + ")";
    case Kind::Min:
      return "min(" + n.ch[0].describe() + ", " + n.ch[1].describe() + ")";
    case Kind::Sum:
      return "(" + n.ch[0].describe() + " + " + n.ch[1].describe() + ")";
  }
  return "?";
}

ComparisonFn compose(const ComparisonFn& f, const ComparisonFn& g) {
  using K = ComparisonFn::Kind;
  if (f.is_zero() || g.is_zero()) return ComparisonFn::zero();
  if (f.kind() == K::Linear && f.params()[0] == 1.0) return g;
  if (g.kind() == K::Linear && g.params()[0] == 1.0) return f;
  if (f.kind() == K::Linear && g.kind() == K::Linear)
    return ComparisonFn::linear(f.params()[0] * g.params()[0]);
  if (f.kind() == K::Linear && g.kind() == K::Power)
    return ComparisonFn::power(f.params()[0] * g.params()[0], g.params()[1]);
  auto n = std::make_shared<ComparisonFn::Node>();
  n->kind = K::Compose;
  n->ch = {f, g};
  n->unbounded = f.unbounded() && g.unbounded();
  if (!g.unbounded())
    n->sup = f(g.sup());
  else
    n->sup = f.sup();
  return ComparisonFn(n);
}

ComparisonFn max(const ComparisonFn& f, const ComparisonFn& g) {
  auto n = std::make_shared<ComparisonFn::Node>();
  n->kind = ComparisonFn::Kind::Max;
  n->ch = {f, g};
  n->unbounded = f.unbounded() || g.unbounded();
  n->sup = std::max(f.sup(), g.sup());
  return ComparisonFn(n);
}

ComparisonFn min(const ComparisonFn& f, const ComparisonFn& g) {
  auto n = std::make_shared<ComparisonFn::Node>();
  n->kind = ComparisonFn::Kind::Min;
  n->ch = {f, g};
  n->unbounded = f.unbounded() && g.unbounded();
  n->sup = std::min(f.sup(), g.sup());
  return ComparisonFn(n);
}

ComparisonFn sum(const ComparisonFn& f, const ComparisonFn& g) {
  auto n = std::make_shared<ComparisonFn::Node>();
  n->kind = ComparisonFn::Kind::Sum;
  n->ch = {f, g};
  n->unbounded = f.unbounded() || g.unbounded();
  n->sup = f.sup() + g.sup();
  return ComparisonFn(n);
}

ComparisonFn scale(double c, const ComparisonFn& f) {
  if (c == 0.0) return ComparisonFn::zero();
  return compose(ComparisonFn::linear(c), f);
}

namespace {

bool invertible_to(const ComparisonFn& f, std::optional<double> cap) {
  if (f.unbounded()) return true;
  return cap && *cap <= f.sup();
}

ComparisonFn swapped_table(const std::vector<double>& r, const std::vector<double>& v,
                           std::optional<double> cap, bool unbounded) {
  std::vector<double> ir{0.0}, iv{0.0};
  for (std::size_t i = 1; i < r.size(); ++i) {
    if (!std::isfinite(v[i]) || v[i] > 1e300) break;
    if (!(v[i] > ir.back())) continue;
    ir.push_back(v[i]);
    iv.push_back(r[i]);
    if (cap && v[i] >= *cap) break;
  }
  if (ir.size() < 2) throw std::domain_error("invert: function is flat on its knots");
  return ComparisonFn::table(std::move(ir), std::move(iv), unbounded || cap.has_value());
}

// Log-spaced knots, refined wherever consecutive values grow by more than
// the same ratio as the knots themselves.
std::vector<double> adaptive_knots(const ComparisonFn& f, const TableOptions& opts) {
  std::vector<double> base = log_knots(opts);
  const double q = std::pow(10.0, 1.0 / opts.per_decade) * (1 + 1e-9);
  std::vector<double> out{0.0};
  for (std::size_t i = 1; i < base.size(); ++i) {
    double a = base[i - 1] > 0.0 ? base[i - 1] : 0.0;
    double b = base[i];
    double fb = f(b);
    if (!std::isfinite(fb) || fb > 1e300) {
      // refine towards the overflow point so the finite range is covered
      double lo = a, hi = b;
      for (int k = 0; k < 60 && a > 0.0; ++k) {
        double mid = 0.5 * (lo + hi);
        double fm = f(mid);
        (std::isfinite(fm) && fm <= 1e300 ? lo : hi) = mid;
      }
      b = lo;
      if (!(b > out.back())) break;
      fb = f(b);
    }
    if (a > 0.0) {
      std::vector<std::pair<double, double>> stack{{a, b}};
      std::vector<double> seg;
      while (!stack.empty()) {
        auto [x0, x1] = stack.back();
        stack.pop_back();
        double f0 = f(x0), f1 = f(x1);
        if (f0 > 0.0 && f1 / f0 > q && x1 - x0 > 1e-12 * x1) {
          double mid = std::sqrt(x0 * x1);
          stack.push_back({mid, x1});
          stack.push_back({x0, mid});
        } else {
          seg.push_back(x1);
        }
      }
      out.insert(out.end(), seg.begin(), seg.end());
    } else {
      out.push_back(b);
    }
    if (b != base[i]) break;
  }
  return out;
}

}  // namespace

ComparisonFn invert(const ComparisonFn& f, std::optional<double> range_cap,
                    const TableOptions& opts) {
  using K = ComparisonFn::Kind;
  if (!invertible_to(f, range_cap))
    throw std::domain_error("invert: " + f.describe() +
                            " is bounded; a range cap below its supremum is required");
  switch (f.kind()) {
    case K::Linear:
      return ComparisonFn::linear(1.0 / f.params()[0]);
    case K::Power: {
      double c = f.params()[0], p = f.params()[1];
      return ComparisonFn::power(std::pow(c, -1.0 / p), 1.0 / p);
    }
    case K::Compose: {
      const auto& outer = f.children()[0];
      const auto& inner = f.children()[1];
      if (invertible_to(outer, range_cap)) {
        ComparisonFn oi = invert(outer, range_cap, opts);
        std::optional<double> inner_cap;
        if (range_cap) inner_cap = oi(*range_cap);
        if (invertible_to(inner, inner_cap))
          return compose(invert(inner, inner_cap, opts), oi);
      }
      break;
    }
    case K::Max: {
      const auto& a = f.children()[0];
      const auto& b = f.children()[1];
      if (invertible_to(a, range_cap) && invertible_to(b, range_cap))
        return min(invert(a, range_cap, opts), invert(b, range_cap, opts));
      break;
    }
    case K::Min: {
      const auto& a = f.children()[0];
      const auto& b = f.children()[1];
      if (invertible_to(a, range_cap) && invertible_to(b, range_cap))
        return max(invert(a, range_cap, opts), invert(b, range_cap, opts));
      break;
    }
    case K::Table:
      return swapped_table(f.knots_r(), f.knots_v(), range_cap, f.unbounded());
    case K::LogTable:
      return ComparisonFn::log_table(f.knots_v(), f.knots_r());
    default:
      break;
  }
  TableOptions dense = opts;
  dense.per_decade *= opts.inverse_oversample;
  std::vector<double> r = adaptive_knots(f, dense);
  std::vector<double> v(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) v[i] = f(r[i]);
  if (range_cap) {
    int guard = 0;
    while (v.back() < *range_cap) {
      if (++guard > 300) throw std::domain_error("invert: range cap not reached");
      r.push_back(r.back() * 1.5);
      v.push_back(f(r.back()));
    }
  }
  return swapped_table(r, v, range_cap, f.unbounded());
}

ComparisonFn tabulate_on(const ComparisonFn& f, std::vector<double> r, bool unbounded) {
  if (r.empty() || r[0] != 0.0) throw std::invalid_argument("tabulate_on: knots must start at 0");
  std::vector<double> v(r.size());
  v[0] = 0.0;
  for (std::size_t i = 1; i < r.size(); ++i) {
    v[i] = f(r[i]);
    if (!std::isfinite(v[i]) || v[i] > 1e300) {
      if (i < 2) throw std::domain_error("tabulate: overflow at the first knot");
      r.resize(i);
      v.resize(i);
      break;
    }
    double floor = v[i - 1] + 1e-15 * std::abs(v[i - 1]) + 1e-300;
    if (!(v[i] > v[i - 1])) v[i] = floor;
  }
  return ComparisonFn::table(std::move(r), std::move(v), unbounded);
}

ComparisonFn tabulate(const ComparisonFn& f, const TableOptions& opts) {
  return tabulate_on(f, adaptive_knots(f, opts), f.unbounded());
}

std::optional<std::size_t> first_monotonicity_violation(const ComparisonFn& f,
                                                        const std::vector<double>& r) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    double v = f(r[i]);
    if (r[i] == 0.0 && v != 0.0) return i;
    if (i > 0 && !(v > f(r[i - 1]))) return i - 1;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

struct KLFn::Node {
  Kind kind = Kind::Factored;
  ComparisonFn a, b;
  std::vector<double> p;
  std::vector<KLFn> ch;
  std::vector<double> gr, gt;
  std::vector<std::vector<double>> gv;
  std::string name;
  std::function<double(double, double)> fn;
};

KLFn::KLFn(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

KLFn KLFn::factored(ComparisonFn mu1, ComparisonFn mu2) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Factored;
  n->a = std::move(mu1);
  n->b = std::move(mu2);
  return KLFn(n);
}

KLFn KLFn::decay(ComparisonFn a, double b0, double b1) {
  check_positive(b0, "decay time constant");
  if (!(b1 >= 0.0)) throw std::invalid_argument("decay slope must be nonnegative");
  auto n = std::make_shared<Node>();
  n->kind = Kind::Decay;
  n->a = std::move(a);
  n->p = {b0, b1};
  return KLFn(n);
}

KLFn KLFn::grid(std::vector<double> r, std::vector<double> t,
                std::vector<std::vector<double>> values) {
  if (r.size() < 2 || t.size() < 2 || values.size() != r.size())
    throw std::invalid_argument("KL grid: need at least 2x2 knots");
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (values[i].size() != t.size()) throw std::invalid_argument("KL grid: ragged values");
    if (i > 0 && !(r[i] > r[i - 1])) throw std::invalid_argument("KL grid: r not increasing");
  }
  for (std::size_t j = 1; j < t.size(); ++j)
    if (!(t[j] > t[j - 1])) throw std::invalid_argument("KL grid: t not increasing");
  auto n = std::make_shared<Node>();
  n->kind = Kind::Grid;
  n->gr = std::move(r);
  n->gt = std::move(t);
  n->gv = std::move(values);
  return KLFn(n);
}

KLFn KLFn::custom(std::string name, std::function<double(double, double)> eval,
                  ComparisonFn at_zero, std::vector<KLFn> children,
                  std::vector<double> params) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Custom;
  n->name = std::move(name);
  n->fn = std::move(eval);
  n->a = std::move(at_zero);
  n->ch = std::move(children);
  n->p = std::move(params);
  return KLFn(n);
}

namespace {

std::pair<std::size_t, double> bracket(const std::vector<double>& x, double q) {
  if (q <= x.front()) return {0, 0.0};
  if (q >= x.back()) return {x.size() - 2, 1.0};
  auto it = std::upper_bound(x.begin(), x.end(), q);
  std::size_t k = static_cast<std::size_t>(it - x.begin()) - 1;
  return {k, (q - x[k]) / (x[k + 1] - x[k])};
}

}  // namespace

double KLFn::operator()(double r, double t) const {
  const Node& n = *node_;
  switch (n.kind) {
    case Kind::Factored:
      return n.a(n.b(r) * std::exp(-t));
    case Kind::Decay:
      return n.a(r) * std::exp(-t / (n.p[0] + n.p[1] * r));
    case Kind::Grid: {
      auto [i, wr] = bracket(n.gr, r);
      auto [j, wt] = bracket(n.gt, t);
      double v00 = n.gv[i][j], v01 = n.gv[i][j + 1];
      double v10 = n.gv[i + 1][j], v11 = n.gv[i + 1][j + 1];
      return (1 - wr) * ((1 - wt) * v00 + wt * v01) + wr * ((1 - wt) * v10 + wt * v11);
    }
    case Kind::Max:
      return std::max(n.ch[0](r, t), n.ch[1](r, t));
    case Kind::Scaled:
      return n.p[0] * n.ch[0](r, t);
    case Kind::Custom:
      return n.fn(r, t);
  }
  return 0.0;
}

KLFn::Kind KLFn::kind() const { return node_->kind; }

ComparisonFn KLFn::at_zero(const TableOptions& opts) const {
  const Node& n = *node_;
  switch (n.kind) {
    case Kind::Factored:
      return compose(n.a, n.b);
    case Kind::Decay:
      return n.a;
    case Kind::Max:
      return max(n.ch[0].at_zero(opts), n.ch[1].at_zero(opts));
    case Kind::Scaled:
      return scale(n.p[0], n.ch[0].at_zero(opts));
    case Kind::Custom:
      return n.a;
    case Kind::Grid: {
      std::vector<double> r{0.0}, v{0.0};
      for (std::size_t i = 0; i < n.gr.size(); ++i) {
        if (n.gr[i] <= 0.0) continue;
        r.push_back(n.gr[i]);
        double val = n.gv[i][0];
        v.push_back(val > v.back() ? val : v.back() + 1e-15 * std::abs(v.back()) + 1e-300);
      }
      return ComparisonFn::table(std::move(r), std::move(v), true);
    }
  }
  return ComparisonFn::identity();
}

const ComparisonFn& KLFn::mu1() const {
  if (node_->kind != Kind::Factored) throw std::logic_error("mu1: not a factored KL function");
  return node_->a;
}
const ComparisonFn& KLFn::mu2() const {
  if (node_->kind != Kind::Factored) throw std::logic_error("mu2: not a factored KL function");
  return node_->b;
}
const ComparisonFn& KLFn::amplitude() const {
  if (node_->kind != Kind::Decay) throw std::logic_error("amplitude: not a decay KL function");
  return node_->a;
}
const std::vector<double>& KLFn::params() const { return node_->p; }
const std::vector<KLFn>& KLFn::children() const { return node_->ch; }
const std::vector<double>& KLFn::grid_r() const { return node_->gr; }
const std::vector<double>& KLFn::grid_t() const { return node_->gt; }
const std::vector<std::vector<double>>& KLFn::grid_values() const { return node_->gv; }
const std::string& KLFn::name() const { return node_->name; }

std::string KLFn::describe() const {
  const Node& n = *node_;
  switch (n.kind) {
    case Kind::Factored:
      return "mu1(mu2(r)e^-t) with mu1=" + n.a.describe() + ", mu2=" + n.b.describe();
    case Kind::Decay:
      return n.a.describe() + "*exp(-t/(" + fmt(n.p[0]) + "+" + fmt(n.p[1]) + "r))";
    case Kind::Grid:
      return "grid[" + std::to_string(n.gr.size()) + "x" + std::to_string(n.gt.size()) + "]";
    case Kind::Max:
      return "max(" + n.ch[0].describe() + ", " + n.ch[1].describe() + ")";
    case Kind::Scaled:
      return fmt(n.p[0]) + "*(" + n.ch[0].describe() + ")";
    case Kind::Custom:
      return n.ch.empty() ? n.name : n.name + "(" + n.ch[0].describe() + ")";
  }
  return "?";
}

KLFn max(const KLFn& a, const KLFn& b) {
  auto n = std::make_shared<KLFn::Node>();
  n->kind = KLFn::Kind::Max;
  n->ch = {a, b};
  return KLFn(n);
}

KLFn scale(double c, const KLFn& b) {
  check_positive(c, "KL scale");
  auto n = std::make_shared<KLFn::Node>();
  n->kind = KLFn::Kind::Scaled;
  n->p = {c};
  n->ch = {b};
  return KLFn(n);
}

KLGrid KLGrid::sample(const std::function<double(double, double)>& fn,
                      std::vector<double> r, std::vector<double> t) {
  KLGrid g;
  g.values.assign(r.size(), std::vector<double>(t.size()));
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < t.size(); ++j) g.values[i][j] = fn(r[i], t[j]);
  g.r = std::move(r);
  g.t = std::move(t);
  return g;
}

// ---------------------------------------------------------------------------

namespace {

void validate_shape(const KLGrid& g) {
  if (g.r.empty() || g.t.empty() || g.values.size() != g.r.size())
    throw std::invalid_argument("KL grid: empty or mismatched");
  for (std::size_t i = 0; i < g.r.size(); ++i) {
    if (g.values[i].size() != g.t.size()) throw std::invalid_argument("KL grid: ragged values");
    if (!(g.r[i] >= 0.0) || (i > 0 && !(g.r[i] > g.r[i - 1])))
      throw std::invalid_argument("KL grid: r knots must be nonnegative and increasing");
  }
  for (std::size_t j = 0; j < g.t.size(); ++j)
    if (!(g.t[j] >= 0.0) || (j > 0 && !(g.t[j] > g.t[j - 1])))
      throw std::invalid_argument("KL grid: t knots must be nonnegative and increasing");
}

// Raises each value just above its predecessor where the sequence fails to
// increase strictly; `eta` is the minimal slope.
void make_strict(const std::vector<double>& x, std::vector<double>& v, double eta) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    double floor = v[i - 1] + eta * (x[i] - x[i - 1]);
    if (!(v[i] > v[i - 1]) || v[i] < floor) v[i] = std::max(v[i], floor);
    if (!(v[i] > v[i - 1])) v[i] = std::nextafter(v[i - 1], kInf);
  }
}

}  // namespace

KLFn kl_factorize(const KLGrid& g) {
  validate_shape(g);
  const std::size_t nr = g.r.size(), nt = g.t.size();
  double vmax = 0.0;
  for (const auto& row : g.values)
    for (double v : row) {
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("KL grid: values must be finite and nonnegative");
      vmax = std::max(vmax, v);
    }
  const double tol = 1e-12 * std::max(1.0, vmax);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nt; ++j) {
      if (i > 0 && g.values[i][j] < g.values[i - 1][j] - tol)
        throw MonotonicityError("KL grid decreases in r at r=" + fmt(g.r[i]) + ", t=" + fmt(g.t[j]),
                                i, j);
      if (j > 0 && g.values[i][j] > g.values[i][j - 1] + tol)
        throw MonotonicityError("KL grid increases in t at r=" + fmt(g.r[i]) + ", t=" + fmt(g.t[j]),
                                i, j);
    }
  if (g.r[0] == 0.0 && g.values[0][0] > tol)
    throw MonotonicityError("KL grid is nonzero at r=0", 0, 0);

  // mu2 on the r knots: the t_min column lifted by e^{t_min}.
  const double rmax = g.r.back();
  const double eta = 1e-9 * std::max(vmax, 1.0) / std::max(rmax, 1e-300);
  std::vector<double> r2{0.0}, v2{0.0};
  for (std::size_t i = 0; i < nr; ++i) {
    if (g.r[i] == 0.0) continue;
    r2.push_back(g.r[i]);
    v2.push_back(g.values[i][0] * std::exp(g.t[0]));
  }
  if (r2.size() < 2) throw std::invalid_argument("KL grid: needs a positive r knot");
  make_strict(r2, v2, eta);
  ComparisonFn mu2 = ComparisonFn::table(r2, v2, true);

  // mu1 as the monotone envelope of (mu2(r_i) e^{-t_j}, G_ij).
  struct Pt { double s, g; };
  std::vector<Pt> pts;
  pts.reserve(nr * nt);
  for (std::size_t i = 0; i < nr; ++i) {
    if (g.r[i] == 0.0) continue;
    double m2 = mu2(g.r[i]);
    for (std::size_t j = 0; j < nt; ++j) pts.push_back({m2 * std::exp(-g.t[j]), g.values[i][j]});
  }
  std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) { return a.s < b.s; });
  std::vector<double> s1{0.0}, v1{0.0};
  double running = 0.0;
  for (const Pt& p : pts) {
    running = std::max(running, p.g);
    if (p.s <= 0.0) continue;
    if (p.s == s1.back()) {
      v1.back() = std::max(v1.back(), running);
    } else {
      s1.push_back(p.s);
      v1.push_back(running);
    }
  }
  make_strict(s1, v1, eta * std::max(rmax, 1.0) / std::max(s1.back(), 1e-300));
  ComparisonFn mu1 = ComparisonFn::table(s1, v1, true);
  return KLFn::factored(mu1, mu2);
}

KLFn kl_majorize(const KLGrid& g, const MajorizeOptions& opts) {
  validate_shape(g);
  if (g.r[0] != 0.0)
    throw std::invalid_argument("kl_majorize: grid must include the r = 0 row");
  const std::size_t nr = g.r.size(), nt = g.t.size();
  for (std::size_t j = 0; j < nt; ++j)
    if (g.values[0][j] > opts.origin_tol)
      throw ConditionViolation("condition 2 (smallness near r = 0) violated at r=0, t=" +
                                   fmt(g.t[j]) + ": value " + fmt(g.values[0][j]),
                               2, 0.0, g.t[j]);
  for (std::size_t i = 1; i < nr; ++i) {
    double sup = *std::max_element(g.values[i].begin(), g.values[i].end());
    double tail = g.values[i].back();
    if (tail > 0.0 && tail > opts.tail_ratio * sup)
      throw ConditionViolation("condition 1 (uniform eventual smallness) violated at r=" +
                                   fmt(g.r[i]) + ", t=" + fmt(g.t.back()) + ": value " +
                                   fmt(tail) + " does not decay",
                               1, g.r[i], g.t.back());
  }
  // Envelope: sup over r' <= r and t' >= t.
  KLGrid env = g;
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t jj = nt; jj-- > 0;) {
      double v = std::max(0.0, g.values[i][jj]);
      if (jj + 1 < nt) v = std::max(v, env.values[i][jj + 1]);
      if (i > 0) v = std::max(v, env.values[i - 1][jj]);
      env.values[i][jj] = v;
    }
  for (std::size_t j = 0; j < nt; ++j) env.values[0][j] = 0.0;
  return kl_factorize(env);
}

// ---------------------------------------------------------------------------

double cascade_base(const KLFn& b, double r, double t) {
  double b0 = std::max(b(r, 0.0), r);
  return std::max(b(r, t), b0 * std::exp(-t));
}

namespace {

struct Cascade {
  KLFn base;
  CascadeOptions opts;

  // First time the premajorized bound reaches r/2.
  double halving_time(double r) const {
    const double target = 0.5 * r;
    double lo = 0.0, hi = 1.0;
    int guard = 0;
    while (cascade_base(base, r, hi) > target) {
      lo = hi;
      hi *= 2.0;
      if (++guard > 200) throw std::runtime_error("kl_cascade: halving time not found");
    }
    for (int k = 0; k < opts.bisection_steps; ++k) {
      double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if (cascade_base(base, r, mid) > target)
        lo = mid;
      else
        hi = mid;
    }
    return hi;
  }

  // Piecewise bound together with its tail envelope in t.
  double piece(double r, double t) const {
    if (r <= 0.0) return 0.0;
    double start = 0.0;
    double s = r;
    for (int k = 0; k < 2000; ++k) {
      double tr = halving_time(s);
      if (t < start + tr || s == 0.0) {
        double phi = cascade_base(base, s, t - start);
        double tail = cascade_base(base, 0.5 * s, 0.0);
        return std::max(phi, tail);
      }
      start += tr;
      s *= 0.5;
    }
    return cascade_base(base, s, 0.0);
  }

  double operator()(double r, double t) const {
    if (r <= 0.0) return 0.0;
    double best = 0.0;
    for (int j = 1; j <= opts.density; ++j) {
      double s = (j == opts.density) ? r : r * j / opts.density;
      best = std::max(best, piece(s, t));
    }
    return best;
  }
};

}  // namespace

CascadeResult kl_cascade(const KLFn& beta_hat, const CascadeOptions& opts) {
  if (opts.density < 1) throw std::invalid_argument("kl_cascade: density must be >= 1");
  auto c = std::make_shared<Cascade>(Cascade{beta_hat, opts});
  ComparisonFn b0 = max(beta_hat.at_zero(), ComparisonFn::identity());
  KLFn beta = KLFn::custom(
      "cascade", [c](double r, double t) { return (*c)(r, t); }, b0, {beta_hat},
      {static_cast<double>(opts.density), static_cast<double>(opts.bisection_steps)});
  ComparisonFn nu = compose(b0, ComparisonFn::linear(2.0));
  return {beta, nu};
}

}  // namespace ioss
