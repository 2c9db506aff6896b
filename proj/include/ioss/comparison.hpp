#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ioss {

// Knot placement for tabulated gains: the origin plus log-spaced knots
// 10^(k/per_decade) covering [lo, hi].
struct TableOptions {
  double lo = 1e-4;
  double hi = 1e4;
  int per_decade = 8;
  // Inverses sampled from a non-invertible expression use this many times
  // more knots.
  int inverse_oversample = 4;
};

std::vector<double> log_knots(const TableOptions& opts = {});

class ComparisonFn {
 public:
  enum class Kind {
    Linear,     // c*r
    Power,      // c*r^p
    SatExp,     // c*(1 - exp(-k r)), bounded
    PowerExp,   // c*r^p*exp(k r)
    Table,      // piecewise linear through (r_i, v_i)
    LogTable,   // piecewise linear in log-log coordinates
    Compose,    // outer(inner(r))
    Max,
    Min,
    Sum
  };

  struct Node;

  ComparisonFn();  // identity

  static ComparisonFn identity();
  // The zero gain. Not class K; allowed wherever a gain may vanish.
  static ComparisonFn zero();
  bool is_zero() const;
  static ComparisonFn linear(double c);
  static ComparisonFn power(double c, double p);
  static ComparisonFn sat_exp(double c, double k);
  static ComparisonFn power_exp(double c, double p, double k);
  // Knots must start at (0, 0) and be strictly increasing in both
  // coordinates. Unbounded tables extrapolate with the last slope,
  // bounded ones hold the last value.
  static ComparisonFn table(std::vector<double> r, std::vector<double> v,
                            bool unbounded = true);
  // Positive knots only; interpolation and extrapolation are power laws
  // between/beyond knots, and the value at 0 is 0.
  static ComparisonFn log_table(std::vector<double> r, std::vector<double> v);

  double operator()(double r) const;

  Kind kind() const;
  bool unbounded() const;
  // Supremum of the range (infinity when unbounded).
  double sup() const;

  const std::vector<double>& params() const;
  const std::vector<ComparisonFn>& children() const;
  const std::vector<double>& knots_r() const;
  const std::vector<double>& knots_v() const;

  // Structural description used in reports and error messages.
  std::string describe() const;

 private:
  explicit ComparisonFn(std::shared_ptr<const Node> n);
  std::shared_ptr<const Node> node_;

  friend ComparisonFn compose(const ComparisonFn&, const ComparisonFn&);
  friend ComparisonFn max(const ComparisonFn&, const ComparisonFn&);
  friend ComparisonFn min(const ComparisonFn&, const ComparisonFn&);
  friend ComparisonFn sum(const ComparisonFn&, const ComparisonFn&);
};

// f o g
ComparisonFn compose(const ComparisonFn& f, const ComparisonFn& g);
ComparisonFn max(const ComparisonFn& f, const ComparisonFn& g);
ComparisonFn min(const ComparisonFn& f, const ComparisonFn& g);
ComparisonFn sum(const ComparisonFn& f, const ComparisonFn& g);
ComparisonFn scale(double c, const ComparisonFn& f);

// Inverse. Closed forms are used for linear and power primitives and are
// propagated through compose/max/min; everything else becomes a swapped
// table sampled on the knots of `opts`, extended until the range reaches
// `range_cap` when one is given. Inverting a bounded function without a
// cap (or with a cap beyond its range) throws.
ComparisonFn invert(const ComparisonFn& f,
                    std::optional<double> range_cap = std::nullopt,
                    const TableOptions& opts = {});

// Samples f on the knots of `opts` into a Lipschitz piecewise linear table.
ComparisonFn tabulate(const ComparisonFn& f, const TableOptions& opts = {});

// Samples f on `r` (which must start at 0) and returns the table, made
// strictly increasing where sampling produced ties.
ComparisonFn tabulate_on(const ComparisonFn& f, std::vector<double> r,
                         bool unbounded);

// Returns the first adjacent pair of `r` where f fails to be zero at the
// origin or strictly increasing, or nullopt.
std::optional<std::size_t> first_monotonicity_violation(
    const ComparisonFn& f, const std::vector<double>& r);

// Two-argument decay bound.
class KLFn {
 public:
  enum class Kind { Factored, Decay, Grid, Max, Scaled, Custom };
  struct Node;

  // mu1(mu2(r) e^{-t})
  static KLFn factored(ComparisonFn mu1, ComparisonFn mu2);
  // a(r) exp(-t / (b0 + b1 r)); b0 > 0, b1 >= 0
  static KLFn decay(ComparisonFn a, double b0 = 1.0, double b1 = 0.0);
  // Bilinear interpolation of values[i][j] at (r[i], t[j]); clamped to the
  // grid outside it.
  static KLFn grid(std::vector<double> r, std::vector<double> t,
                   std::vector<std::vector<double>> values);
  // `children` and `params` record how the function was built so that it
  // can be serialized and rebuilt.
  static KLFn custom(std::string name,
                     std::function<double(double, double)> eval,
                     ComparisonFn at_zero, std::vector<KLFn> children = {},
                     std::vector<double> params = {});

  double operator()(double r, double t) const;
  Kind kind() const;

  // beta(., 0). Exact for factored and decay forms, tabulated otherwise.
  ComparisonFn at_zero(const TableOptions& opts = {}) const;

  const ComparisonFn& mu1() const;  // Factored only
  const ComparisonFn& mu2() const;  // Factored only
  const ComparisonFn& amplitude() const;  // Decay only
  const std::vector<double>& params() const;
  const std::vector<KLFn>& children() const;
  const std::vector<double>& grid_r() const;
  const std::vector<double>& grid_t() const;
  const std::vector<std::vector<double>>& grid_values() const;
  const std::string& name() const;

  std::string describe() const;

 private:
  explicit KLFn(std::shared_ptr<const Node> n);
  std::shared_ptr<const Node> node_;

  friend KLFn max(const KLFn&, const KLFn&);
  friend KLFn scale(double, const KLFn&);
};

KLFn max(const KLFn& a, const KLFn& b);
KLFn scale(double c, const KLFn& b);

// Sampled two-argument function: values[i][j] at (r[i], t[j]).
struct KLGrid {
  std::vector<double> r;
  std::vector<double> t;
  std::vector<std::vector<double>> values;

  static KLGrid sample(const std::function<double(double, double)>& fn,
                       std::vector<double> r, std::vector<double> t);
};

class MonotonicityError : public std::runtime_error {
 public:
  MonotonicityError(const std::string& what, std::size_t i, std::size_t j)
      : std::runtime_error(what), i(i), j(j) {}
  std::size_t i, j;
};

// Failure of one of the two majorization conditions; `condition` is 1
// (uniform eventual smallness) or 2 (smallness near r = 0).
class ConditionViolation : public std::runtime_error {
 public:
  ConditionViolation(const std::string& what, int condition, double r,
                     double t)
      : std::runtime_error(what), condition(condition), r(r), t(t) {}
  int condition;
  double r, t;
};

KLFn kl_factorize(const KLGrid& grid);

struct MajorizeOptions {
  // Condition 1 is accepted when every row's value at the last time knot is
  // at most this fraction of the row's supremum (or is zero).
  double tail_ratio = 0.5;
  // Condition 2 is accepted when the r = 0 row is at most this value.
  double origin_tol = 1e-12;
};

KLFn kl_majorize(const KLGrid& grid, const MajorizeOptions& opts = {});

struct CascadeOptions {
  // Number of points s = r*j/N used for the final supremum over s <= r.
  int density = 32;
  // Bisection iterations used for each halving time.
  int bisection_steps = 80;
};

struct CascadeResult {
  KLFn beta;
  ComparisonFn nu;
};

CascadeResult kl_cascade(const KLFn& beta_hat, const CascadeOptions& opts = {});

// Exposed for tests: the premajorized bound max{b(r,t), max(b(r,0), r) e^-t}.
double cascade_base(const KLFn& beta_hat, double r, double t);

}  // namespace ioss
