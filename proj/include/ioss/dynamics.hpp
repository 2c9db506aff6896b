#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ioss/comparison.hpp"
#include "ioss/ode.hpp"
#include "ioss/signal.hpp"

namespace ioss {

using DynamicsFn = std::function<Vec(const Vec& x, const Vec& u, const Vec& w)>;
using OutputFn = std::function<Vec(const Vec& x)>;
using ScalarFieldFn = std::function<double(const Vec& x)>;

// x' = g0(x) + sum_i g_i(x) u_i, columns of `g` are the g_i.
struct AffineStructure {
  std::function<Vec(const Vec&)> g0;
  std::function<Mat(const Vec&)> g;
};

struct SystemDef {
  std::string name;
  int n = 1, m_u = 0, m_w = 0, p = 0;
  DynamicsFn f;
  OutputFn h;
  std::optional<AffineStructure> affine;
  // Defaults to hypercube_samples(m_w).
  std::vector<Vec> disturbance_samples;
  // Registration normally requires f(0,0,w) = 0 for every sample and
  // h(0) = 0. A waiver skips these checks; the reason is kept with the model.
  std::string zero_check_waiver;
};

// Vertices of [-1,1]^m, the origin, and the facet centres +-e_i.
std::vector<Vec> hypercube_samples(int m);

class SystemModel {
 public:
  explicit SystemModel(SystemDef def);

  const std::string& name() const { return def_.name; }
  int n() const { return def_.n; }
  int m_u() const { return def_.m_u; }
  int m_w() const { return def_.m_w; }
  int p() const { return def_.p; }

  Vec f(const Vec& x, const Vec& u, const Vec& w) const { return def_.f(x, u, w); }
  Vec h(const Vec& x) const { return def_.h(x); }
  const std::vector<Vec>& disturbance_samples() const { return def_.disturbance_samples; }
  const std::optional<AffineStructure>& affine() const { return def_.affine; }
  const std::string& waiver() const { return def_.zero_check_waiver; }
  const SystemDef& def() const { return def_; }

 private:
  SystemDef def_;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> outputs;
  std::vector<double> local_error;
  Termination termination = Termination::HorizonReached;
  double t_escape = std::numeric_limits<double>::quiet_NaN();
  std::string set_id;
  double t_entry = std::numeric_limits<double>::quiet_NaN();
  Signal u, w;
};

struct SimOptions {
  OdeOptions ode;
  std::optional<StopSet> stop;
};

Trajectory simulate(const SystemModel& sys, const Vec& x0, const Signal& u, const Signal& w,
                    double horizon, const SimOptions& opts = {});

// Disturbance-only system x' = f(x, d_u phi(|x|), w) with d = [d_u; w].
SystemModel close_robust_loop(const SystemModel& sys, const ComparisonFn& phi);

// x' = f / (1 + |f|^2 + kappa(x)).
SystemModel slow_system(const SystemModel& sys, ScalarFieldFn kappa);

// Central finite-difference gradient with step 1e-5 (1 + |x|).
Vec fd_gradient(const ScalarFieldFn& fn, const Vec& x);

// kappa(x) = 1.1 * 2 * max_d |grad(rho o |h|)(x) . f(x, d)|, blended smoothly
// to zero where |h(x)| < 1/2.
ScalarFieldFn default_kappa(const SystemModel& sys, const ComparisonFn& rho,
                            double safety = 1.1);

// C-infinity step: 0 for s <= 0, 1 for s >= 1.
double smooth_step(double s);

}  // namespace ioss
