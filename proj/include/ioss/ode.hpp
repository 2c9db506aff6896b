#pragma once

#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ioss/signal.hpp"

namespace ioss {

struct OdeOptions {
  double rtol = 1e-9;
  double atol = 1e-12;
  double h_init = 0.0;  // 0 selects a starting step from the initial slope
  double h_max = std::numeric_limits<double>::infinity();
  double blowup = 1e9;
  std::size_t max_steps = 2000000;
  // Steps shorter than the time resolution at the current t are still taken
  // (the state keeps moving toward an escape); this caps how many.
  std::size_t max_subresolution_steps = 10000;
};

enum class Termination { HorizonReached, FiniteEscape, EnteredSet };

std::string to_string(Termination t);

struct StopSet {
  std::string id;
  std::function<bool(const Vec&)> contains;
};

// dx = f(t, x); `piece_ref` is the midpoint of the current step, to be
// handed to piecewise signals.
using OdeRhs = std::function<void(double t, double piece_ref, const Vec& x, Vec& dx)>;
using NormFn = std::function<double(const Vec&)>;

struct OdeSolution {
  std::vector<double> t;
  std::vector<Vec> x;
  // Max-norm of the embedded error estimate of the step ending at each knot.
  std::vector<double> local_error;
  Termination termination = Termination::HorizonReached;
  double t_escape = std::numeric_limits<double>::quiet_NaN();
  std::string set_id;
  double t_entry = std::numeric_limits<double>::quiet_NaN();
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

class StiffnessError : public std::runtime_error {
 public:
  explicit StiffnessError(const std::string& what) : std::runtime_error(what) {}
};

// Adaptive Dormand-Prince 5(4) integration on [0, horizon]. Steps never
// cross `breakpoints`. Terminates early on blowup (the blowup norm, the
// Euclidean norm by default, reaches opts.blowup) or when the state enters
// `stop`.
OdeSolution integrate(const OdeRhs& f, const Vec& x0, double horizon,
                      std::vector<double> breakpoints, const OdeOptions& opts = {},
                      const NormFn& blowup_norm = {}, const StopSet* stop = nullptr);

}  // namespace ioss
