#pragma once

#include <string>
#include <vector>

#include "ioss/dynamics.hpp"

namespace ioss {

// exp(-x^2 / (eps^2 - x^2)) on |x| < eps, 0 elsewhere.
double bump(double x, double eps);

inline constexpr double kRemarkEps = 0.2;
inline constexpr double kSigmaEpsF = 0.1;
double sigma_eps_h();  // 0.3 (1 - eps_f) / e

// Registered systems:
//   linear-double-integrator  x1' = x2, x2' = u, y = x1
//   remark-3-10               cubic escape outside [-1-eps, 1+eps], y = x near 0
//   example-6-3-sigma1        linear growth outside [-1-eps_f, 1+eps_f], bounded y
//   example-6-3-sigma2        x' = x, y = 1 (zero-output check waived)
//   scalar-decay              x' = -x, y = x
//   scalar-decay-blind        x' = -x, y = 0
//   scalar-input              x' = -x + u, y = x
//   scalar-disturbed          x' = -x + w/2 * x, y = x
std::vector<std::string> fixture_names();
SystemModel make_fixture(const std::string& name);

}  // namespace ioss
