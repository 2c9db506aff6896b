#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ioss {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Time signal for controls and disturbances.
class Signal {
 public:
  enum class Kind { Constant, Piecewise, Closure };

  Signal();  // zero-dimensional constant

  static Signal zero(int dim);
  static Signal constant(Vec value);
  // values[k] holds on [times[k], times[k+1]); times[0] must be 0.
  static Signal piecewise(std::vector<double> times, std::vector<Vec> values);
  static Signal closure(int dim, std::function<Vec(double)> fn, std::string label);

  // Value at t. For piecewise signals, `piece_ref` selects the piece
  // (integrators pass the midpoint of the current step so that every stage
  // sees the same piece).
  Vec operator()(double t) const;
  Vec at(double t, double piece_ref) const;

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }
  // Switching times strictly inside (0, inf).
  std::vector<double> breakpoints() const;

  const std::vector<double>& times() const { return times_; }
  const std::vector<Vec>& values() const { return values_; }
  const std::string& label() const { return label_; }

 private:
  Kind kind_ = Kind::Constant;
  int dim_ = 0;
  std::vector<double> times_;
  std::vector<Vec> values_;
  std::shared_ptr<const std::function<Vec(double)>> fn_;
  std::string label_;
};

}  // namespace ioss
