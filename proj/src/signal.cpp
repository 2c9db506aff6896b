#include "ioss/signal.hpp"

#include <algorithm>
#include <stdexcept>

namespace ioss {

Signal::Signal() : times_{0.0}, values_{Vec(0)} {}

Signal Signal::zero(int dim) { return constant(Vec::Zero(dim)); }

Signal Signal::constant(Vec value) {
  Signal s;
  s.kind_ = Kind::Constant;
  s.dim_ = static_cast<int>(value.size());
  s.times_ = {0.0};
  s.values_ = {std::move(value)};
  return s;
}

Signal Signal::piecewise(std::vector<double> times, std::vector<Vec> values) {
  if (times.empty() || times.size() != values.size())
    throw std::invalid_argument("piecewise signal: times and values must match and be nonempty");
  if (times[0] != 0.0) throw std::invalid_argument("piecewise signal: first time must be 0");
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (!(times[k] > times[k - 1]))
      throw std::invalid_argument("piecewise signal: times must be strictly increasing");
    if (values[k].size() != values[0].size())
      throw std::invalid_argument("piecewise signal: inconsistent value dimension");
  }
  for (const Vec& v : values)
    if (!v.allFinite()) throw std::invalid_argument("piecewise signal: non-finite value");
  Signal s;
  s.kind_ = times.size() == 1 ? Kind::Constant : Kind::Piecewise;
  s.dim_ = static_cast<int>(values[0].size());
  s.times_ = std::move(times);
  s.values_ = std::move(values);
  return s;
}

Signal Signal::closure(int dim, std::function<Vec(double)> fn, std::string label) {
  Signal s;
  s.kind_ = Kind::Closure;
  s.dim_ = dim;
  s.times_.clear();
  s.values_.clear();
  s.fn_ = std::make_shared<const std::function<Vec(double)>>(std::move(fn));
  s.label_ = std::move(label);
  return s;
}

Vec Signal::operator()(double t) const { return at(t, t); }

Vec Signal::at(double t, double piece_ref) const {
  switch (kind_) {
    case Kind::Constant:
      return values_[0];
    case Kind::Piecewise: {
      auto it = std::upper_bound(times_.begin(), times_.end(), piece_ref);
      std::size_t k = it == times_.begin() ? 0 : static_cast<std::size_t>(it - times_.begin()) - 1;
      return values_[k];
    }
    case Kind::Closure:
      return (*fn_)(t);
  }
  return {};
}

std::vector<double> Signal::breakpoints() const {
  if (kind_ != Kind::Piecewise) return {};
  return std::vector<double>(times_.begin() + 1, times_.end());
}

}  // namespace ioss
