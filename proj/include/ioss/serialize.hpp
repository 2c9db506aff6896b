#pragma once

#include <stdexcept>
#include <string>

#include "json.hpp"

#include "ioss/checks.hpp"
#include "ioss/comparison.hpp"
#include "ioss/linear.hpp"
#include "ioss/observer.hpp"
#include "ioss/valuefn.hpp"

namespace ioss {

using Json = nlohmann::ordered_json;

// A configuration problem at a JSON path such as "check.estimate.beta".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Comparison functions:
//   "identity" | "zero" | {"linear": c} | {"power": [c, p]} | {"sat_exp": [c, k]}
//   | {"power_exp": [c, p, k]} | {"table": {"r": [...], "v": [...], "unbounded": bool}}
//   | {"log_table": {"r": [...], "v": [...]}} | {"compose": [f, g]} | {"max": [f, g, ...]}
//   | {"min": [...]} | {"sum": [...]} | {"scale": [c, f]} | {"inverse": f}
ComparisonFn comparison_from_json(const Json& j, const std::string& path);
Json to_json(const ComparisonFn& f);

// KL functions:
//   {"factored": [mu1, mu2]} | {"decay": {"a": f, "b0": x, "b1": x}}
//   | {"grid": {"r": [...], "t": [...], "values": [[...]]}} | {"max": [b, ...]}
//   | {"scale": [c, b]}
// Custom KL functions serialize to their description and cannot be read back.
KLFn kl_from_json(const Json& j, const std::string& path);
Json to_json(const KLFn& b);

Vec vec_from_json(const Json& j, const std::string& path);
Mat mat_from_json(const Json& j, const std::string& path);  // row-major nested arrays
Json to_json(const Vec& v);
Json to_json(const Mat& m);

// {"constant": [...]} | {"piecewise": {"times": [...], "values": [[...], ...]}} | "zero"
Signal signal_from_json(const Json& j, int dim, const std::string& path);
Json to_json(const Signal& s);

// Gain slots by name, plus "kind" and "c".
EstimateSpec estimate_from_json(const Json& j, const std::string& path);
Json to_json(const EstimateSpec& s);

// Plan fields by name; `seed` is taken from the block or the fallback.
BatteryPlan battery_from_json(const Json& j, const std::string& path,
                              std::optional<std::uint64_t> seed);
Json to_json(const BatteryPlan& p);

OdeOptions ode_from_json(const Json& j, const std::string& path);
Json to_json(const OdeOptions& o);

Json to_json(const BatteryItem& item);
BatteryItem battery_item_from_json(const Json& j, const SystemModel& sys, const std::string& path);
Json to_json(const Witness& w);
Witness witness_from_json(const Json& j, const SystemModel& sys, const std::string& path);
Json to_json(const CheckReport& r);

Json to_json(const QuadraticCertificate& c);

// CSV writers.
std::string trajectory_csv(const Trajectory& tr);
std::string coupled_csv(const CoupledRun& run);  // t,|x|,V,p,bound
std::string grid_value_csv(const GridValueFn& v);  // x1..xn,value,region,unreached

}  // namespace ioss
