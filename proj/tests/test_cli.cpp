#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ioss/cli.hpp"
#include "ioss/fixtures.hpp"

using namespace ioss;
namespace fs = std::filesystem;

namespace {

Json oss_config() {
  return Json::parse(R"({
    "system": "example-6-3-sigma1", "task": "check", "seed": 11,
    "check": {"estimate": {"kind": "UOSS", "beta": {"decay": {"a": {"linear": 1}}}, "gamma2": "identity"},
              "battery": {"shells": 12, "horizon": 10}}})");
}

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("ioss-test-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_file(const fs::path& p, const std::string& body) {
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_path(const std::string& task, const Json& config) {
  try {
    run_task(task, config, {});
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("comparison and KL functions survive a JSON round trip") {
  const std::vector<std::string> forms = {
      R"("identity")",
      R"({"power": [2, 3]})",
      R"({"sat_exp": [1.5, 0.5]})",
      R"({"power_exp": [1, 2, 0.3]})",
      R"({"table": {"r": [0, 1, 2], "v": [0, 1, 5], "unbounded": true}})",
      R"({"compose": [{"linear": 2}, {"power": [1, 2]}]})",
      R"({"max": ["identity", {"power": [0.5, 2]}]})",
      R"({"sum": ["identity", {"sat_exp": [1, 1]}]})",
      R"({"scale": [3, {"power": [1, 0.5]}]})",
      R"({"inverse": {"power": [1, 3]}})",
  };
  for (const std::string& text : forms) {
    CAPTURE(text);
    ComparisonFn f = comparison_from_json(Json::parse(text), "f");
    ComparisonFn g = comparison_from_json(to_json(f), "g");
    for (double r : {0.0, 0.01, 0.3, 1.0, 2.5, 40.0}) CHECK(g(r) == doctest::Approx(f(r)).epsilon(1e-12));
  }
  const std::vector<std::string> kl = {
      R"({"decay": {"a": {"linear": 2}, "b0": 1, "b1": 0.5}})",
      R"({"factored": [{"power": [1, 2]}, {"linear": 1}]})",
      R"({"grid": {"r": [0, 1, 2], "t": [0, 1], "values": [[0, 0], [1, 0.5], [2, 1]]}})",
      R"({"scale": [2, {"decay": {"a": "identity"}}]})",
  };
  for (const std::string& text : kl) {
    CAPTURE(text);
    KLFn b = kl_from_json(Json::parse(text), "b");
    KLFn c = kl_from_json(to_json(b), "c");
    for (double r : {0.0, 0.5, 1.5})
      for (double t : {0.0, 0.7, 3.0}) CHECK(c(r, t) == doctest::Approx(b(r, t)).epsilon(1e-12));
  }
}

TEST_CASE("estimates, batteries and witnesses round trip") {
  EstimateSpec e = estimate_from_json(oss_config()["check"]["estimate"], "e");
  CHECK(e.kind == EstimateKind::UOSS);
  CHECK(to_json(estimate_from_json(to_json(e), "e")) == to_json(e));

  BatteryPlan p = battery_from_json(Json::parse(R"({"shells": 3, "horizon": 2, "extra_states": [[0.5]]})"),
                                    "b", std::uint64_t{5});
  CHECK(p.seed == 5);
  CHECK(p.extra_states.size() == 1);
  CHECK(to_json(battery_from_json(to_json(p), "b", std::nullopt)) == to_json(p));

  SystemModel sys = make_fixture("scalar-input");
  Json item = Json::parse(R"({"x0": [1.5], "u": {"piecewise": {"times": [0, 1], "values": [[0.2], [-0.4]]}},
                              "w": {"constant": []}})");
  BatteryItem b = battery_item_from_json(item, sys, "item");
  CHECK(b.u(0.5)[0] == 0.2);
  CHECK(b.u(1.5)[0] == -0.4);
  CHECK(to_json(battery_item_from_json(to_json(b), sys, "item")) == to_json(b));
}

TEST_CASE("config errors name the offending key") {
  Json c = oss_config();
  c["check"]["estimate"]["gama2"] = "identity";
  CHECK(error_path("check", c) == "check.estimate.gama2");

  c = oss_config();
  c.erase("seed");
  CHECK(error_path("check", c) == "check.battery.seed");

  c = oss_config();
  c["check"]["battery"]["horizon"] = "ten";
  CHECK(error_path("check", c) == "check.battery.horizon");

  c = oss_config();
  c["system"] = "no-such-fixture";
  CHECK(error_path("check", c) == "system");

  c = oss_config();
  c["simulate"] = Json::object();
  CHECK(error_path("check", c) == "simulate");

  CHECK(error_path("simulate", oss_config()) == "check");
  c = oss_config();
  c.erase("check");
  CHECK(error_path("simulate", c) == "task");

  c = Json::parse(R"({"system": "remark-3-10", "simulate": {"x0": [1, 2], "horizon": 1}})");
  CHECK(error_path("simulate", c) == "simulate.x0");

  c = Json::parse(R"({"system": "scalar-decay", "lyapunov": {"candidate": {"quadratic": {"P": [[1]]}}}})");
  CHECK(error_path("lyapunov", c) == "lyapunov.candidate.quadratic.alpha");
}

TEST_CASE("simulate reproduces the finite escape time") {
  Json c = Json::parse(R"({"system": "remark-3-10", "simulate": {"x0": [2], "horizon": 1}})");
  TaskResult r = run_task("simulate", c, {});
  CHECK(r.exit_code == kExitOk);
  CHECK(r.report["termination"] == "FiniteEscape");
  CHECK(r.report["t_escape"].get<double>() == doctest::Approx(0.125).epsilon(1e-3));
  CHECK(r.report["integral_norm"].get<double>() == doctest::Approx(0.5).epsilon(2e-2));

  // The CSV stops before the escape time.
  std::istringstream csv(r.artifacts.at("trajectory.csv"));
  std::string line, last;
  std::getline(csv, line);
  CHECK(line == "t,x1,y1,norm_x");
  while (std::getline(csv, line))
    if (!line.empty()) last = line;
  CHECK(std::stod(last.substr(0, last.find(','))) < 0.125 + 1e-9);
}

TEST_CASE("check falsifies OSS on the gated fixture and the witness replays") {
  TaskResult r = run_task("check", oss_config(), {});
  CHECK(r.exit_code == kExitFalsified);
  REQUIRE(r.artifacts.count("witness.json"));
  CHECK(r.artifacts.count("witness.csv"));
  CHECK(r.report["result"]["verdict"] == "Falsified");

  Json w = Json::parse(r.artifacts.at("witness.json"));
  CHECK(w["task"] == "check");
  CHECK(w["config"]["seed"] == 11);
  TaskResult again = run_task("replay", w, {});
  CHECK(again.exit_code == kExitFalsified);
  CHECK(again.report["verdict"] == "Falsified");

  // A witness edited into something harmless does not reproduce.
  w["witness"]["input"]["x0"] = Json::array({0.5});
  CHECK(run_task("replay", w, {}).exit_code == kExitOk);
}

TEST_CASE("seed flag overrides the config and changes the battery") {
  Json c = Json::parse(R"({
    "system": "scalar-input", "seed": 1,
    "check": {"estimate": {"kind": "UIOSS", "beta": {"decay": {"a": "identity"}}, "gamma1": "identity", "gamma2": "identity"},
              "battery": {"shells": 2, "directions": 1, "horizon": 2, "seed": 4}}})");
  CliOptions a, b;
  b.seed = 9;
  TaskResult ra = run_task("check", c, a), rb = run_task("check", c, b);
  CHECK(ra.exit_code == kExitOk);
  CHECK(ra.report["battery"]["seed"] == 4);
  CHECK(rb.report["battery"]["seed"] == 9);
}

TEST_CASE("tolerance flag sets the allowance of check") {
  CliOptions o;
  o.tolerance = 0.25;
  TaskResult r = run_task("check", oss_config(), o);
  CHECK(r.report["allowance"]["rel"] == 0.25);
  CHECK(r.report["allowance"]["rel_integral"] == 0.25);
}

TEST_CASE("linear, lyapunov and valuefn tasks") {
  TaskResult lin = run_task("linear", Json::parse(R"({"system": "linear-double-integrator",
                                                      "linear": {"L": [[-2], [-1]]}})"),
                            {});
  CHECK(lin.exit_code == kExitOk);
  CHECK(lin.report["detectable"] == true);
  CHECK(lin.report["dissipation"]["verdict"] == "HoldsOnSamples");

  TaskResult auto_gain = run_task("linear", Json::parse(R"({"system": {"linear": {"A": [[0, 1], [0, 0]],
                                                            "B": [[0], [1]], "C": [[1, 0]]}}})"),
                                  {});
  CHECK(auto_gain.report["observable_dim"] == 2);
  CHECK(auto_gain.report["dissipation"]["verdict"] == "HoldsOnSamples");

  TaskResult undetectable = run_task("linear", Json::parse(R"({"system": {"linear": {"A": [[1, 0], [0, -1]],
                                                               "C": [[0, 1]]}}})"),
                                     {});
  CHECK(undetectable.report["detectable"] == false);

  Json ly = Json::parse(R"({"system": "scalar-decay", "lyapunov": {"mode": "rescale",
      "candidate": {"quadratic": {"P": [[1]], "alpha": "identity"}}}})");
  TaskResult rs = run_task("lyapunov", ly, {});
  CHECK(rs.exit_code == kExitOk);
  CHECK(rs.report["dissipation"]["verdict"] == "HoldsOnSamples");

  // x' = -x does not dissipate V = x^2 at rate 10 x^2.
  ly["lyapunov"]["mode"] = "dissipation";
  ly["lyapunov"]["candidate"]["quadratic"]["alpha"] = Json{{"power", {10, 2}}};
  TaskResult bad = run_task("lyapunov", ly, {});
  CHECK(bad.exit_code == kExitFalsified);
  REQUIRE(bad.artifacts.count("witness.json"));
  CHECK(run_task("replay", Json::parse(bad.artifacts.at("witness.json")), {}).exit_code == kExitFalsified);

  Json vf = Json::parse(R"({"system": "scalar-decay-blind", "seed": 1, "valuefn": {
      "grid": {"lo": [-2], "hi": [2], "counts": [201]}, "rho": "identity",
      "dissipation": {"count": 20, "span": 0.5}, "inf_convolve": {"alpha": 0.5}}})");
  TaskResult v = run_task("valuefn", vf, {});
  CHECK(v.exit_code == kExitOk);
  CHECK(v.report["converged"] == true);
  CHECK(v.report["dissipation"]["verdict"] == "HoldsOnSamples");
  CHECK(v.report["inf_convolve"]["min_gap"].get<double>() >= 0.0);
  CHECK(v.report["inf_convolve"]["max_gap"].get<double>() <=
        v.report["inf_convolve"]["omega_bound"].get<double>());
  CHECK(v.artifacts.count("values.csv"));
  CHECK(v.artifacts.count("smoothed.csv"));
}

TEST_CASE("observe on the linear fixture") {
  Json c = Json::parse(R"({"system": "linear-double-integrator", "seed": 7, "observe": {
      "candidate": {"certificate": {"L": [[-2], [-1]]}}, "x0": [1, -0.5], "horizon": 6,
      "battery": {"shells": 3, "directions": 2, "r_min": 0.1, "r_max": 2, "horizon": 4}}})");
  TaskResult r = run_task("observe", c, {});
  CHECK(r.exit_code == kExitOk);
  CHECK(r.report["gap"]["violations"] == 0);
  CHECK(r.report["contract"]["verdict"] == "HoldsOnSamples");
  CHECK(r.report["uioss"]["verdict"] == "HoldsOnSamples");
  CHECK(r.artifacts.at("trace.csv").rfind("t,norm_x,V,p,bound\n", 0) == 0);
}

TEST_CASE("run_cli exit codes and files") {
  fs::path dir = scratch("cli");
  std::ostringstream out, err;

  CliOptions bad;
  bad.config_path = write_file(dir / "bad.json", R"({"system": "remark-3-10", "simulate": {"x0": [2]}})").string();
  bad.out_dir = (dir / "bad").string();
  CHECK(run_cli("simulate", bad, out, err) == kExitUsage);
  CHECK(err.str().find("simulate.horizon") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "bad" / "report.json"));

  CliOptions junk = bad;
  junk.config_path = write_file(dir / "junk.json", "{ not json").string();
  CHECK(run_cli("simulate", junk, out, err) == kExitUsage);

  CliOptions chk;
  chk.config_path = write_file(dir / "oss.json", oss_config().dump()).string();
  chk.out_dir = (dir / "run1").string();
  CHECK(run_cli("check", chk, out, err) == kExitFalsified);
  CHECK(fs::exists(dir / "run1" / "witness.json"));
  CHECK(fs::exists(dir / "run1" / "witness.csv"));

  CliOptions rep;
  rep.config_path = (dir / "run1" / "witness.json").string();
  rep.out_dir = (dir / "replay").string();
  CHECK(run_cli("replay", rep, out, err) == kExitFalsified);

  chk.out_dir = (dir / "run2").string();
  CHECK(run_cli("check", chk, out, err) == kExitFalsified);
  for (const char* f : {"report.json", "witness.json", "witness.csv"})
    CHECK(read_file(dir / "run1" / f) == read_file(dir / "run2" / f));
  fs::remove_all(dir);
}
