#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "ioss/serialize.hpp"

namespace ioss {

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitFalsified = 2 };

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "ioss-out";
  std::optional<double> tolerance;
};

struct TaskResult {
  int exit_code = kExitOk;
  Json report;
  // file name -> contents, written under out_dir once the task is done
  std::map<std::string, std::string> artifacts;
};

// Tasks: simulate, check, lyapunov, linear, observe, valuefn, and replay
// (whose config is a witness file written by a falsified run). Throws
// ConfigError for invalid configurations.
TaskResult run_task(const std::string& task, const Json& config, const CliOptions& opts);

// Loads the config, runs the task, writes report.json and the artifacts.
// Returns the exit code; errors go to `err`.
int run_cli(const std::string& task, const CliOptions& opts, std::ostream& out, std::ostream& err);

// "fixture-name" | {"fixture": name} | {"linear": {"A": ..., "B": ..., "C": ...}}
SystemModel system_from_json(const Json& j, const std::string& path);
std::optional<LinearSystem> linear_system_from_json(const Json& j, const std::string& path);

}  // namespace ioss
