#include <iostream>

#include "CLI11.hpp"
#include "ioss/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Detectability numerics: simulate, check estimates, verify certificates, run norm observers"};
  app.require_subcommand(1);

  ioss::CliOptions opts;
  std::uint64_t seed = 0;
  double tolerance = 0.0;
  const char* tasks[][2] = {
      {"simulate", "Integrate one trajectory and write it as CSV"},
      {"check", "Test a stability estimate on a seeded battery"},
      {"lyapunov", "Verify a Lyapunov candidate (dissipation, rescale, hji, reconstruct)"},
      {"linear", "Synthesize and verify the quadratic certificate of a linear system"},
      {"observe", "Run the norm observer coupled to the plant"},
      {"valuefn", "Value iteration for the cost-to-reach-D function"},
      {"replay", "Re-run the witness written by a falsified run (--config witness.json)"},
  };
  for (const auto& t : tasks) {
    CLI::App* sub = app.add_subcommand(t[0], t[1]);
    sub->add_option("--config", opts.config_path, "JSON config (or witness file for replay)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Battery seed; overrides the config");
    sub->add_option("--out", opts.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--tolerance", tolerance, "Task tolerance; see README")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ioss::kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opts.seed = seed;
  if (sub->count("--tolerance")) opts.tolerance = tolerance;
  return ioss::run_cli(sub->get_name(), opts, std::cout, std::cerr);
}
