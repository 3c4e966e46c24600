#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gridfault/experiment.hpp"

namespace {

constexpr int kExitCompleted = 0;
constexpr int kExitStopped = 2;
constexpr int kExitNoSurvivors = 3;
constexpr int kExitInvalidConfig = 64;

int run_command(const std::string& config_path, const std::string& output,
                const std::string& strategy, const std::vector<std::string>& faults,
                const std::string& seed, const std::string& reference) {
  namespace exp = gridfault::experiment;
  exp::RunConfig cfg;
  if (!config_path.empty()) cfg = exp::load_config(config_path);
  if (!output.empty()) exp::apply_override(cfg, "output", output);
  if (!strategy.empty()) exp::apply_override(cfg, "strategy", strategy);
  for (const auto& f : faults) exp::apply_override(cfg, "fault", f);
  if (!seed.empty()) exp::apply_override(cfg, "seed", seed);
  if (!reference.empty()) exp::apply_override(cfg, "l2_reference", reference);

  exp::RunResult result = exp::run_experiment(cfg);
  std::cout << exp::to_string(result.outcome) << " (iteration "
            << result.last_iteration << " of " << cfg.iterations << ", "
            << (result.records.empty() ? 0 : result.records.back().live_ranks)
            << " live ranks)";
  if (!cfg.output_path.empty()) std::cout << " csv: " << cfg.output_path;
  std::cout << "\n";
  switch (result.outcome) {
    case exp::Outcome::Completed:
      return kExitCompleted;
    case exp::Outcome::StoppedAtThreshold:
      return kExitStopped;
    case exp::Outcome::NoSurvivors:
      return kExitNoSurvivors;
  }
  return kExitCompleted;
}

int compare_command(const std::string& run_csv, const std::string& reference,
                    double tolerance) {
  namespace exp = gridfault::experiment;
  exp::CompareReport report = exp::compare_runs(run_csv, reference, tolerance);
  std::cout << exp::format_report(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic simulator of fault-resilient stencil runs"};
  app.require_subcommand(1);

  std::string config_path, output, strategy, seed, reference;
  std::vector<std::string> faults;
  auto* run = app.add_subcommand("run", "execute an experiment");
  run->add_option("--config", config_path, "flat key=value config file");
  run->add_option("--output", output, "metrics csv path");
  run->add_option("--strategy", strategy,
                  "default|mirror|bridge|interpolate");
  run->add_option("--fault", faults, "rank@iteration (repeatable)");
  run->add_option("--seed", seed, "run seed");
  run->add_option("--reference", reference,
                  "shadow|none: lockstep fault-free twin for l2_vs_reference");

  std::string cmp_run, cmp_reference;
  double tolerance = 1e-9;
  auto* cmp = app.add_subcommand("compare", "diff two metrics csv files");
  cmp->add_option("run_csv", cmp_run, "csv of the run under test")->required();
  cmp->add_option("--reference", cmp_reference, "reference csv")->required();
  cmp->add_option("--tolerance", tolerance, "relative divergence tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return run_command(config_path, output, strategy, faults, seed, reference);
    return compare_command(cmp_run, cmp_reference, tolerance);
  } catch (const gridfault::sim::InvalidConfig& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const gridfault::experiment::SchemaMismatch& e) {
    std::cerr << "schema mismatch: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
