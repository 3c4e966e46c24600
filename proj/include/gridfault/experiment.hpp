#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gridfault/resilience.hpp"
#include "gridfault/sim.hpp"

namespace gridfault::experiment {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class WorkloadKind { Diffusion, Particles, Both };
enum class InitKind { Uniform, HotSpot, Random };

struct RunConfig {
  std::vector<int> dims{8, 8};
  std::vector<std::uint8_t> periods{1, 1};
  int tile_rows = 16;
  int tile_cols = 16;
  long long iterations = 100;
  WorkloadKind workload = WorkloadKind::Diffusion;
  resilience::StrategyConfig strategy;
  double alpha = 0.25;
  std::vector<sim::FaultEvent> faults;
  std::uint64_t seed = 1;
  double stop_threshold = 0.05;
  std::optional<std::array<int, 4>> probe_region;  // tile r0,c0,r1,c1 inclusive
  std::string output_path;
  InitKind init = InitKind::Uniform;
  double hot_c0 = 0.0, hot_c1 = 0.0, hot_amplitude = 1.0;
  std::uint64_t field_seed = 0;
  int particles_per_tile = 64;
  bool shadow_reference = false;  // lockstep fault-free twin fills l2_vs_reference
  bool use_layer = true;          // layer = off: bare exchanges, diagnostics only
  std::optional<long long> leak_iteration;  // diagnostics: artificial mass leak
  double leak_fraction = 0.0;
};

// Flat key = value text file; '#' starts a comment.
RunConfig load_config(const std::string& path);
void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& value);
void validate(const RunConfig& cfg);  // throws sim::InvalidConfig

struct MetricsRecord {
  long long iteration = 0;
  std::optional<double> global_mass;
  std::optional<long long> particle_count;
  std::optional<long long> discarded_count;
  int live_ranks = 0;
  std::optional<double> probe_metric;
  std::optional<double> l2_vs_reference;
  double wall_time_ms = 0.0;
};

struct ConservationLedger {
  double initial_total = 0.0;
  double current_total = 0.0;
  double lost_to_faults = 0.0;
  long long discarded_count = 0;
};

// Deviation against the expected post-fault baseline live_fraction * initial;
// the structural drop from losing ranks does not trigger a stop by itself.
bool stop_criterion(const ConservationLedger& ledger, double live_fraction,
                    double threshold);

// God's-eye bookkeeping, one row per completed iteration.
struct LedgerRow {
  long long iteration = 0;
  double mass_live = 0.0;
  double mass_lost_to_faults = 0.0;
  std::uint64_t particles_owned = 0;
  std::uint64_t particles_discarded = 0;
  std::uint64_t particles_lost_in_failed = 0;
  int live_ranks = 0;
};

enum class Outcome { Completed, StoppedAtThreshold, NoSurvivors };
std::string_view to_string(Outcome o);

struct RunResult {
  Outcome outcome = Outcome::Completed;
  long long last_iteration = 0;
  std::vector<MetricsRecord> records;
  std::vector<LedgerRow> ledger;
  ConservationLedger conservation;
  std::uint64_t initial_particles = 0;
};

RunResult run_experiment(const RunConfig& cfg);

const char* csv_header();
void write_csv(const std::string& path,
               const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_csv(const std::string& path);

struct ColumnReport {
  std::string column;
  bool diverged = false;
  long long iteration = -1;
  double run_value = 0.0;
  double ref_value = 0.0;
  double rel = 0.0;
};

struct CompareReport {
  long long common_iterations = 0;
  std::vector<ColumnReport> columns;
};

// First iteration, per metric column, where run and reference differ by more
// than `tolerance` relative to the reference (epsilon-guarded).
CompareReport compare_runs(const std::string& run_csv,
                           const std::string& reference_csv, double tolerance);
std::string format_report(const CompareReport& report);

}  // namespace gridfault::experiment
