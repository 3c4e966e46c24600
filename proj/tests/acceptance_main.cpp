// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one pass/fail line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gridfault/experiment.hpp"
#include "gridfault/resilience.hpp"
#include "gridfault/routing.hpp"
#include "gridfault/sim.hpp"
#include "gridfault/topology.hpp"
#include "gridfault/workloads.hpp"
#include "support/driver.hpp"
#include "support/oracles.hpp"
#include "support/rig.hpp"

using namespace gridfault;
namespace xpt = gridfault::experiment;
using test_support::Rig;
using test_support::spawn_body;

namespace {

class Failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

std::filesystem::path artifact(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "gridfault_acceptance";
  std::filesystem::create_directories(dir);
  return dir / name;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// ---- 1: structural mass drop ------------------------------------------------

void criterion_mass_drop() {
  auto t0 = std::chrono::steady_clock::now();
  xpt::RunConfig cfg;
  cfg.dims = {8, 8};
  cfg.periods = {1, 1};
  cfg.tile_rows = cfg.tile_cols = 16;
  cfg.iterations = 600;
  cfg.workload = xpt::WorkloadKind::Diffusion;
  cfg.init = xpt::InitKind::Uniform;
  cfg.strategy.kind = resilience::Strategy::Mirror;
  cfg.faults.push_back({12, 280});
  cfg.seed = 7;
  xpt::RunResult res = xpt::run_experiment(cfg);

  require(res.records.size() >= 280, "run ended before the fault iteration");
  double initial = res.conservation.initial_total;
  require(initial == 64.0 * 256.0, "uniform initial mass should be 16384");
  double expected = initial * 63.0 / 64.0;
  double at_fault = *res.records[279].global_mass;
  require(std::abs(at_fault - expected) <= 1e-12 * expected,
          "mass at the fault iteration is not (63/64) * initial");
  require(res.records[278].live_ranks == 64, "early fault");
  require(res.records[279].live_ranks == 63, "fault did not fire at 280");
  double took = seconds_since(t0);
  require(took < 10.0, "runtime budget of 10 s exceeded");
}

// ---- 2: transparency ----------------------------------------------------------

std::vector<std::vector<double>> diffusion_states(bool layered) {
  xpt::RunConfig cfg;
  cfg.dims = {8, 8};
  cfg.periods = {1, 1};
  cfg.tile_rows = cfg.tile_cols = 16;
  cfg.iterations = 100;
  cfg.init = xpt::InitKind::Random;
  cfg.field_seed = 99;
  cfg.use_layer = layered;

  // Drive the workload directly so whole field states can be captured.
  Rig rig(64, {}, cfg.dims, cfg.periods);
  std::vector<workloads::FieldTile> tiles(64);
  for (int r = 0; r < 64; ++r) {
    tiles[static_cast<std::size_t>(r)] =
        workloads::make_tile(cfg.tile_rows, cfg.tile_cols, 0.0);
    auto c = rig.topology.coords_of(r);
    for (int i = 0; i < cfg.tile_rows; ++i)
      for (int j = 0; j < cfg.tile_cols; ++j) {
        std::uint64_t cell =
            static_cast<std::uint64_t>((c[0] * cfg.tile_rows + i) * 128 +
                                       (c[1] * cfg.tile_cols + j));
        std::uint64_t x = cell + 0x9e3779b97f4a7c15ULL * (cfg.field_seed + 1);
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        tiles[static_cast<std::size_t>(r)].at(i, j) =
            static_cast<double>((x ^ (x >> 31)) >> 11) * 0x1.0p-53;
      }
  }
  for (int r = 0; r < 64; ++r) {
    spawn_body(rig.simulator, r, [&, r, layered](sim::Proc p) -> Task<void> {
      auto& tile = tiles[static_cast<std::size_t>(r)];
      if (layered) {
        resilience::ResilienceContext ctx(
            p, rig.topology, {resilience::Strategy::Mirror}, rig.internal);
        for (;;) {
          co_await workloads::exchange_halos(ctx, tile);
          workloads::diffusion_step(tile, 0.25);
          co_await ctx.allreduce_sum(workloads::local_mass(tile));
          co_await p.next_iteration();
        }
      } else {
        for (;;) {
          co_await workloads::exchange_halos_raw(p, rig.topology, 0, tile);
          workloads::diffusion_step(tile, 0.25);
          auto s =
              co_await p.allreduce_sum(0, workloads::local_mass(tile));
          require(s.ok(), "bare collective failed in a fault-free run");
          co_await p.next_iteration();
        }
      }
    });
  }
  std::vector<std::vector<double>> states;
  for (int it = 1; it <= cfg.iterations; ++it) {
    rig.simulator.advance_iteration();
    rig.simulator.run_iteration();
    std::vector<double> flat;
    flat.reserve(64u * 256u);
    for (const auto& t : tiles)
      flat.insert(flat.end(), t.interior.begin(), t.interior.end());
    states.push_back(std::move(flat));
  }
  return states;
}

void criterion_transparency() {
  auto t0 = std::chrono::steady_clock::now();
  auto with = diffusion_states(true);
  auto without = diffusion_states(false);
  require(with.size() == without.size(), "iteration counts differ");
  for (std::size_t it = 0; it < with.size(); ++it) {
    require(with[it].size() == without[it].size(), "field sizes differ");
    require(std::memcmp(with[it].data(), without[it].data(),
                        with[it].size() * sizeof(double)) == 0,
            "field states differ at iteration " + std::to_string(it + 1));
  }
  require(seconds_since(t0) < 5.0, "runtime budget of 5 s exceeded");
}

// ---- 3: shrink order preservation --------------------------------------------

void criterion_shrink_oracle() {
  std::mt19937_64 rng(31337);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 1 + static_cast<int>(rng() % 256);
    std::vector<bool> failed(static_cast<std::size_t>(n), false);
    std::vector<sim::FaultEvent> plan;
    int max_failures = n / 2;
    for (int r = 0; r < n && static_cast<int>(plan.size()) < max_failures; ++r) {
      if (rng() % 2 == 0) {
        plan.push_back({r, 1});
        failed[static_cast<std::size_t>(r)] = true;
      }
    }
    sim::World w(n, plan, rng());
    std::vector<int> members;
    for (int r = 0; r < n; ++r)
      if (rng() % 4 != 0) members.push_back(r);
    if (members.empty()) members.push_back(0);
    sim::CommId comm = w.make_comm(members);
    w.advance_iteration();
    sim::CommId fresh = w.shrink(comm);
    require(w.comm(fresh).members == test_oracles::filter_live(members, failed),
            "shrink disagrees with the filter oracle at trial " +
                std::to_string(trial));
  }
}

// ---- 4: bridge oracle ---------------------------------------------------------

void criterion_bridge_oracle() {
  std::mt19937_64 rng(4242);
  sim::World w(512, {}, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    int nd = 1 + static_cast<int>(rng() % 3);
    std::vector<int> dims;
    std::vector<std::uint8_t> periods;
    long long total = 1;
    for (int d = 0; d < nd; ++d) {
      dims.push_back(1 + static_cast<int>(rng() % 8));
      periods.push_back(static_cast<std::uint8_t>(rng() % 2));
      total *= dims.back();
    }
    topo::CartTopology t(w, 0, dims, periods);
    auto live = topo::LivenessView::all_live(t.size());
    int failures = static_cast<int>(rng() % (static_cast<std::uint64_t>(total) / 2 + 1));
    for (int k = 0; k < failures; ++k)
      live.set_failed(static_cast<int>(rng() % static_cast<std::uint64_t>(total)));

    for (int probe = 0; probe < 4; ++probe) {
      int rank = static_cast<int>(rng() % static_cast<std::uint64_t>(total));
      int dim = static_cast<int>(rng() % static_cast<std::uint64_t>(nd));
      int mag = 1 + static_cast<int>(rng() % 3);
      int disp = rng() % 2 ? mag : -mag;
      auto got = t.shift(live, rank, dim, disp);
      auto want_dst = test_oracles::scan_shift(t, live, rank, dim, disp);
      auto want_src = test_oracles::scan_shift(t, live, rank, dim, -disp);
      require(got.dst == want_dst && got.src == want_src,
              "shift disagrees with the scan oracle at trial " +
                  std::to_string(trial));
    }
  }
}

// ---- 5: path search vs BFS ----------------------------------------------------

void check_astar_against_bfs(const topo::CartTopology& t,
                             const topo::LivenessView& live) {
  for (int dest = 0; dest < t.size(); ++dest) {
    auto dist = test_oracles::bfs_distances(t, live, dest);
    for (int cur = 0; cur < t.size(); ++cur) {
      if (!live.is_live(cur) || cur == dest) continue;
      auto hop = routing::astar_next_hop(t, live, t.coords_of(cur),
                                         t.coords_of(dest));
      bool reachable =
          live.is_live(dest) && dist[static_cast<std::size_t>(cur)] >= 0;
      if (!reachable) {
        require(hop.kind == routing::NextHop::Kind::Unreachable,
                "search found a path where BFS says unreachable");
        continue;
      }
      require(hop.kind == routing::NextHop::Kind::Step,
              "search failed where BFS finds a path");
      auto nb = t.neighbor(cur, hop.dir.dim, hop.dir.sign);
      require(nb.has_value() && live.is_live(*nb),
              "returned step leaves the live grid");
      require(dist[static_cast<std::size_t>(*nb)] ==
                  dist[static_cast<std::size_t>(cur)] - 1,
              "returned step is not on a shortest path");
    }
  }
}

void criterion_astar_vs_bfs() {
  sim::World w(64, {}, 0);
  // every single-fault configuration, periodic and bounded
  for (std::uint8_t periodic : {0, 1}) {
    topo::CartTopology t(w, 0, {8, 8}, {periodic, periodic});
    for (int f = 0; f < 64; ++f) {
      auto live = topo::LivenessView::all_live(64);
      live.set_failed(f);
      check_astar_against_bfs(t, live);
    }
  }
  // 200 random fault sets of up to 10 failures
  std::mt19937_64 rng(555);
  for (int trial = 0; trial < 200; ++trial) {
    std::uint8_t periodic = trial % 2 ? 1 : 0;
    topo::CartTopology t(w, 0, {8, 8}, {periodic, periodic});
    auto live = topo::LivenessView::all_live(64);
    int faults = static_cast<int>(rng() % 11);
    for (int k = 0; k < faults; ++k)
      live.set_failed(static_cast<int>(rng() % 64));
    check_astar_against_bfs(t, live);
  }
  // the blocked bottom row resolves upward
  topo::CartTopology t(w, 0, {8, 8}, {0, 0});
  auto live = topo::LivenessView::all_live(64);
  live.set_failed(t.rank_of({0, 1}));
  auto hop = routing::astar_next_hop(t, live, {0, 0}, {0, 2});
  require(hop.kind == routing::NextHop::Kind::Step &&
              hop.dir.dim == 0 && hop.dir.sign == +1,
          "blocked-row scenario did not step upward");
}

// ---- 6: particle ledger -------------------------------------------------------

void criterion_particle_ledger() {
  xpt::RunConfig cfg;
  cfg.dims = {8, 8};
  cfg.periods = {1, 1};
  cfg.tile_rows = cfg.tile_cols = 16;
  cfg.iterations = 120;
  cfg.workload = xpt::WorkloadKind::Particles;
  cfg.particles_per_tile = 64;
  cfg.faults.push_back({12, 40});
  cfg.seed = 7;
  xpt::RunResult res = xpt::run_experiment(cfg);
  require(res.initial_particles == 64u * 64u, "unexpected initial seeding");
  require(res.records.size() == 120, "run did not complete");
  for (const auto& row : res.ledger) {
    require(row.particles_owned + row.particles_discarded +
                    row.particles_lost_in_failed ==
                res.initial_particles,
            "ledger unbalanced at iteration " + std::to_string(row.iteration));
  }
  require(res.ledger.back().particles_lost_in_failed > 0,
          "the fault never took particles down with it");
}

// ---- 7: strategy contracts ----------------------------------------------------

void criterion_strategy_contracts() {
  std::mt19937_64 rng(2718);
  std::uniform_real_distribution<double> val(-1e3, 1e3);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t len = 1 + rng() % 16;
    sim::Payload a(len), b(len);
    for (auto& x : a) x = val(rng);
    for (auto& x : b) x = val(rng);
    double fill = val(rng);

    Rig rig(4, {{1, 1}}, {4}, {1});
    rig.simulator.advance_iteration();
    std::optional<sim::Payload> mirror, filled, interp;
    spawn_body(rig.simulator, 0, [&](sim::Proc p) -> Task<void> {
      resilience::ResilienceContext m(p, rig.topology,
                                      {resilience::Strategy::Mirror},
                                      rig.internal);
      mirror = co_await m.guarded_exchange(0, +1, sim::Payload(a));
      resilience::StrategyConfig fc{resilience::Strategy::DefaultFill};
      fc.fill_value = fill;
      resilience::ResilienceContext f(p, rig.topology, fc, rig.internal);
      filled = co_await f.guarded_exchange(0, +1, sim::Payload(a));
      resilience::ResilienceContext ic(p, rig.topology,
                                       {resilience::Strategy::Interpolate},
                                       rig.internal);
      interp = co_await ic.guarded_exchange(0, +1, sim::Payload(a));
    });
    spawn_body(rig.simulator, 2, [&](sim::Proc p) -> Task<void> {
      resilience::ResilienceContext ic(p, rig.topology,
                                       {resilience::Strategy::Interpolate},
                                       rig.internal);
      co_await ic.guarded_exchange(0, -1, sim::Payload(b));
    });
    rig.simulator.run_iteration();

    require(*mirror == a, "mirror did not return the send vector verbatim");
    require(*filled == sim::Payload(len, fill),
            "default fill is not uniformly the fill value");
    require(interp->size() == len, "interpolation changed the length");
    for (std::size_t i = 0; i < len; ++i) {
      double mean = (a[i] + b[i]) / 2.0;
      require((*interp)[i] == mean,
              "interpolation differs from the elementwise mean");
    }
  }
}

// ---- 8: influence-speed bound ---------------------------------------------------

void criterion_influence_bound() {
  auto t0 = std::chrono::steady_clock::now();
  xpt::RunConfig ref;
  ref.dims = {8, 8};
  ref.periods = {0, 0};  // walls keep the probe's distance meaningful
  ref.tile_rows = ref.tile_cols = 16;
  ref.iterations = 400;
  ref.workload = xpt::WorkloadKind::Diffusion;
  ref.init = xpt::InitKind::HotSpot;
  ref.hot_c0 = 24.5;  // inside the fault tile (1,0)
  ref.hot_c1 = 8.5;
  ref.hot_amplitude = 1e9;
  ref.strategy.kind = resilience::Strategy::Mirror;
  ref.probe_region = {{4, 4, 7, 7}};  // the opposite quadrant
  ref.stop_threshold = 1e6;           // observe the full horizon
  ref.output_path = artifact("influence_ref.csv").string();
  xpt::run_experiment(ref);

  xpt::RunConfig faulty = ref;
  const long long fault_iteration = 40;
  faulty.faults.push_back({8, fault_iteration});  // rank 8 = tile (1,0)
  faulty.output_path = artifact("influence_faulty.csv").string();
  xpt::run_experiment(faulty);

  // fault tile cells: rows 16..31, cols 0..15; probe cells start at (64,64):
  // Chebyshev gap = max(64-31, 64-15) = 49 cells.
  const long long chebyshev = 49;
  auto report = xpt::compare_runs(faulty.output_path, ref.output_path, 1e-12);
  bool checked = false;
  for (const auto& col : report.columns) {
    if (col.column != "probe_metric") continue;
    checked = true;
    require(col.diverged, "the probe never felt the fault at all");
    require(col.iteration >= fault_iteration + chebyshev,
            "probe diverged at iteration " + std::to_string(col.iteration) +
                ", before the influence bound " +
                std::to_string(fault_iteration + chebyshev));
  }
  require(checked, "compare produced no probe_metric column");

  // exact agreement before the bound
  auto run_rows = xpt::read_csv(faulty.output_path);
  auto ref_rows = xpt::read_csv(ref.output_path);
  for (std::size_t i = 0;
       i < run_rows.size() &&
       run_rows[i].iteration < fault_iteration + chebyshev;
       ++i) {
    double a = *run_rows[i].probe_metric;
    double b = *ref_rows[i].probe_metric;
    require(std::abs(a - b) <= 1e-12 * std::max(std::abs(b), 1e-30),
            "probe deviated before the influence cone arrived");
  }
  require(seconds_since(t0) < 30.0, "runtime budget of 30 s exceeded");
}

// ---- 9: stop criterion behaviour ------------------------------------------------

void criterion_stop_behaviour() {
  xpt::RunConfig base;
  base.dims = {8, 8};
  base.periods = {1, 1};
  base.tile_rows = base.tile_cols = 16;
  base.iterations = 600;
  base.workload = xpt::WorkloadKind::Diffusion;
  base.init = xpt::InitKind::Random;
  base.field_seed = 3;
  base.stop_threshold = 0.05;

  xpt::RunResult clean = xpt::run_experiment(base);
  require(clean.outcome == xpt::Outcome::Completed,
          "fault-free run stopped early");

  xpt::RunConfig faulty = base;
  faulty.strategy.kind = resilience::Strategy::Mirror;
  faulty.faults.push_back({12, 280});
  xpt::RunResult mirrored = xpt::run_experiment(faulty);
  require(mirrored.records.size() >= 280,
          "mirror run ended before the fault iteration");
  require(!(mirrored.outcome == xpt::Outcome::StoppedAtThreshold &&
            mirrored.last_iteration == 280),
          "the structural drop alone tripped the stop criterion");

  xpt::RunConfig leaking = base;
  leaking.iterations = 200;
  leaking.leak_iteration = 100;
  leaking.leak_fraction = 0.10;
  xpt::RunResult leaked = xpt::run_experiment(leaking);
  require(leaked.outcome == xpt::Outcome::StoppedAtThreshold,
          "a 10% leak did not stop the run");
  require(leaked.last_iteration >= 100 && leaked.last_iteration <= 101,
          "leak stop fired at iteration " +
              std::to_string(leaked.last_iteration));
}

// ---- 10: determinism -------------------------------------------------------------

std::vector<std::string> csv_without_wall_column(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "missing csv " + path);
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(in, line)) {
    auto cut = line.rfind(',');
    rows.push_back(line.substr(0, cut));
  }
  return rows;
}

void criterion_determinism() {
  xpt::RunConfig cfg;
  cfg.dims = {8, 8};
  cfg.periods = {1, 1};
  cfg.tile_rows = cfg.tile_cols = 8;
  cfg.iterations = 120;
  cfg.workload = xpt::WorkloadKind::Both;
  cfg.particles_per_tile = 16;
  cfg.init = xpt::InitKind::Random;
  cfg.field_seed = 11;
  cfg.seed = 42;
  cfg.faults.push_back({12, 40});
  cfg.probe_region = {{4, 4, 7, 7}};

  cfg.output_path = artifact("det_a.csv").string();
  xpt::run_experiment(cfg);
  cfg.output_path = artifact("det_b.csv").string();
  xpt::run_experiment(cfg);

  auto a = csv_without_wall_column(artifact("det_a.csv").string());
  auto b = csv_without_wall_column(artifact("det_b.csv").string());
  require(a == b, "csv outputs differ outside the wall_time_ms column");
  require(a.size() > 1, "empty csv");
}

struct Criterion {
  int id;
  const char* name;
  std::function<void()> body;
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> criteria = {
      {1, "structural mass drop at the fault iteration", criterion_mass_drop},
      {2, "fault-free transparency of the resilience layer",
       criterion_transparency},
      {3, "shrink preserves order against the filter oracle",
       criterion_shrink_oracle},
      {4, "liveness-aware shift against the scan oracle",
       criterion_bridge_oracle},
      {5, "path search agrees with breadth-first search",
       criterion_astar_vs_bfs},
      {6, "particle ledger balances exactly", criterion_particle_ledger},
      {7, "failed-peer strategy contracts", criterion_strategy_contracts},
      {8, "influence-speed bound on the probe region",
       criterion_influence_bound},
      {9, "stop criterion behaviour", criterion_stop_behaviour},
      {10, "byte-identical reruns modulo wall time", criterion_determinism},
  };

  int only = argc > 1 ? std::atoi(argv[1]) : 0;
  int failures = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    auto t0 = std::chrono::steady_clock::now();
    try {
      c.body();
      std::printf("[PASS] criterion %2d: %s (%.2fs)\n", c.id, c.name,
                  seconds_since(t0));
    } catch (const std::exception& e) {
      ++failures;
      std::printf("[FAIL] criterion %2d: %s (%.2fs)\n       %s\n", c.id, c.name,
                  seconds_since(t0), e.what());
    }
    std::fflush(stdout);
  }
  if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
