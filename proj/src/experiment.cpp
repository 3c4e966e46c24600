#include "gridfault/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "gridfault/workloads.hpp"

namespace gridfault::experiment {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& v, const std::string& what) {
  try {
    std::size_t used = 0;
    long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw sim::InvalidConfig("expected an integer for " + what + ", got '" + v +
                             "'");
  }
}

double parse_double(const std::string& v, const std::string& what) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw sim::InvalidConfig("expected a number for " + what + ", got '" + v +
                             "'");
  }
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : v) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<std::string> split_dims(const std::string& v) {
  return v.find('x') != std::string::npos ? split(v, 'x') : split(v, ',');
}

// name(arg1,arg2,...) -> args; empty when the value is just `name`.
std::optional<std::vector<std::string>> call_args(const std::string& v,
                                                  const std::string& name) {
  if (v == name) return std::vector<std::string>{};
  if (v.rfind(name + "(", 0) != 0 || v.back() != ')') return std::nullopt;
  std::string inner = v.substr(name.size() + 1, v.size() - name.size() - 2);
  return split(inner, ',');
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& rawkey,
                    const std::string& rawvalue) {
  const std::string key = trim(rawkey);
  const std::string value = trim(rawvalue);
  if (key == "dims") {
    std::vector<int> dims;
    for (const auto& part : split_dims(value))
      dims.push_back(static_cast<int>(parse_int(part, "dims")));
    cfg.dims = dims;
    if (cfg.periods.size() != cfg.dims.size())
      cfg.periods.assign(cfg.dims.size(), 1);
  } else if (key == "periods") {
    std::vector<std::uint8_t> periods;
    for (const auto& part : split(value, ','))
      periods.push_back(parse_int(part, "periods") != 0 ? 1 : 0);
    cfg.periods = periods;
  } else if (key == "cells_per_tile") {
    auto parts = split_dims(value);
    if (parts.size() == 1) {
      cfg.tile_rows = cfg.tile_cols =
          static_cast<int>(parse_int(parts[0], "cells_per_tile"));
    } else if (parts.size() == 2) {
      cfg.tile_rows = static_cast<int>(parse_int(parts[0], "cells_per_tile"));
      cfg.tile_cols = static_cast<int>(parse_int(parts[1], "cells_per_tile"));
    } else {
      throw sim::InvalidConfig("cells_per_tile wants N or RxC");
    }
  } else if (key == "iterations") {
    cfg.iterations = parse_int(value, "iterations");
  } else if (key == "workload") {
    if (value == "diffusion")
      cfg.workload = WorkloadKind::Diffusion;
    else if (value == "particles")
      cfg.workload = WorkloadKind::Particles;
    else if (value == "both")
      cfg.workload = WorkloadKind::Both;
    else
      throw sim::InvalidConfig("unknown workload: " + value);
  } else if (key == "strategy") {
    cfg.strategy.kind = resilience::strategy_from_name(value);
  } else if (key == "fill_value") {
    cfg.strategy.fill_value = parse_double(value, "fill_value");
  } else if (key == "interp_weight") {
    cfg.strategy.interp_weight = parse_double(value, "interp_weight");
  } else if (key == "alpha") {
    cfg.alpha = parse_double(value, "alpha");
  } else if (key == "fault") {
    auto at = value.find('@');
    if (at == std::string::npos)
      throw sim::InvalidConfig("fault wants rank@iteration, got '" + value + "'");
    sim::FaultEvent ev;
    ev.rank = static_cast<int>(parse_int(trim(value.substr(0, at)), "fault rank"));
    ev.at_iteration = parse_int(trim(value.substr(at + 1)), "fault iteration");
    cfg.faults.push_back(ev);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_int(value, "seed"));
  } else if (key == "stop_threshold") {
    cfg.stop_threshold = parse_double(value, "stop_threshold");
  } else if (key == "probe_region") {
    auto parts = split(value, ',');
    if (parts.size() != 4)
      throw sim::InvalidConfig("probe_region wants r0,c0,r1,c1");
    std::array<int, 4> box{};
    for (int i = 0; i < 4; ++i)
      box[static_cast<std::size_t>(i)] =
          static_cast<int>(parse_int(parts[static_cast<std::size_t>(i)],
                                     "probe_region"));
    cfg.probe_region = box;
  } else if (key == "output") {
    cfg.output_path = value;
  } else if (key == "init") {
    if (value == "uniform") {
      cfg.init = InitKind::Uniform;
    } else if (auto args = call_args(value, "hot-spot")) {
      if (args->size() != 3)
        throw sim::InvalidConfig("init hot-spot wants (c0,c1,amplitude)");
      cfg.init = InitKind::HotSpot;
      cfg.hot_c0 = parse_double((*args)[0], "hot-spot c0");
      cfg.hot_c1 = parse_double((*args)[1], "hot-spot c1");
      cfg.hot_amplitude = parse_double((*args)[2], "hot-spot amplitude");
    } else if (auto rargs = call_args(value, "random")) {
      if (rargs->size() != 1)
        throw sim::InvalidConfig("init random wants (seed)");
      cfg.init = InitKind::Random;
      cfg.field_seed =
          static_cast<std::uint64_t>(parse_int((*rargs)[0], "random seed"));
    } else {
      throw sim::InvalidConfig("unknown init: " + value);
    }
  } else if (key == "particles") {
    auto args = call_args(value, "uniform-density");
    if (!args || args->size() != 1)
      throw sim::InvalidConfig("particles wants uniform-density(n_per_tile)");
    cfg.particles_per_tile =
        static_cast<int>(parse_int((*args)[0], "particles per tile"));
  } else if (key == "l2_reference") {
    if (value == "shadow")
      cfg.shadow_reference = true;
    else if (value == "none")
      cfg.shadow_reference = false;
    else
      throw sim::InvalidConfig("l2_reference wants none|shadow");
  } else if (key == "layer") {
    if (value == "on")
      cfg.use_layer = true;
    else if (value == "off")
      cfg.use_layer = false;
    else
      throw sim::InvalidConfig("layer wants on|off");
  } else if (key == "leak_iteration") {
    cfg.leak_iteration = parse_int(value, "leak_iteration");
  } else if (key == "leak_fraction") {
    cfg.leak_fraction = parse_double(value, "leak_fraction");
  } else {
    throw sim::InvalidConfig("unknown config key: " + key);
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw sim::InvalidConfig("config line without '=': " + line);
    apply_override(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

void validate(const RunConfig& cfg) {
  if (cfg.dims.size() != 2)
    throw sim::InvalidConfig("workloads run on 2-D grids (dims = RxC)");
  if (cfg.periods.size() != cfg.dims.size())
    throw sim::InvalidConfig("periods arity differs from dims");
  long long ranks = 1;
  for (int d : cfg.dims) {
    if (d < 1) throw sim::InvalidConfig("grid dimensions must be >= 1");
    ranks *= d;
  }
  if (cfg.tile_rows < 1 || cfg.tile_cols < 1)
    throw sim::InvalidConfig("cells_per_tile must be >= 1");
  if (cfg.iterations < 1) throw sim::InvalidConfig("iterations must be >= 1");
  if (!(cfg.stop_threshold > 0))
    throw sim::InvalidConfig("stop_threshold must be > 0");
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 0.25))
    throw sim::InvalidConfig("alpha must be in (0, 0.25]");
  if (cfg.strategy.interp_weight < 0.0 || cfg.strategy.interp_weight > 1.0)
    throw sim::InvalidConfig("interp_weight must be in [0, 1]");
  if (cfg.particles_per_tile < 0)
    throw sim::InvalidConfig("particles per tile must be >= 0");
  for (const auto& ev : cfg.faults) {
    if (ev.rank < 0 || ev.rank >= ranks)
      throw sim::InvalidConfig("fault rank " + std::to_string(ev.rank) +
                               " outside the grid of " + std::to_string(ranks));
    if (ev.at_iteration < 0)
      throw sim::InvalidConfig("fault iteration must be >= 0");
  }
  if (cfg.probe_region) {
    const auto& b = *cfg.probe_region;
    if (b[0] < 0 || b[1] < 0 || b[0] > b[2] || b[1] > b[3] ||
        b[2] >= cfg.dims[0] || b[3] >= cfg.dims[1])
      throw sim::InvalidConfig("probe_region outside the grid");
  }
  if (cfg.leak_iteration &&
      (cfg.leak_fraction <= 0.0 || cfg.leak_fraction >= 1.0))
    throw sim::InvalidConfig("leak_fraction must be in (0, 1)");
  if (!cfg.use_layer) {
    if (cfg.workload != WorkloadKind::Diffusion)
      throw sim::InvalidConfig("layer=off supports the diffusion workload only");
    if (!cfg.faults.empty())
      throw sim::InvalidConfig("layer=off cannot survive faults");
  }
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Completed:
      return "completed";
    case Outcome::StoppedAtThreshold:
      return "stopped-at-threshold";
    case Outcome::NoSurvivors:
      return "no-survivors";
  }
  return "?";
}

bool stop_criterion(const ConservationLedger& ledger, double live_fraction,
                    double threshold) {
  double baseline = live_fraction * ledger.initial_total;
  double deviation = std::abs(ledger.current_total - baseline);
  double denom = std::abs(baseline);
  if (denom < 1e-300) return deviation > 1e-300;
  return deviation / denom > threshold;
}

// ---- Run driver -------------------------------------------------------------

namespace {

double init_cell_value(const RunConfig& cfg, long long gr, long long gc) {
  switch (cfg.init) {
    case InitKind::Uniform:
      return 1.0;
    case InitKind::HotSpot:
      return (gr == static_cast<long long>(std::floor(cfg.hot_c0)) &&
              gc == static_cast<long long>(std::floor(cfg.hot_c1)))
                 ? cfg.hot_amplitude
                 : 0.0;
    case InitKind::Random: {
      long long cols = static_cast<long long>(cfg.dims[1]) * cfg.tile_cols;
      std::uint64_t h = splitmix64(cfg.field_seed ^
                                   static_cast<std::uint64_t>(gr * cols + gc));
      return static_cast<double>(h >> 11) * 0x1.0p-53;
    }
  }
  return 0.0;
}

struct RankState {
  workloads::FieldTile tile;
  workloads::ParticleStore particles;
};

Task<void> layered_program(sim::Proc proc, const RunConfig* cfg,
                           const topo::CartTopology* topology,
                           sim::CommId internal_comm, RankState* st) {
  resilience::ResilienceContext ctx(proc, *topology, cfg->strategy,
                                    internal_comm);
  workloads::TileGeometry geom{cfg->tile_rows, cfg->tile_cols};
  const bool diffusion = cfg->workload != WorkloadKind::Particles;
  const bool particles = cfg->workload != WorkloadKind::Diffusion;
  for (;;) {
    if (diffusion) {
      co_await workloads::exchange_halos(ctx, st->tile);
      workloads::diffusion_step(st->tile, cfg->alpha);
    }
    if (particles) co_await workloads::particle_iteration(ctx, geom, st->particles);
    double local = diffusion
                       ? workloads::local_mass(st->tile)
                       : static_cast<double>(st->particles.owned.size());
    co_await ctx.allreduce_sum(local);
    co_await proc.next_iteration();
  }
}

Task<void> bare_program(sim::Proc proc, const RunConfig* cfg,
                        const topo::CartTopology* topology, RankState* st) {
  const sim::CommId comm = proc.world().world_comm();
  for (;;) {
    co_await workloads::exchange_halos_raw(proc, *topology, comm, st->tile);
    workloads::diffusion_step(st->tile, cfg->alpha);
    auto r = co_await proc.allreduce_sum(comm, workloads::local_mass(st->tile));
    if (!r.ok())
      throw std::runtime_error("bare allreduce failed: " +
                               sim::to_string(r.error()));
    co_await proc.next_iteration();
  }
}

struct Instance {
  RunConfig cfg;
  sim::World world;
  sim::Sim sim;
  topo::CartTopology topology;
  sim::CommId internal_comm;
  std::vector<RankState> states;

  Instance(const RunConfig& c, bool with_faults)
      : cfg(c),
        world(ranks_of(c), with_faults ? c.faults : std::vector<sim::FaultEvent>{},
              c.seed),
        sim(world),
        topology(world, world.world_comm(), c.dims, c.periods),
        internal_comm(world.dup_comm(world.world_comm())) {
    const bool diffusion = cfg.workload != WorkloadKind::Particles;
    const bool particles = cfg.workload != WorkloadKind::Diffusion;
    states.resize(static_cast<std::size_t>(world.n_ranks()));
    for (int r = 0; r < world.n_ranks(); ++r) {
      auto& st = states[static_cast<std::size_t>(r)];
      topo::Coords c0 = topology.coords_of(r);
      if (diffusion) {
        st.tile = workloads::make_tile(cfg.tile_rows, cfg.tile_cols, 0.0);
        for (int i = 0; i < cfg.tile_rows; ++i)
          for (int j = 0; j < cfg.tile_cols; ++j)
            st.tile.at(i, j) = init_cell_value(
                cfg, static_cast<long long>(c0[0]) * cfg.tile_rows + i,
                static_cast<long long>(c0[1]) * cfg.tile_cols + j);
      }
      if (particles) seed_particles(r, st);
    }
    for (int r = 0; r < world.n_ranks(); ++r) {
      auto& st = states[static_cast<std::size_t>(r)];
      if (cfg.use_layer) {
        sim.spawn(r, [&](sim::Proc p) {
          return layered_program(p, &cfg, &topology, internal_comm, &st);
        });
      } else {
        sim.spawn(r, [&](sim::Proc p) {
          return bare_program(p, &cfg, &topology, &st);
        });
      }
    }
  }

  static int ranks_of(const RunConfig& c) {
    long long n = 1;
    for (int d : c.dims) n *= d;
    return static_cast<int>(n);
  }

  void seed_particles(int rank, RankState& st) {
    const int n = cfg.particles_per_tile;
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                      static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(rank)};
    std::mt19937_64 eng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> speed(-2.0, 2.0);
    topo::Coords c0 = topology.coords_of(rank);
    st.particles.owned.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      workloads::Particle p;
      p.id = static_cast<std::uint64_t>(rank) * static_cast<std::uint64_t>(n) +
             static_cast<std::uint64_t>(k);
      p.pos[0] = (c0[0] + unit(eng)) * cfg.tile_rows;
      p.pos[1] = (c0[1] + unit(eng)) * cfg.tile_cols;
      p.vel[0] = speed(eng);
      p.vel[1] = speed(eng);
      st.particles.owned.push_back(p);
    }
  }

  double mass(bool live_only) const {
    double sum = 0.0;
    for (int r = 0; r < world.n_ranks(); ++r)
      if (!live_only || !world.is_failed(r))
        sum += workloads::local_mass(states[static_cast<std::size_t>(r)].tile);
    return sum;
  }

  double probe_mass() const {
    const auto& b = *cfg.probe_region;
    double sum = 0.0;
    for (int r = 0; r < world.n_ranks(); ++r) {
      if (world.is_failed(r)) continue;
      topo::Coords c = topology.coords_of(r);
      if (c[0] >= b[0] && c[0] <= b[2] && c[1] >= b[1] && c[1] <= b[3])
        sum += workloads::local_mass(states[static_cast<std::size_t>(r)].tile);
    }
    return sum;
  }

  std::uint64_t owned_particles() const {
    std::uint64_t sum = 0;
    for (int r = 0; r < world.n_ranks(); ++r)
      if (!world.is_failed(r))
        sum += states[static_cast<std::size_t>(r)].particles.owned.size();
    return sum;
  }

  std::uint64_t discarded_particles() const {
    std::uint64_t sum = 0;
    for (int r = 0; r < world.n_ranks(); ++r)
      if (!world.is_failed(r))
        sum += states[static_cast<std::size_t>(r)].particles.discarded;
    return sum;
  }

  void scale_live_tiles(double factor) {
    for (int r = 0; r < world.n_ranks(); ++r) {
      if (world.is_failed(r)) continue;
      for (double& v : states[static_cast<std::size_t>(r)].tile.interior)
        v *= factor;
    }
  }
};

double relative_l2(const Instance& run, const Instance& ref) {
  double diff2 = 0.0, ref2 = 0.0;
  for (int r = 0; r < run.world.n_ranks(); ++r) {
    if (run.world.is_failed(r)) continue;
    const auto& a = run.states[static_cast<std::size_t>(r)].tile.interior;
    const auto& b = ref.states[static_cast<std::size_t>(r)].tile.interior;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double d = a[i] - b[i];
      diff2 += d * d;
      ref2 += b[i] * b[i];
    }
  }
  return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-30);
}

}  // namespace

RunResult run_experiment(const RunConfig& cfg) {
  validate(cfg);
  const bool diffusion = cfg.workload != WorkloadKind::Particles;
  const bool particles = cfg.workload != WorkloadKind::Diffusion;

  Instance main(cfg, /*with_faults=*/true);
  std::optional<Instance> shadow;
  if (cfg.shadow_reference) {
    RunConfig twin = cfg;
    twin.faults.clear();
    twin.leak_iteration.reset();
    twin.shadow_reference = false;
    twin.output_path.clear();
    shadow.emplace(twin, /*with_faults=*/false);
  }

  RunResult out;
  out.initial_particles = particles ? main.owned_particles() : 0;
  ConservationLedger ledger;
  if (diffusion) {
    ledger.initial_total = main.mass(/*live_only=*/false);
    ledger.current_total = ledger.initial_total;
  }
  std::uint64_t particles_lost_in_failed = 0;
  bool stopped_early = false;

  for (long long it = 1; it <= cfg.iterations; ++it) {
    auto t0 = std::chrono::steady_clock::now();
    auto newly = main.sim.advance_iteration();
    for (sim::Rank r : newly) {
      const auto& st = main.states[static_cast<std::size_t>(r)];
      if (diffusion) ledger.lost_to_faults += workloads::local_mass(st.tile);
      particles_lost_in_failed += st.particles.owned.size();
    }
    if (main.world.live_count() == 0) {
      out.outcome = Outcome::NoSurvivors;
      out.last_iteration = it;
      stopped_early = true;
      break;
    }
    main.sim.run_iteration();
    if (shadow) {
      shadow->sim.advance_iteration();
      shadow->sim.run_iteration();
    }
    if (cfg.leak_iteration && *cfg.leak_iteration == it)
      main.scale_live_tiles(1.0 - cfg.leak_fraction);

    MetricsRecord rec;
    rec.iteration = it;
    rec.live_ranks = main.world.live_count();
    if (diffusion) {
      rec.global_mass = main.mass(/*live_only=*/true);
      ledger.current_total = *rec.global_mass;
    }
    if (particles) {
      rec.particle_count = static_cast<long long>(main.owned_particles());
      rec.discarded_count = static_cast<long long>(main.discarded_particles());
      ledger.discarded_count = *rec.discarded_count;
    }
    if (diffusion && cfg.probe_region) rec.probe_metric = main.probe_mass();
    if (shadow && diffusion) rec.l2_vs_reference = relative_l2(main, *shadow);
    rec.wall_time_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    out.records.push_back(rec);

    LedgerRow row;
    row.iteration = it;
    row.mass_live = diffusion ? *rec.global_mass : 0.0;
    row.mass_lost_to_faults = ledger.lost_to_faults;
    row.particles_owned = particles ? static_cast<std::uint64_t>(*rec.particle_count) : 0;
    row.particles_discarded =
        particles ? static_cast<std::uint64_t>(*rec.discarded_count) : 0;
    row.particles_lost_in_failed = particles_lost_in_failed;
    row.live_ranks = rec.live_ranks;
    out.ledger.push_back(row);

    double live_fraction = static_cast<double>(main.world.live_count()) /
                           static_cast<double>(main.world.n_ranks());
    if (diffusion && stop_criterion(ledger, live_fraction, cfg.stop_threshold)) {
      out.outcome = Outcome::StoppedAtThreshold;
      out.last_iteration = it;
      stopped_early = true;
      break;
    }
  }
  if (!stopped_early) {
    out.outcome = Outcome::Completed;
    out.last_iteration = cfg.iterations;
  }
  out.conservation = ledger;
  if (!cfg.output_path.empty()) write_csv(cfg.output_path, out.records);
  return out;
}

// ---- CSV --------------------------------------------------------------------

const char* csv_header() {
  return "iteration,global_mass,particle_count,discarded_count,live_ranks,"
         "probe_metric,l2_vs_reference,wall_time_ms";
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

std::string fmt_opt(const std::optional<long long>& v) {
  return v ? std::to_string(*v) : std::string();
}

}  // namespace

void write_csv(const std::string& path,
               const std::vector<MetricsRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open output file: " + path);
  out << csv_header() << '\n';
  for (const auto& r : records) {
    out << r.iteration << ',' << fmt_opt(r.global_mass) << ','
        << fmt_opt(r.particle_count) << ',' << fmt_opt(r.discarded_count) << ','
        << r.live_ranks << ',' << fmt_opt(r.probe_metric) << ','
        << fmt_opt(r.l2_vs_reference) << ',' << fmt_double(r.wall_time_ms)
        << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<MetricsRecord> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open csv file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaMismatch("empty csv: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header())
    throw SchemaMismatch("unexpected csv header in " + path);
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (fields.size() != 8)
      throw SchemaMismatch("csv row with " + std::to_string(fields.size()) +
                           " fields in " + path);
    MetricsRecord rec;
    rec.iteration = parse_int(fields[0], "iteration");
    if (!fields[1].empty()) rec.global_mass = parse_double(fields[1], "mass");
    if (!fields[2].empty())
      rec.particle_count = parse_int(fields[2], "particle_count");
    if (!fields[3].empty())
      rec.discarded_count = parse_int(fields[3], "discarded_count");
    rec.live_ranks = static_cast<int>(parse_int(fields[4], "live_ranks"));
    if (!fields[5].empty()) rec.probe_metric = parse_double(fields[5], "probe");
    if (!fields[6].empty())
      rec.l2_vs_reference = parse_double(fields[6], "l2");
    rec.wall_time_ms = fields[7].empty() ? 0.0 : parse_double(fields[7], "wall");
    out.push_back(rec);
  }
  return out;
}

// ---- Compare ----------------------------------------------------------------

namespace {

constexpr double kCompareEpsilon = 1e-30;

template <class Get>
ColumnReport column_divergence(const std::string& name,
                               const std::vector<MetricsRecord>& run,
                               const std::vector<MetricsRecord>& ref,
                               std::size_t common, double tolerance, Get get) {
  ColumnReport rep;
  rep.column = name;
  for (std::size_t i = 0; i < common; ++i) {
    std::optional<double> a = get(run[i]);
    std::optional<double> b = get(ref[i]);
    if (!a && !b) continue;
    if (!a || !b) {
      rep.diverged = true;
      rep.iteration = run[i].iteration;
      rep.run_value = a.value_or(std::nan(""));
      rep.ref_value = b.value_or(std::nan(""));
      rep.rel = std::numeric_limits<double>::infinity();
      return rep;
    }
    double rel = std::abs(*a - *b) / std::max(std::abs(*b), kCompareEpsilon);
    if (rel > tolerance) {
      rep.diverged = true;
      rep.iteration = run[i].iteration;
      rep.run_value = *a;
      rep.ref_value = *b;
      rep.rel = rel;
      return rep;
    }
  }
  return rep;
}

}  // namespace

CompareReport compare_runs(const std::string& run_csv,
                           const std::string& reference_csv, double tolerance) {
  auto run = read_csv(run_csv);
  auto ref = read_csv(reference_csv);
  std::size_t common = std::min(run.size(), ref.size());
  for (std::size_t i = 0; i < common; ++i)
    if (run[i].iteration != ref[i].iteration)
      throw SchemaMismatch("iteration sequences differ between the csv files");

  CompareReport rep;
  rep.common_iterations = static_cast<long long>(common);
  auto opt_ll = [](const std::optional<long long>& v) -> std::optional<double> {
    if (!v) return std::nullopt;
    return static_cast<double>(*v);
  };
  rep.columns.push_back(column_divergence(
      "probe_metric", run, ref, common, tolerance,
      [](const MetricsRecord& r) { return r.probe_metric; }));
  rep.columns.push_back(column_divergence(
      "global_mass", run, ref, common, tolerance,
      [](const MetricsRecord& r) { return r.global_mass; }));
  rep.columns.push_back(column_divergence(
      "particle_count", run, ref, common, tolerance,
      [&](const MetricsRecord& r) { return opt_ll(r.particle_count); }));
  rep.columns.push_back(column_divergence(
      "discarded_count", run, ref, common, tolerance,
      [&](const MetricsRecord& r) { return opt_ll(r.discarded_count); }));
  rep.columns.push_back(column_divergence(
      "live_ranks", run, ref, common, tolerance, [](const MetricsRecord& r) {
        return std::optional<double>(static_cast<double>(r.live_ranks));
      }));
  return rep;
}

std::string format_report(const CompareReport& report) {
  std::ostringstream out;
  out << "compared " << report.common_iterations << " common iterations\n";
  for (const auto& c : report.columns) {
    if (c.diverged) {
      out << c.column << ": diverged at iteration " << c.iteration
          << " (run=" << fmt_double(c.run_value)
          << ", reference=" << fmt_double(c.ref_value)
          << ", rel=" << fmt_double(c.rel) << ")\n";
    } else {
      out << c.column << ": never diverged\n";
    }
  }
  return out.str();
}

}  // namespace gridfault::experiment
