#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gridfault/resilience.hpp"
#include "gridfault/routing.hpp"
#include "gridfault/sim.hpp"
#include "gridfault/task.hpp"
#include "gridfault/topology.hpp"

namespace gridfault::workloads {

// Index of a tile side / exchange channel for (dim, dir).
constexpr int halo_side(int dim, int dir) { return 2 * dim + (dir > 0 ? 1 : 0); }

// One process's block of the global field plus a one-cell halo ring.
struct FieldTile {
  int rows = 0;
  int cols = 0;
  std::vector<double> interior;             // row-major rows x cols
  std::array<std::vector<double>, 4> halo;  // indexed by halo_side(dim, dir)

  double& at(int i, int j) {
    return interior[static_cast<std::size_t>(i * cols + j)];
  }
  double at(int i, int j) const {
    return interior[static_cast<std::size_t>(i * cols + j)];
  }
};

FieldTile make_tile(int rows, int cols, double value);
std::vector<double> border(const FieldTile& t, int dim, int dir);
double local_mass(const FieldTile& t);

// Explicit 5-point diffusion update using the halo ring; requires
// 0 < alpha <= 0.25 for stability.
void diffusion_step(FieldTile& t, double alpha);

// Which direction each rank exchanges first along `dim`: the parity of the
// position among live ranks on the grid line decides, so both ends of every
// live pair agree and the rendezvous chain never forms a waiting cycle.
std::array<int, 2> direction_order(const topo::CartTopology& t,
                                   const topo::LivenessView& live, int rank,
                                   int dim);

// Exchange all four halos through the resilience layer (2-D tiles).
Task<void> exchange_halos(resilience::ResilienceContext& ctx, FieldTile& tile);

// Same exchange pattern issued directly, without the interposition layer.
// Only valid in fault-free runs; any communication error throws.
Task<void> exchange_halos_raw(sim::Proc proc, const topo::CartTopology& t,
                              sim::CommId comm, FieldTile& tile);

// ---- Particles --------------------------------------------------------------

struct Particle {
  std::uint64_t id = 0;
  std::array<double, 2> pos{};  // global cell units
  std::array<double, 2> vel{};  // cells per iteration

  bool operator==(const Particle&) const = default;
};

// Wire format: u64 particle count, then per particle u64 id and f64
// pos0,pos1,vel0,vel1; all little endian.
std::vector<std::byte> pack_particles(std::span<const Particle> ps);
std::vector<Particle> unpack_particles(std::span<const std::byte> bytes);
sim::Payload payload_from_bytes(std::span<const std::byte> bytes);
std::vector<std::byte> bytes_from_payload(const sim::Payload& payload);

struct TileGeometry {
  int tile_rows = 1;
  int tile_cols = 1;
  int cells(int dim) const { return dim == 0 ? tile_rows : tile_cols; }
};

// Tile owning a (wrapped) global position.
topo::Coords tile_coords_of(const topo::CartTopology& t,
                            const TileGeometry& geom,
                            const std::array<double, 2>& pos);

// pos += vel with periodic wrap, or reflection at non-periodic walls.
void advance_position(Particle& p, const topo::CartTopology& t,
                      const TileGeometry& geom);

struct ParticleStore {
  std::vector<Particle> owned;
  std::uint64_t discarded = 0;
};

struct RouteResult {
  std::vector<Particle> kept;
  std::array<std::vector<Particle>, 4> outgoing;  // halo_side index
  std::uint64_t discarded = 0;
};

// Assign each particle a forwarding direction from its destination tile:
// dimension-order steps normally, the path search when failures may
// interfere. Particles heading to a failed or unreachable rank are dropped
// and counted.
RouteResult route_particles(const topo::CartTopology& t,
                            const topo::LivenessView& live, int self_rank,
                            const TileGeometry& geom, std::vector<Particle> in);

// Advance positions, then route everything that left the tile.
RouteResult advect_particles(const resilience::ResilienceContext& ctx,
                             const TileGeometry& geom,
                             std::vector<Particle> owned);

struct SubRound {
  std::vector<Particle> incoming;
  std::vector<Particle> stranded;  // channel peer died; caller re-routes
};

// One sub-round of per-direction particle exchanges. Every live channel
// exchanges even when empty so both sides stay matched.
Task<SubRound> exchange_particles(resilience::ResilienceContext& ctx,
                                  std::array<std::vector<Particle>, 4> outgoing);

struct ParticleIterationStats {
  int sub_rounds = 0;
  std::uint64_t discarded = 0;
};

// Full per-iteration particle phase: advect, then exchange sub-rounds until
// no particle is in transit anywhere. Aborts when transit fails to drain
// within 4x the grid diameter.
Task<ParticleIterationStats> particle_iteration(
    resilience::ResilienceContext& ctx, const TileGeometry& geom,
    ParticleStore& store);

}  // namespace gridfault::workloads
