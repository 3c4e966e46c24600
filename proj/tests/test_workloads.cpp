#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "gridfault/workloads.hpp"
#include "support/driver.hpp"
#include "support/rig.hpp"

using namespace gridfault;
using namespace gridfault::workloads;
using resilience::ResilienceContext;
using resilience::Strategy;
using sim::Payload;
using test_support::Rig;
using test_support::spawn_body;

TEST_CASE("a uniform field is a fixed point of the stencil") {
  FieldTile t = make_tile(6, 6, 3.25);
  diffusion_step(t, 0.25);
  for (double v : t.interior) CHECK(v == 3.25);
}

TEST_CASE("one hot cell spreads exactly alpha to each neighbour") {
  FieldTile t = make_tile(5, 5, 0.0);
  for (auto& h : t.halo) std::fill(h.begin(), h.end(), 0.0);
  t.at(2, 2) = 1.0;
  diffusion_step(t, 0.25);
  CHECK(t.at(2, 2) == 0.0);  // loses 4 * 0.25 * 1
  CHECK(t.at(1, 2) == 0.25);
  CHECK(t.at(3, 2) == 0.25);
  CHECK(t.at(2, 1) == 0.25);
  CHECK(t.at(2, 3) == 0.25);
  CHECK(local_mass(t) == 1.0);
}

TEST_CASE("diffusion_step rejects unstable coefficients") {
  FieldTile t = make_tile(2, 2, 1.0);
  CHECK_THROWS_AS(diffusion_step(t, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(diffusion_step(t, 0.0), std::invalid_argument);
}

TEST_CASE("mirror halos make every wall flux-free") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> val(0.0, 10.0);
  FieldTile t = make_tile(6, 4, 0.0);
  for (auto& v : t.interior) v = val(rng);
  for (int dim : {0, 1})
    for (int dir : {-1, +1}) t.halo[halo_side(dim, dir)] = border(t, dim, dir);
  double before = local_mass(t);
  diffusion_step(t, 0.2);
  CHECK(std::abs(local_mass(t) - before) <= 1e-12 * std::abs(before));
}

TEST_CASE("local_mass matches hand-summed values") {
  CHECK(local_mass(make_tile(16, 16, 1.0)) == 256.0);
  CHECK(local_mass(make_tile(7, 3, 0.0)) == 0.0);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> val(-5.0, 5.0);
  FieldTile t = make_tile(9, 11, 0.0);
  for (auto& v : t.interior) v = val(rng);
  double expected = 0.0;
  for (int i = 0; i < t.rows; ++i)
    for (int j = 0; j < t.cols; ++j) expected += t.at(i, j);
  CHECK(local_mass(t) == expected);
}

TEST_CASE("fault-free stencil respects the discrete maximum principle") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> val(-2.0, 2.0);
  FieldTile t = make_tile(8, 8, 0.0);
  for (auto& v : t.interior) v = val(rng);
  double lo = *std::min_element(t.interior.begin(), t.interior.end());
  double hi = *std::max_element(t.interior.begin(), t.interior.end());
  for (int step = 0; step < 50; ++step) {
    for (int dim : {0, 1})
      for (int dir : {-1, +1})
        t.halo[halo_side(dim, dir)] = border(t, dim, dir);
    diffusion_step(t, 0.25);
    for (double v : t.interior) {
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
    }
  }
}

TEST_CASE("halo exchange delivers each neighbour's facing border") {
  for (bool periodic : {true, false}) {
    Rig rig(9, {}, {3, 3}, {static_cast<std::uint8_t>(periodic),
                            static_cast<std::uint8_t>(periodic)});
    std::vector<FieldTile> tiles(9);
    for (int r = 0; r < 9; ++r) {
      tiles[static_cast<std::size_t>(r)] = make_tile(4, 4, 0.0);
      int k = 0;
      for (auto& v : tiles[static_cast<std::size_t>(r)].interior)
        v = r * 100.0 + k++;
    }
    std::vector<FieldTile> original = tiles;
    for (int r = 0; r < 9; ++r) {
      spawn_body(rig.simulator, r, [&, r](sim::Proc p) -> Task<void> {
        ResilienceContext ctx(p, rig.topology, {Strategy::Mirror},
                              rig.internal);
        co_await exchange_halos(ctx, tiles[static_cast<std::size_t>(r)]);
      });
    }
    rig.simulator.run_iteration();
    for (int r = 0; r < 9; ++r) {
      for (int dim : {0, 1}) {
        for (int dir : {-1, +1}) {
          auto nb = rig.topology.neighbor(r, dim, dir);
          const auto& got =
              tiles[static_cast<std::size_t>(r)].halo[halo_side(dim, dir)];
          if (nb) {
            CHECK(got ==
                  border(original[static_cast<std::size_t>(*nb)], dim, -dir));
          } else {
            CHECK(got == border(original[static_cast<std::size_t>(r)], dim, dir));
          }
        }
      }
    }
  }
}

TEST_CASE("halo exchange handles self-wrapped and two-wide periodic lines") {
  // {1,4}: dim 0 wraps each tile onto itself; {2,4}: both dim-0 neighbours
  // are the same rank.
  for (auto dims : {std::vector<int>{1, 4}, std::vector<int>{2, 4}}) {
    int n = dims[0] * dims[1];
    Rig rig(n, {}, dims, {1, 1});
    std::vector<FieldTile> tiles(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      tiles[static_cast<std::size_t>(r)] = make_tile(3, 3, 0.0);
      int k = 0;
      for (auto& v : tiles[static_cast<std::size_t>(r)].interior)
        v = r * 10.0 + k++;
    }
    std::vector<FieldTile> original = tiles;
    for (int r = 0; r < n; ++r) {
      spawn_body(rig.simulator, r, [&, r](sim::Proc p) -> Task<void> {
        ResilienceContext ctx(p, rig.topology, {Strategy::Mirror},
                              rig.internal);
        co_await exchange_halos(ctx, tiles[static_cast<std::size_t>(r)]);
      });
    }
    rig.simulator.run_iteration();
    for (int r = 0; r < n; ++r) {
      for (int dim : {0, 1}) {
        for (int dir : {-1, +1}) {
          auto nb = rig.topology.neighbor(r, dim, dir);
          const auto& got =
              tiles[static_cast<std::size_t>(r)].halo[halo_side(dim, dir)];
          // the periodic wrap sources the own opposite border when the line
          // is a single tile wide
          int source = nb ? *nb : r;
          CHECK(got ==
                border(original[static_cast<std::size_t>(source)], dim, -dir));
        }
      }
    }
  }
}

// ---- particle wire format ----

TEST_CASE("particle packing writes the documented little-endian layout") {
  Particle p;
  p.id = 0x0102030405060708ULL;
  p.pos = {1.0, -2.0};
  p.vel = {0.5, 4.0};
  auto bytes = pack_particles(std::span<const Particle>(&p, 1));
  REQUIRE(bytes.size() == 48);
  // count prefix
  CHECK(std::to_integer<int>(bytes[0]) == 1);
  for (int i = 1; i < 8; ++i) CHECK(std::to_integer<int>(bytes[static_cast<std::size_t>(i)]) == 0);
  // id, little endian
  CHECK(std::to_integer<int>(bytes[8]) == 0x08);
  CHECK(std::to_integer<int>(bytes[15]) == 0x01);
  // pos[0] == 1.0 -> 0x3ff0000000000000
  CHECK(std::to_integer<int>(bytes[23]) == 0x3f);
  CHECK(std::to_integer<int>(bytes[22]) == 0xf0);
  auto back = unpack_particles(bytes);
  REQUIRE(back.size() == 1);
  CHECK(back[0] == p);
}

TEST_CASE("pack/unpack and payload conversion round-trip random particles") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> val(-1e6, 1e6);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Particle> ps(rng() % 20);
    for (auto& p : ps) {
      p.id = rng();
      p.pos = {val(rng), val(rng)};
      p.vel = {val(rng), val(rng)};
    }
    auto bytes = pack_particles(ps);
    CHECK(bytes.size() == 8 + 40 * ps.size());
    auto through_payload = bytes_from_payload(payload_from_bytes(bytes));
    CHECK(through_payload == bytes);
    CHECK(unpack_particles(through_payload) == ps);
  }
}

TEST_CASE("unpack rejects malformed payloads") {
  std::vector<std::byte> empty;
  CHECK_THROWS_AS(unpack_particles(empty), std::invalid_argument);
  auto bytes = pack_particles({});
  bytes.push_back(std::byte{0});
  CHECK_THROWS_AS(unpack_particles(bytes), std::invalid_argument);
}

// ---- movement and routing ----

TEST_CASE("positions wrap on periodic grids and reflect on walls") {
  Rig rig(9, {}, {3, 3}, {1, 0});
  TileGeometry geom{4, 4};
  Particle p;
  p.pos = {11.5, 11.5};
  p.vel = {1.0, 1.0};
  advance_position(p, rig.topology, geom);
  CHECK(p.pos[0] == doctest::Approx(0.5));   // wrapped at 12
  CHECK(p.pos[1] == doctest::Approx(11.5));  // reflected at the wall
  CHECK(p.vel[1] == -1.0);
}

TEST_CASE("routing keeps local particles and forwards departures") {
  Rig rig(9, {}, {3, 3}, {0, 0});
  TileGeometry geom{4, 4};
  auto live = topo::LivenessView::all_live(9);
  Particle stay, east;
  stay.id = 1;
  stay.pos = {1.0, 1.0};
  east.id = 2;
  east.pos = {1.0, 4.5};  // second tile column
  auto res = route_particles(rig.topology, live, 0, geom, {stay, east});
  CHECK(res.kept.size() == 1);
  CHECK(res.kept[0].id == 1);
  CHECK(res.outgoing[static_cast<std::size_t>(halo_side(1, +1))].size() == 1);
  CHECK(res.discarded == 0);
}

TEST_CASE("particles bound for a failed rank are discarded and counted") {
  Rig rig(9, {}, {3, 3}, {0, 0});
  TileGeometry geom{4, 4};
  auto live = topo::LivenessView::all_live(9);
  live.set_failed(rig.topology.rank_of({0, 1}));
  Particle p;
  p.pos = {1.0, 5.0};  // inside the failed tile
  auto res = route_particles(rig.topology, live, 0, geom, {p});
  CHECK(res.kept.empty());
  CHECK(res.discarded == 1);
}

TEST_CASE("a blocked straight path sends the particle around the failure") {
  Rig rig(9, {}, {3, 3}, {0, 0});
  TileGeometry geom{4, 4};
  auto live = topo::LivenessView::all_live(9);
  live.set_failed(rig.topology.rank_of({0, 1}));
  Particle p;
  p.pos = {1.0, 9.0};  // destination tile (0,2), due east of tile (0,0)
  auto res = route_particles(rig.topology, live, 0, geom, {p});
  CHECK(res.outgoing[static_cast<std::size_t>(halo_side(0, +1))].size() == 1);
  CHECK(res.discarded == 0);
}

namespace {

struct ParticleRun {
  std::vector<ParticleStore> stores;
  std::vector<ParticleIterationStats> stats;
};

void run_particle_iterations(Rig& rig, TileGeometry geom,
                             std::vector<ParticleStore>& stores,
                             std::vector<ParticleIterationStats>& stats,
                             int iterations) {
  for (int r = 0; r < rig.world.n_ranks(); ++r) {
    if (rig.world.is_failed(r)) continue;
    spawn_body(rig.simulator, r, [&, r, geom, iterations](sim::Proc p) -> Task<void> {
      ResilienceContext ctx(p, rig.topology, {Strategy::Mirror}, rig.internal);
      for (int it = 0; it < iterations; ++it) {
        auto s = co_await particle_iteration(ctx, geom,
                                             stores[static_cast<std::size_t>(r)]);
        stats[static_cast<std::size_t>(r)].sub_rounds += s.sub_rounds;
        stats[static_cast<std::size_t>(r)].discarded += s.discarded;
        co_await p.next_iteration();
      }
    });
  }
  for (int it = 0; it < iterations; ++it) {
    rig.simulator.advance_iteration();
    rig.simulator.run_iteration();
  }
}

}  // namespace

TEST_CASE("a diagonal tile move takes exactly two hops") {
  Rig rig(9, {}, {3, 3}, {1, 1});
  TileGeometry geom{4, 4};
  std::vector<ParticleStore> stores(9);
  std::vector<ParticleIterationStats> stats(9);
  Particle p;
  p.id = 7;
  p.pos = {3.5, 3.5};
  p.vel = {1.0, 1.0};
  stores[0].owned.push_back(p);
  run_particle_iterations(rig, geom, stores, stats, 1);
  int owner = rig.topology.rank_of({1, 1});
  CHECK(stores[static_cast<std::size_t>(owner)].owned.size() == 1);
  CHECK(stores[static_cast<std::size_t>(owner)].owned[0].id == 7);
  CHECK(stats[0].sub_rounds == 2);
}

TEST_CASE("stationary particles stay put with no traffic") {
  Rig rig(4, {}, {2, 2}, {1, 1});
  TileGeometry geom{4, 4};
  std::vector<ParticleStore> stores(4);
  std::vector<ParticleIterationStats> stats(4);
  for (int r = 0; r < 4; ++r) {
    Particle p;
    p.id = static_cast<std::uint64_t>(r);
    auto c = rig.topology.coords_of(r);
    p.pos = {c[0] * 4 + 1.0, c[1] * 4 + 1.0};
    stores[static_cast<std::size_t>(r)].owned.push_back(p);
  }
  run_particle_iterations(rig, geom, stores, stats, 3);
  for (int r = 0; r < 4; ++r) {
    CHECK(stores[static_cast<std::size_t>(r)].owned.size() == 1);
    CHECK(stores[static_cast<std::size_t>(r)].owned[0].id ==
          static_cast<std::uint64_t>(r));
    CHECK(stats[static_cast<std::size_t>(r)].sub_rounds == 0);
  }
}

TEST_CASE("the blocked bottom row is traversed around the failure in-sim") {
  Rig rig(9, {{1, 1}}, {3, 3}, {0, 0});  // rank (0,1) dies at iteration 1
  TileGeometry geom{4, 4};
  std::vector<ParticleStore> stores(9);
  std::vector<ParticleIterationStats> stats(9);
  Particle p;
  p.id = 42;
  p.pos = {1.0, 3.5};
  p.vel = {0.0, 5.0};  // lands in tile (0,2), due east
  stores[0].owned.push_back(p);
  run_particle_iterations(rig, geom, stores, stats, 1);
  int owner = rig.topology.rank_of({0, 2});
  REQUIRE(stores[static_cast<std::size_t>(owner)].owned.size() == 1);
  CHECK(stores[static_cast<std::size_t>(owner)].owned[0].id == 42);
  CHECK(stats[0].discarded == 0);
}

TEST_CASE("particles owned at positions of a failed region are dropped in transit") {
  Rig rig(9, {{4, 1}}, {3, 3}, {0, 0});  // centre tile dies
  TileGeometry geom{4, 4};
  std::vector<ParticleStore> stores(9);
  std::vector<ParticleIterationStats> stats(9);
  Particle p;
  p.id = 9;
  p.pos = {1.0, 1.0};
  p.vel = {4.0, 4.0};  // heads into the centre tile
  stores[0].owned.push_back(p);
  run_particle_iterations(rig, geom, stores, stats, 1);
  std::uint64_t discarded = 0, owned = 0;
  for (int r = 0; r < 9; ++r) {
    discarded += stats[static_cast<std::size_t>(r)].discarded;
    if (!rig.world.is_failed(r))
      owned += stores[static_cast<std::size_t>(r)].owned.size();
  }
  CHECK(discarded == 1);
  CHECK(owned == 0);
}
