#include "gridfault/workloads.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace gridfault::workloads {

namespace {

void append(std::vector<Particle>& into, std::vector<Particle> from) {
  into.insert(into.end(), std::make_move_iterator(from.begin()),
              std::make_move_iterator(from.end()));
}

}  // namespace

FieldTile make_tile(int rows, int cols, double value) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("empty tile");
  FieldTile t;
  t.rows = rows;
  t.cols = cols;
  t.interior.assign(static_cast<std::size_t>(rows) * cols, value);
  t.halo[halo_side(0, -1)].assign(static_cast<std::size_t>(cols), value);
  t.halo[halo_side(0, +1)].assign(static_cast<std::size_t>(cols), value);
  t.halo[halo_side(1, -1)].assign(static_cast<std::size_t>(rows), value);
  t.halo[halo_side(1, +1)].assign(static_cast<std::size_t>(rows), value);
  return t;
}

std::vector<double> border(const FieldTile& t, int dim, int dir) {
  std::vector<double> out;
  if (dim == 0) {
    int i = dir < 0 ? 0 : t.rows - 1;
    out.resize(static_cast<std::size_t>(t.cols));
    for (int j = 0; j < t.cols; ++j) out[static_cast<std::size_t>(j)] = t.at(i, j);
  } else {
    int j = dir < 0 ? 0 : t.cols - 1;
    out.resize(static_cast<std::size_t>(t.rows));
    for (int i = 0; i < t.rows; ++i) out[static_cast<std::size_t>(i)] = t.at(i, j);
  }
  return out;
}

double local_mass(const FieldTile& t) {
  return std::accumulate(t.interior.begin(), t.interior.end(), 0.0);
}

void diffusion_step(FieldTile& t, double alpha) {
  if (!(alpha > 0.0 && alpha <= 0.25))
    throw std::invalid_argument("diffusion alpha must be in (0, 0.25]");
  std::vector<double> next(t.interior.size());
  for (int i = 0; i < t.rows; ++i) {
    for (int j = 0; j < t.cols; ++j) {
      double c = t.at(i, j);
      double up = i > 0 ? t.at(i - 1, j)
                        : t.halo[halo_side(0, -1)][static_cast<std::size_t>(j)];
      double down = i < t.rows - 1
                        ? t.at(i + 1, j)
                        : t.halo[halo_side(0, +1)][static_cast<std::size_t>(j)];
      double left = j > 0 ? t.at(i, j - 1)
                          : t.halo[halo_side(1, -1)][static_cast<std::size_t>(i)];
      double right = j < t.cols - 1
                         ? t.at(i, j + 1)
                         : t.halo[halo_side(1, +1)][static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(i * t.cols + j)] =
          c + alpha * (up + down + left + right - 4.0 * c);
    }
  }
  t.interior = std::move(next);
}

std::array<int, 2> direction_order(const topo::CartTopology& t,
                                   const topo::LivenessView& live, int rank,
                                   int dim) {
  topo::Coords c = t.coords_of(rank);
  int idx = 0;
  for (int x = 0; x < c[static_cast<std::size_t>(dim)]; ++x) {
    topo::Coords probe = c;
    probe[static_cast<std::size_t>(dim)] = x;
    if (live.is_live(t.rank_of(probe))) ++idx;
  }
  return idx % 2 == 0 ? std::array<int, 2>{-1, +1} : std::array<int, 2>{+1, -1};
}

namespace {

template <class ExchangeFn>
Task<void> exchange_halos_impl(const topo::CartTopology& t,
                               const topo::LivenessView& ordering, int self,
                               FieldTile& tile, ExchangeFn fn) {
  for (int dim = 0; dim < 2; ++dim) {
    if (t.dims()[static_cast<std::size_t>(dim)] == 1 && t.periodic(dim)) {
      // The line wraps onto itself: halos are the own opposite borders.
      tile.halo[halo_side(dim, -1)] = border(tile, dim, +1);
      tile.halo[halo_side(dim, +1)] = border(tile, dim, -1);
      continue;
    }
    for (int dir : direction_order(t, ordering, self, dim)) {
      sim::Payload received = co_await fn(dim, dir, border(tile, dim, dir));
      std::size_t want =
          static_cast<std::size_t>(dim == 0 ? tile.cols : tile.rows);
      if (received.size() != want)
        throw std::logic_error("halo length mismatch");
      tile.halo[halo_side(dim, dir)] = std::move(received);
    }
  }
}

Task<sim::Payload> raw_exchange_one(sim::Proc proc, const topo::CartTopology& t,
                                    sim::CommId comm, int self_topo, int dim,
                                    int dir, sim::Payload send) {
  auto peer = t.neighbor(self_topo, dim, dir);
  if (!peer) co_return send;  // grid edge
  int peer_comm_rank = proc.world().comm(comm).rank_of(t.world_rank(*peer));
  auto r = co_await proc.sendrecv_replace(comm, peer_comm_rank, std::move(send));
  if (!r.ok())
    throw std::runtime_error("bare halo exchange failed: " +
                             sim::to_string(r.error()));
  co_return std::move(r.value());
}

}  // namespace

Task<void> exchange_halos(resilience::ResilienceContext& ctx, FieldTile& tile) {
  return exchange_halos_impl(
      ctx.topology(), ctx.liveness(), ctx.app_rank(), tile,
      [&ctx](int dim, int dir, sim::Payload b) {
        return ctx.guarded_exchange(dim, dir, std::move(b));
      });
}

Task<void> exchange_halos_raw(sim::Proc proc, const topo::CartTopology& t,
                              sim::CommId comm, FieldTile& tile) {
  // The all-live ordering view must outlive the exchange, so it lives in this
  // frame.
  auto all = topo::LivenessView::all_live(t.size());
  int self = t.topo_rank_of_world(proc.rank());
  co_await exchange_halos_impl(
      t, all, self, tile,
      [proc, &t, comm, self](int dim, int dir, sim::Payload b) {
        return raw_exchange_one(proc, t, comm, self, dim, dir, std::move(b));
      });
}

// ---- Particle wire format ---------------------------------------------------

namespace {

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k)
    out.push_back(static_cast<std::byte>((v >> (8 * k)) & 0xff));
}

std::uint64_t get_u64(std::span<const std::byte> in, std::size_t at) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k)
    v |= static_cast<std::uint64_t>(std::to_integer<unsigned>(in[at + k]))
         << (8 * k);
  return v;
}

}  // namespace

std::vector<std::byte> pack_particles(std::span<const Particle> ps) {
  std::vector<std::byte> out;
  out.reserve(8 + 40 * ps.size());
  put_u64(out, ps.size());
  for (const Particle& p : ps) {
    put_u64(out, p.id);
    put_u64(out, std::bit_cast<std::uint64_t>(p.pos[0]));
    put_u64(out, std::bit_cast<std::uint64_t>(p.pos[1]));
    put_u64(out, std::bit_cast<std::uint64_t>(p.vel[0]));
    put_u64(out, std::bit_cast<std::uint64_t>(p.vel[1]));
  }
  return out;
}

std::vector<Particle> unpack_particles(std::span<const std::byte> bytes) {
  if (bytes.size() < 8)
    throw std::invalid_argument("particle payload shorter than its length prefix");
  std::uint64_t n = get_u64(bytes, 0);
  if (bytes.size() != 8 + 40 * n)
    throw std::invalid_argument("particle payload length mismatch");
  std::vector<Particle> out(n);
  std::size_t at = 8;
  for (Particle& p : out) {
    p.id = get_u64(bytes, at);
    p.pos[0] = std::bit_cast<double>(get_u64(bytes, at + 8));
    p.pos[1] = std::bit_cast<double>(get_u64(bytes, at + 16));
    p.vel[0] = std::bit_cast<double>(get_u64(bytes, at + 24));
    p.vel[1] = std::bit_cast<double>(get_u64(bytes, at + 32));
    at += 40;
  }
  return out;
}

sim::Payload payload_from_bytes(std::span<const std::byte> bytes) {
  if (bytes.size() % 8 != 0)
    throw std::invalid_argument("byte payload not word aligned");
  sim::Payload out(bytes.size() / 8);
  for (std::size_t w = 0; w < out.size(); ++w)
    out[w] = std::bit_cast<double>(get_u64(bytes, 8 * w));
  return out;
}

std::vector<std::byte> bytes_from_payload(const sim::Payload& payload) {
  std::vector<std::byte> out;
  out.reserve(payload.size() * 8);
  for (double d : payload) put_u64(out, std::bit_cast<std::uint64_t>(d));
  return out;
}

// ---- Particle movement ------------------------------------------------------

topo::Coords tile_coords_of(const topo::CartTopology& t,
                            const TileGeometry& geom,
                            const std::array<double, 2>& pos) {
  topo::Coords c(2);
  for (int d = 0; d < 2; ++d) {
    int tiles = t.dims()[static_cast<std::size_t>(d)];
    int idx = static_cast<int>(std::floor(pos[static_cast<std::size_t>(d)] /
                                          geom.cells(d)));
    c[static_cast<std::size_t>(d)] = std::clamp(idx, 0, tiles - 1);
  }
  return c;
}

void advance_position(Particle& p, const topo::CartTopology& t,
                      const TileGeometry& geom) {
  for (int d = 0; d < 2; ++d) {
    auto sz = static_cast<std::size_t>(d);
    double extent = static_cast<double>(t.dims()[sz]) * geom.cells(d);
    double x = p.pos[sz] + p.vel[sz];
    if (t.periodic(d)) {
      x = std::fmod(x, extent);
      if (x < 0) x += extent;
      if (x >= extent) x = 0;  // fmod may round up to the extent
    } else {
      while (x < 0 || x > extent) {
        x = x < 0 ? -x : 2 * extent - x;
        p.vel[sz] = -p.vel[sz];
      }
    }
    p.pos[sz] = x;
  }
}

// ---- Routing ----------------------------------------------------------------

RouteResult route_particles(const topo::CartTopology& t,
                            const topo::LivenessView& live, int self_rank,
                            const TileGeometry& geom,
                            std::vector<Particle> in) {
  RouteResult res;
  topo::Coords my = t.coords_of(self_rank);
  for (Particle& p : in) {
    topo::Coords dest = tile_coords_of(t, geom, p.pos);
    if (dest == my) {
      res.kept.push_back(p);
      continue;
    }
    if (!live.is_live(t.rank_of(dest))) {
      ++res.discarded;  // no recipient left for this region
      continue;
    }
    routing::NextHop hop = routing::needs_astar(t, live, my, dest)
                               ? routing::astar_next_hop(t, live, my, dest)
                               : routing::naive_next_hop(t, my, dest);
    switch (hop.kind) {
      case routing::NextHop::Kind::Step:
        res.outgoing[static_cast<std::size_t>(
                         halo_side(hop.dir.dim, hop.dir.sign))]
            .push_back(p);
        break;
      case routing::NextHop::Kind::Unreachable:
        ++res.discarded;
        break;
      case routing::NextHop::Kind::Arrived:
        res.kept.push_back(p);
        break;
    }
  }
  return res;
}

RouteResult advect_particles(const resilience::ResilienceContext& ctx,
                             const TileGeometry& geom,
                             std::vector<Particle> owned) {
  for (Particle& p : owned) advance_position(p, ctx.topology(), geom);
  return route_particles(ctx.topology(), ctx.liveness(), ctx.app_rank(), geom,
                         std::move(owned));
}

// ---- Exchange ----------------------------------------------------------------

namespace {

// Particle channels carry data only between live geometric neighbours; if the
// peer turns out dead (repair happened between routing and sending), the
// payload is handed back for rerouting instead of applying a field strategy.
Task<std::optional<sim::Payload>> exchange_if_live(
    resilience::ResilienceContext& ctx, int peer, const sim::Payload& payload) {
  for (int attempt = 0;; ++attempt) {
    if (!ctx.liveness().is_live(peer)) co_return std::nullopt;
    auto r = co_await ctx.proc().sendrecv_replace(
        ctx.internal_comm(), ctx.comm_rank_of(peer), sim::Payload(payload));
    if (r.ok()) co_return std::move(r.value());
    if (attempt >= 1) throw resilience::UnrecoveredError(r.error());
    co_await ctx.repair(r.error());
  }
}

}  // namespace

Task<SubRound> exchange_particles(resilience::ResilienceContext& ctx,
                                  std::array<std::vector<Particle>, 4> outgoing) {
  SubRound result;
  const topo::CartTopology& t = ctx.topology();
  for (int dim = 0; dim < 2; ++dim) {
    if (t.dims()[static_cast<std::size_t>(dim)] == 1 && t.periodic(dim)) {
      // Self-wrapped line: anything "outgoing" here is already home.
      for (int dir : {-1, +1})
        append(result.incoming,
               std::move(outgoing[static_cast<std::size_t>(halo_side(dim, dir))]));
      continue;
    }
    for (int dir : direction_order(t, ctx.liveness(), ctx.app_rank(), dim)) {
      auto side = static_cast<std::size_t>(halo_side(dim, dir));
      std::vector<Particle> toward = std::move(outgoing[side]);
      auto peer = t.neighbor(ctx.app_rank(), dim, dir);
      if (!peer || !ctx.liveness().is_live(*peer)) {
        append(result.stranded, std::move(toward));
        continue;
      }
      auto recv = co_await exchange_if_live(
          ctx, *peer, payload_from_bytes(pack_particles(toward)));
      if (!recv) {
        append(result.stranded, std::move(toward));
        continue;
      }
      append(result.incoming, unpack_particles(bytes_from_payload(*recv)));
    }
  }
  co_return result;
}

Task<ParticleIterationStats> particle_iteration(
    resilience::ResilienceContext& ctx, const TileGeometry& geom,
    ParticleStore& store) {
  ParticleIterationStats st;
  RouteResult routed = advect_particles(ctx, geom, std::move(store.owned));
  store.owned = std::move(routed.kept);
  st.discarded += routed.discarded;
  auto outgoing = std::move(routed.outgoing);

  const topo::CartTopology& t = ctx.topology();
  int diameter = 0;
  for (int d = 0; d < t.ndims(); ++d) {
    auto sz = static_cast<std::size_t>(d);
    diameter += t.periodic(d) ? t.dims()[sz] / 2 : t.dims()[sz] - 1;
  }
  const int cap = 4 * std::max(1, diameter);

  for (int round = 0;; ++round) {
    std::size_t out_count = 0;
    for (const auto& lane : outgoing) out_count += lane.size();
    int repairs_before = ctx.repair_count();
    double in_transit =
        co_await ctx.allreduce_sum(static_cast<double>(out_count));
    if (ctx.repair_count() != repairs_before) {
      // Liveness changed under us; routing decisions are stale, redo them.
      std::vector<Particle> pending;
      for (auto& lane : outgoing) append(pending, std::move(lane));
      outgoing = {};
      RouteResult re = route_particles(ctx.topology(), ctx.liveness(),
                                       ctx.app_rank(), geom, std::move(pending));
      append(store.owned, std::move(re.kept));
      st.discarded += re.discarded;
      outgoing = std::move(re.outgoing);
    }
    if (in_transit == 0.0) break;
    if (round >= cap)
      throw std::runtime_error(
          "particle routing livelock: transit failed to drain within " +
          std::to_string(cap) + " sub-rounds");
    SubRound sub = co_await exchange_particles(ctx, std::move(outgoing));
    outgoing = {};
    std::vector<Particle> to_route = std::move(sub.incoming);
    append(to_route, std::move(sub.stranded));
    RouteResult re = route_particles(ctx.topology(), ctx.liveness(),
                                     ctx.app_rank(), geom, std::move(to_route));
    append(store.owned, std::move(re.kept));
    st.discarded += re.discarded;
    outgoing = std::move(re.outgoing);
    ++st.sub_rounds;
  }
  store.discarded += st.discarded;
  co_return st;
}

}  // namespace gridfault::workloads
