#include "gridfault/routing.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <limits>
#include <queue>
#include <tuple>

namespace gridfault::routing {

namespace {

struct Arc {
  int dir = 1;  // step sign of the shortest way around; ties toward +1
  int len = 0;  // number of unit steps
};

Arc shortest_arc(int from, int to, int extent, bool periodic) {
  if (from == to) return {1, 0};
  if (!periodic) return {to > from ? 1 : -1, std::abs(to - from)};
  int fwd = ((to - from) % extent + extent) % extent;
  int bwd = extent - fwd;
  if (fwd <= bwd) return {1, fwd};
  return {-1, bwd};
}

bool on_arc(int x, int from, const Arc& arc, int extent, bool periodic) {
  long long off;
  if (periodic) {
    off = (static_cast<long long>(x - from) * arc.dir % extent + extent) % extent;
  } else {
    off = static_cast<long long>(x - from) * arc.dir;
    if (off < 0) return false;
  }
  return off <= arc.len;
}

}  // namespace

int wrapped_manhattan(const topo::CartTopology& t, const topo::Coords& a,
                      const topo::Coords& b) {
  int sum = 0;
  for (int d = 0; d < t.ndims(); ++d) {
    auto sz = static_cast<std::size_t>(d);
    sum += shortest_arc(a[sz], b[sz], t.dims()[sz], t.periodic(d)).len;
  }
  return sum;
}

NextHop naive_next_hop(const topo::CartTopology& t, const topo::Coords& cur,
                       const topo::Coords& dest) {
  for (int d = 0; d < t.ndims(); ++d) {
    auto sz = static_cast<std::size_t>(d);
    Arc arc = shortest_arc(cur[sz], dest[sz], t.dims()[sz], t.periodic(d));
    if (arc.len > 0) return NextHop::step({d, arc.dir});
  }
  return NextHop::arrived();
}

bool needs_astar(const topo::CartTopology& t, const topo::LivenessView& live,
                 const topo::Coords& cur, const topo::Coords& dest) {
  if (live.live_count() == live.size()) return false;
  std::vector<Arc> arcs(static_cast<std::size_t>(t.ndims()));
  for (int d = 0; d < t.ndims(); ++d) {
    auto sz = static_cast<std::size_t>(d);
    arcs[sz] = shortest_arc(cur[sz], dest[sz], t.dims()[sz], t.periodic(d));
  }
  for (int f : live.failed()) {
    topo::Coords fc = t.coords_of(f);
    bool inside = true;
    for (int d = 0; d < t.ndims() && inside; ++d) {
      auto sz = static_cast<std::size_t>(d);
      inside = on_arc(fc[sz], cur[sz], arcs[sz], t.dims()[sz], t.periodic(d));
    }
    if (inside) return true;
  }
  return false;
}

NextHop astar_next_hop(const topo::CartTopology& t,
                       const topo::LivenessView& live, const topo::Coords& cur,
                       const topo::Coords& dest) {
  const int cur_rank = t.rank_of(cur);
  const int dest_rank = t.rank_of(dest);
  if (cur_rank == dest_rank) return NextHop::arrived();
  if (!live.is_live(dest_rank)) return NextHop::unreachable();

  // A* rooted at the destination so exact distances are known for the start
  // cell and all of its neighbours; the grid is tiny, so the open list is
  // drained completely.
  const int n = t.size();
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  auto heuristic = [&](int rank) {
    return wrapped_manhattan(t, t.coords_of(rank), cur);
  };

  using Entry = std::tuple<int, int, int, int>;  // f, h, g, rank
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  dist[static_cast<std::size_t>(dest_rank)] = 0;
  open.emplace(heuristic(dest_rank), heuristic(dest_rank), 0, dest_rank);
  while (!open.empty()) {
    auto [f, h, g, rank] = open.top();
    open.pop();
    if (g != dist[static_cast<std::size_t>(rank)]) continue;  // stale entry
    for (int d = 0; d < t.ndims(); ++d) {
      for (int sign : {-1, +1}) {
        auto nb = t.neighbor(rank, d, sign);
        if (!nb || !live.is_live(*nb)) continue;
        int ng = g + 1;
        auto idx = static_cast<std::size_t>(*nb);
        if (dist[idx] >= 0 && dist[idx] <= ng) continue;
        dist[idx] = ng;
        open.emplace(ng + heuristic(*nb), heuristic(*nb), ng, *nb);
      }
    }
  }

  const int here = dist[static_cast<std::size_t>(cur_rank)];
  if (here < 0) return NextHop::unreachable();

  // Among the first steps that stay on some shortest path, prefer lower
  // heuristic-to-destination, then lower dimension, then -1 before +1.
  std::optional<Direction> best;
  int best_h = std::numeric_limits<int>::max();
  for (int d = 0; d < t.ndims(); ++d) {
    for (int sign : {-1, +1}) {
      auto nb = t.neighbor(cur_rank, d, sign);
      if (!nb || !live.is_live(*nb)) continue;
      auto idx = static_cast<std::size_t>(*nb);
      if (dist[idx] != here - 1) continue;
      int h = wrapped_manhattan(t, t.coords_of(*nb), dest);
      if (h < best_h) {
        best_h = h;
        best = Direction{d, sign};
      }
    }
  }
  if (!best) return NextHop::unreachable();  // not reachable in practice
  return NextHop::step(*best);
}

}  // namespace gridfault::routing
