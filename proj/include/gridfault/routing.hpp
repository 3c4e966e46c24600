#pragma once

#include "gridfault/topology.hpp"

namespace gridfault::routing {

struct Direction {
  int dim = 0;
  int sign = 1;  // -1 or +1

  bool operator==(const Direction&) const = default;
};

struct NextHop {
  enum class Kind { Step, Arrived, Unreachable };
  Kind kind = Kind::Arrived;
  Direction dir;  // valid when kind == Step

  static NextHop step(Direction d) { return {Kind::Step, d}; }
  static NextHop arrived() { return {Kind::Arrived, {}}; }
  static NextHop unreachable() { return {Kind::Unreachable, {}}; }
};

// Dimension-order forwarding: first dimension (ascending) where cur and dest
// differ, stepping the shortest way around on periodic dimensions (ties
// toward +1). Ignores liveness.
NextHop naive_next_hop(const topo::CartTopology& t, const topo::Coords& cur,
                       const topo::Coords& dest);

// First step of a minimal-length path over live ranks from cur to dest on the
// 2*ndims-neighbour grid graph. Unreachable when dest is failed or no live
// path exists. Only the direction is returned; the path is recomputed at
// every hop.
NextHop astar_next_hop(const topo::CartTopology& t,
                       const topo::LivenessView& live, const topo::Coords& cur,
                       const topo::Coords& dest);

// True when a failed rank lies inside the minimal axis-aligned bounding box
// (per-dimension shortest arcs, ties toward +1) spanned by cur and dest; the
// trigger for switching from naive forwarding to the path search.
bool needs_astar(const topo::CartTopology& t, const topo::LivenessView& live,
                 const topo::Coords& cur, const topo::Coords& dest);

// Shortest per-dimension distance respecting periodicity; the admissible
// heuristic of the path search.
int wrapped_manhattan(const topo::CartTopology& t, const topo::Coords& a,
                      const topo::Coords& b);

}  // namespace gridfault::routing
