#pragma once

// World + scheduler + topology + internal communicator bundle used by the
// resilience-layer test cases.

#include <vector>

#include "gridfault/sim.hpp"
#include "gridfault/topology.hpp"

namespace gridfault::test_support {

struct Rig {
  sim::World world;
  sim::Sim simulator;
  topo::CartTopology topology;
  sim::CommId internal;

  Rig(int n, std::vector<sim::FaultEvent> plan, std::vector<int> dims,
      std::vector<std::uint8_t> periods)
      : world(n, std::move(plan), 0),
        simulator(world),
        topology(world, 0, std::move(dims), std::move(periods)),
        internal(world.dup_comm(0)) {}
};

}  // namespace gridfault::test_support
