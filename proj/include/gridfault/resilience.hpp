#pragma once

#include <string_view>

#include "gridfault/sim.hpp"
#include "gridfault/task.hpp"
#include "gridfault/topology.hpp"

namespace gridfault::resilience {

// How a halo exchange resolves when the partner process is gone.
enum class Strategy { DefaultFill, Mirror, Bridge, Interpolate };

Strategy strategy_from_name(std::string_view name);  // throws sim::InvalidConfig
std::string_view to_string(Strategy s);

struct StrategyConfig {
  Strategy kind = Strategy::Mirror;
  double fill_value = 0.0;
  double interp_weight = 0.5;  // weight of the own border in the blend
};

// A survivable fault could not be recovered by one repair + retry.
class UnrecoveredError : public std::runtime_error {
 public:
  explicit UnrecoveredError(const sim::CommError& e)
      : std::runtime_error("unrecovered communication error: " +
                           sim::to_string(e)),
        cause(e) {}
  sim::CommError cause;
};

class NoSurvivors : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-process interposition state. The application-visible rank and the
// topology mapping never change; communicator damage is absorbed by
// revoke/shrink/rebind on a private communicator copy.
class ResilienceContext {
 public:
  // `internal_comm` should be a duplicate of the topology's communicator,
  // created once for the whole group before the processes start (duplication
  // is collective); the application never touches it afterwards.
  ResilienceContext(sim::Proc proc, const topo::CartTopology& topology,
                    StrategyConfig strategy, sim::CommId internal_comm);

  int app_rank() const { return app_rank_; }
  int repair_count() const { return repairs_; }
  sim::CommId internal_comm() const { return comm_; }
  const topo::CartTopology& topology() const { return topo_; }
  const topo::LivenessView& liveness() const { return live_; }
  const StrategyConfig& strategy() const { return strat_; }
  sim::Proc proc() const { return proc_; }

  // Topology ranks currently known to be failed, ascending.
  std::vector<int> failed_ranks() const { return live_.failed(); }

  int comm_rank_of(int topo_rank) const;

  // Halo exchange with the neighbour along (dim, direction). A live partner
  // gives a true exchange; a failed one resolves by strategy: DefaultFill
  // returns fill values, Mirror returns the sent border, Bridge exchanges
  // with the next live rank along the dimension, Interpolate blends the own
  // border with the bridged one. Errors trigger one repair + retry.
  Task<sim::Payload> guarded_exchange(int dim, int direction,
                                      sim::Payload send);

  // Transparent collective sum over the (repaired) internal communicator.
  Task<double> allreduce_sum(double value);

  // Revoke + shrink + rebind + refresh the liveness view. The visible rank
  // and coordinates are untouched.
  Task<void> repair(sim::CommError cause);

  // Run `op(*this)` against the internal communicator; on a communication
  // error repair once and retry. The caller sees a value or an exception,
  // never a raw CommError from a survivable fault.
  template <class T, class F>
  Task<T> transparent_call(F op) {
    auto r = co_await op(*this);
    if (!r.ok()) {
      co_await repair(r.error());
      r = co_await op(*this);
      if (!r.ok()) throw UnrecoveredError(r.error());
    }
    co_return std::move(r.value());
  }

 private:
  sim::Proc proc_;
  topo::CartTopology topo_;
  topo::LivenessView live_;
  StrategyConfig strat_;
  sim::CommId comm_;
  int app_rank_ = -1;
  int repairs_ = 0;
};

}  // namespace gridfault::resilience
