#include "gridfault/resilience.hpp"

namespace gridfault::resilience {

Strategy strategy_from_name(std::string_view name) {
  if (name == "default") return Strategy::DefaultFill;
  if (name == "mirror") return Strategy::Mirror;
  if (name == "bridge") return Strategy::Bridge;
  if (name == "interpolate") return Strategy::Interpolate;
  throw sim::InvalidConfig("unknown strategy: " + std::string(name));
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::DefaultFill:
      return "default";
    case Strategy::Mirror:
      return "mirror";
    case Strategy::Bridge:
      return "bridge";
    case Strategy::Interpolate:
      return "interpolate";
  }
  return "?";
}

ResilienceContext::ResilienceContext(sim::Proc proc,
                                     const topo::CartTopology& topology,
                                     StrategyConfig strategy,
                                     sim::CommId internal_comm)
    : proc_(proc), topo_(topology), strat_(strategy), comm_(internal_comm) {
  topo_.rebind(proc_.world(), comm_);
  live_ = topo::LivenessView::snapshot(proc_.world(), topo_);
  app_rank_ = topo_.topo_rank_of_world(proc_.rank());
  if (app_rank_ < 0)
    throw std::logic_error("process does not hold a topology coordinate");
}

int ResilienceContext::comm_rank_of(int topo_rank) const {
  int r = topo_.comm_rank(proc_.world(), topo_rank);
  if (r < 0)
    throw std::logic_error("topology rank missing from the internal communicator");
  return r;
}

Task<void> ResilienceContext::repair(sim::CommError) {
  proc_.revoke(comm_);
  sim::CommId fresh = co_await proc_.shrink(comm_);
  if (proc_.world().comm(fresh).size() == 0)
    throw NoSurvivors("repair left no live members");
  topo_.rebind(proc_.world(), fresh);
  live_ = topo::LivenessView::snapshot(proc_.world(), topo_);
  comm_ = fresh;
  ++repairs_;
}

Task<sim::Payload> ResilienceContext::guarded_exchange(int dim, int direction,
                                                       sim::Payload send) {
  for (int attempt = 0;; ++attempt) {
    // Resolve the partner under the current liveness view; after a repair the
    // loop comes back here and resolves again.
    auto geom = topo_.neighbor(app_rank_, dim, direction);
    std::optional<int> peer;
    bool blend = false;
    if (geom && live_.is_live(*geom)) {
      peer = geom;
    } else if (geom) {  // neighbour failed
      switch (strat_.kind) {
        case Strategy::DefaultFill:
          co_return sim::Payload(send.size(), strat_.fill_value);
        case Strategy::Mirror:
          co_return send;
        case Strategy::Bridge:
        case Strategy::Interpolate:
          peer = topo_.shift(live_, app_rank_, dim, direction).dst;
          if (!peer) co_return send;  // nobody left to bridge to
          blend = strat_.kind == Strategy::Interpolate;
          break;
      }
    } else {
      co_return send;  // grid edge: zero-flux wall
    }

    auto r = co_await proc_.sendrecv_replace(comm_, comm_rank_of(*peer),
                                             sim::Payload(send));
    if (r.ok()) {
      if (!blend) co_return std::move(r.value());
      const sim::Payload& recv = r.value();
      if (recv.size() != send.size())
        throw std::logic_error("exchanged borders differ in length");
      sim::Payload out(send.size());
      const double w = strat_.interp_weight;
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = w * send[i] + (1.0 - w) * recv[i];
      co_return out;
    }
    if (attempt >= 1) throw UnrecoveredError(r.error());
    co_await repair(r.error());
  }
}

Task<double> ResilienceContext::allreduce_sum(double value) {
  return transparent_call<double>([value](ResilienceContext& self) {
    return self.proc().allreduce_sum(self.internal_comm(), value);
  });
}

}  // namespace gridfault::resilience
