#include "gridfault/topology.hpp"

#include <algorithm>

namespace gridfault::topo {

LivenessView LivenessView::all_live(int n) {
  LivenessView v;
  v.live_.assign(static_cast<std::size_t>(n), 1);
  v.live_count_ = n;
  return v;
}

LivenessView LivenessView::snapshot(const sim::World& world,
                                    const CartTopology& t) {
  LivenessView v;
  v.live_.resize(static_cast<std::size_t>(t.size()));
  v.live_count_ = 0;
  for (int r = 0; r < t.size(); ++r) {
    bool live = !world.is_failed(t.world_rank(r));
    v.live_[static_cast<std::size_t>(r)] = live ? 1 : 0;
    if (live) ++v.live_count_;
  }
  return v;
}

std::vector<int> LivenessView::failed() const {
  std::vector<int> out;
  for (int r = 0; r < size(); ++r)
    if (!is_live(r)) out.push_back(r);
  return out;
}

CartTopology::CartTopology(const sim::World& world, sim::CommId comm,
                           std::vector<int> dims,
                           std::vector<std::uint8_t> periods)
    : dims_(std::move(dims)), periods_(std::move(periods)) {
  if (dims_.empty() || periods_.size() != dims_.size())
    throw std::invalid_argument("dims/periods size mismatch");
  long long product = 1;
  for (int d : dims_) {
    if (d < 1) throw std::invalid_argument("dimension sizes must be >= 1");
    product *= d;
  }
  const sim::CommRecord& rec = world.comm(comm);
  if (product > rec.size())
    throw TooFewProcesses("grid of " + std::to_string(product) +
                          " ranks on a communicator of " +
                          std::to_string(rec.size()));
  size_ = static_cast<int>(product);
  bound_comm_ = comm;
  topo_to_world_.assign(rec.members.begin(),
                        rec.members.begin() + size_);
}

int CartTopology::topo_rank_of_world(sim::Rank world_rank) const {
  auto it =
      std::find(topo_to_world_.begin(), topo_to_world_.end(), world_rank);
  return it == topo_to_world_.end()
             ? -1
             : static_cast<int>(it - topo_to_world_.begin());
}

int CartTopology::comm_rank(const sim::World& world, int topo_rank) const {
  return world.comm(bound_comm_).rank_of(world_rank(topo_rank));
}

void CartTopology::rebind(const sim::World& world, sim::CommId new_comm) {
  const sim::CommRecord& rec = world.comm(new_comm);
  for (int t = 0; t < size_; ++t) {
    sim::Rank w = world_rank(t);
    if (!world.is_failed(w) && rec.rank_of(w) < 0)
      throw std::invalid_argument(
          "rebind: live topology rank missing from communicator");
  }
  bound_comm_ = new_comm;
}

Coords CartTopology::coords_of(int topo_rank) const {
  if (topo_rank < 0 || topo_rank >= size_)
    throw std::out_of_range("topology rank out of range");
  Coords c(dims_.size());
  int rest = topo_rank;
  for (int d = ndims() - 1; d >= 0; --d) {
    c[static_cast<std::size_t>(d)] = rest % dims_[static_cast<std::size_t>(d)];
    rest /= dims_[static_cast<std::size_t>(d)];
  }
  return c;
}

int CartTopology::rank_of(const Coords& coords) const {
  if (static_cast<int>(coords.size()) != ndims())
    throw std::out_of_range("coordinate arity mismatch");
  int rank = 0;
  for (int d = 0; d < ndims(); ++d) {
    int extent = dims_[static_cast<std::size_t>(d)];
    long long x = coords[static_cast<std::size_t>(d)];
    if (periodic(d)) {
      x = ((x % extent) + extent) % extent;
    } else if (x < 0 || x >= extent) {
      throw std::out_of_range("coordinate outside a non-periodic dimension");
    }
    rank = rank * extent + static_cast<int>(x);
  }
  return rank;
}

std::optional<int> CartTopology::neighbor(int topo_rank, int dim,
                                          int dir) const {
  Coords c = coords_of(topo_rank);
  int extent = dims_[static_cast<std::size_t>(dim)];
  long long x = c[static_cast<std::size_t>(dim)] + dir;
  if (periodic(dim)) {
    int m = static_cast<int>(((x % extent) + extent) % extent);
    if (m == c[static_cast<std::size_t>(dim)]) return std::nullopt;
    c[static_cast<std::size_t>(dim)] = m;
  } else {
    if (x < 0 || x >= extent) return std::nullopt;
    c[static_cast<std::size_t>(dim)] = static_cast<int>(x);
  }
  return rank_of(c);
}

std::optional<int> CartTopology::walk_live(const Coords& from, int dim, int dir,
                                           int steps,
                                           const LivenessView& live) const {
  // One scan along the line, at most a single period, skipping failed ranks;
  // the walk never comes back around to the origin.
  int extent = dims_[static_cast<std::size_t>(dim)];
  Coords c = from;
  int hits = 0;
  for (int step = 1; step < extent; ++step) {
    long long x = static_cast<long long>(from[static_cast<std::size_t>(dim)]) +
                  static_cast<long long>(dir) * step;
    if (periodic(dim)) {
      x = ((x % extent) + extent) % extent;
    } else if (x < 0 || x >= extent) {
      return std::nullopt;
    }
    c[static_cast<std::size_t>(dim)] = static_cast<int>(x);
    int r = rank_of(c);
    if (live.is_live(r) && ++hits == steps) return r;
  }
  return std::nullopt;
}

Shift CartTopology::shift(const LivenessView& live, int topo_rank, int dim,
                          int disp) const {
  if (dim < 0 || dim >= ndims()) throw std::out_of_range("dimension index");
  if (disp == 0) throw std::invalid_argument("shift displacement must be nonzero");
  int steps = disp > 0 ? disp : -disp;
  int dir = disp > 0 ? 1 : -1;
  Coords origin = coords_of(topo_rank);
  return Shift{walk_live(origin, dim, -dir, steps, live),
               walk_live(origin, dim, dir, steps, live)};
}

}  // namespace gridfault::topo
