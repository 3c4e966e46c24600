#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "gridfault/sim.hpp"

namespace gridfault::topo {

using Coords = std::vector<int>;

class TooFewProcesses : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CartTopology;

// Per-topology-rank liveness snapshot. Query functions take it explicitly so
// results are pure with respect to a fixed view.
class LivenessView {
 public:
  LivenessView() = default;
  static LivenessView all_live(int n);
  static LivenessView snapshot(const sim::World& world, const CartTopology& t);

  bool is_live(int topo_rank) const {
    return live_[static_cast<std::size_t>(topo_rank)] != 0;
  }
  void set_failed(int topo_rank) {
    if (live_[static_cast<std::size_t>(topo_rank)]) {
      live_[static_cast<std::size_t>(topo_rank)] = 0;
      --live_count_;
    }
  }
  int size() const { return static_cast<int>(live_.size()); }
  int live_count() const { return live_count_; }
  std::vector<int> failed() const;  // ascending topology ranks

 private:
  std::vector<std::uint8_t> live_;
  int live_count_ = 0;
};

struct Shift {
  std::optional<int> src;
  std::optional<int> dst;
};

// Cartesian process grid stored independently of any communicator. The
// rank<->coordinate mapping is fixed at creation (row major, last dimension
// varying fastest) and survives rebinding to repaired communicators.
class CartTopology {
 public:
  CartTopology(const sim::World& world, sim::CommId comm, std::vector<int> dims,
               std::vector<std::uint8_t> periods);

  int ndims() const { return static_cast<int>(dims_.size()); }
  const std::vector<int>& dims() const { return dims_; }
  bool periodic(int dim) const {
    return periods_[static_cast<std::size_t>(dim)] != 0;
  }
  int size() const { return size_; }

  sim::CommId bound_comm() const { return bound_comm_; }
  void rebind(const sim::World& world, sim::CommId new_comm);

  sim::Rank world_rank(int topo_rank) const {
    return topo_to_world_[static_cast<std::size_t>(topo_rank)];
  }
  int topo_rank_of_world(sim::Rank world_rank) const;  // -1 if none
  int comm_rank(const sim::World& world, int topo_rank) const;

  Coords coords_of(int topo_rank) const;
  int rank_of(const Coords& coords) const;  // throws std::out_of_range

  // Standard one-step neighbour; nullopt at a non-periodic edge or when a
  // periodic walk would come back to the origin.
  std::optional<int> neighbor(int topo_rank, int dim, int dir) const;

  // Liveness-aware shift: each of src/dst is the |disp|-th live rank walking
  // away from `topo_rank` along `dim` (dst in the sign of disp, src
  // opposite), skipping failed ranks. nullopt when the walk leaves a
  // non-periodic edge or wraps a whole period without meeting a live rank.
  Shift shift(const LivenessView& live, int topo_rank, int dim, int disp) const;

 private:
  std::optional<int> walk_live(const Coords& from, int dim, int dir,
                               int steps, const LivenessView& live) const;

  std::vector<int> dims_;
  std::vector<std::uint8_t> periods_;
  int size_ = 0;
  sim::CommId bound_comm_ = -1;
  std::vector<sim::Rank> topo_to_world_;
};

}  // namespace gridfault::topo
