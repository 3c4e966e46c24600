#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "gridfault/task.hpp"

namespace gridfault::sim {

using Rank = int;
using CommId = int;
using Payload = std::vector<double>;

struct FaultEvent {
  Rank rank = 0;
  long long at_iteration = 0;
};

// Modelled communication failure. Deadlock is reported when a blocking call
// can never be matched within the current scheduling round.
struct CommError {
  enum class Kind { ProcFailed, Revoked, Deadlock };
  Kind kind = Kind::Revoked;
  Rank peer = -1;  // world rank whose failure triggered ProcFailed
};

std::string to_string(const CommError& err);

template <class T>
class Result {
 public:
  Result(T value) : v_(std::in_place_index<0>, std::move(value)) {}
  Result(CommError err) : v_(std::in_place_index<1>, err) {}

  bool ok() const { return v_.index() == 0; }
  explicit operator bool() const { return ok(); }
  T& value() { return std::get<0>(v_); }
  const T& value() const { return std::get<0>(v_); }
  const CommError& error() const { return std::get<1>(v_); }

 private:
  std::variant<T, CommError> v_;
};

struct CommRecord {
  std::vector<Rank> members;  // world ranks; relative order survives shrink
  bool revoked = false;

  int size() const { return static_cast<int>(members.size()); }
  int rank_of(Rank world_rank) const;  // -1 if not a member
};

class InvalidConfig : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Liveness, iteration clock and communicator registry of one simulated run.
// Processes can only fail at iteration boundaries (advance_iteration) and a
// failed rank never comes back.
class World {
 public:
  World(int n_ranks, std::vector<FaultEvent> fault_plan, std::uint64_t seed);

  int n_ranks() const { return n_ranks_; }
  long long iteration() const { return iteration_; }
  std::uint64_t seed() const { return seed_; }

  bool is_failed(Rank r) const;
  long long failed_at(Rank r) const;  // -1 when live
  int live_count() const { return live_count_; }
  std::vector<Rank> live_ranks() const;

  CommId world_comm() const { return 0; }
  const CommRecord& comm(CommId id) const;
  int comm_count() const { return static_cast<int>(comms_.size()); }

  CommId make_comm(std::vector<Rank> members);  // subsequence of 0..n-1
  CommId dup_comm(CommId id);
  void revoke(CommId id);  // idempotent; Sim::revoke also interrupts pending ops
  bool is_revoked(CommId id) const { return comm(id).revoked; }

  // New communicator holding exactly the live members of `id`, in their
  // original relative order.
  CommId shrink(CommId id);

  // Advance the clock one step and fire every fault event that is now due
  // (at_iteration <= new iteration and not fired yet). Returns the ranks that
  // just failed, ascending.
  std::vector<Rank> advance_iteration();

 private:
  int n_ranks_;
  std::uint64_t seed_;
  long long iteration_ = 0;
  std::vector<long long> failed_at_;  // -1 = live
  int live_count_;
  std::vector<FaultEvent> plan_;  // sorted by (at_iteration, rank)
  std::size_t next_event_ = 0;
  std::vector<CommRecord> comms_;
};

class Sim;

struct SendRecvAwaitable;
struct AllreduceAwaitable;
struct ShrinkAwaitable;
struct BarrierAwaitable;

// Per-rank facade handed to simulated process programs. Cheap to copy; all
// communication goes through awaitables scheduled by the owning Sim.
class Proc {
 public:
  Proc() = default;

  Rank rank() const { return rank_; }
  World& world() const;

  SendRecvAwaitable sendrecv_replace(CommId comm, int peer_comm_rank,
                                     Payload buf) const;
  AllreduceAwaitable allreduce_sum(CommId comm, double value) const;
  ShrinkAwaitable shrink(CommId comm) const;
  BarrierAwaitable next_iteration() const;
  void revoke(CommId comm) const;

 private:
  friend class Sim;
  Proc(Sim* sim, Rank rank) : sim_(sim), rank_(rank) {}

  Sim* sim_ = nullptr;
  Rank rank_ = -1;
};

// Deterministic cooperative scheduler: per round, runnable processes take one
// step each in ascending rank order until everything is parked at the
// iteration boundary (or finished). Blocking calls rendezvous through the
// pending tables below; a quiescent round with unmatched calls fails them
// with Deadlock.
class Sim {
 public:
  explicit Sim(World& world);
  ~Sim();
  Sim(const Sim&) = delete;
  Sim& operator=(const Sim&) = delete;

  World& world() { return *world_; }
  Proc proc(Rank r) { return Proc(this, r); }

  template <class F>
  void spawn(Rank r, F&& make_program) {
    install_program(r, std::forward<F>(make_program)(proc(r)));
  }

  // World advance plus teardown of the programs of newly failed ranks.
  std::vector<Rank> advance_iteration();

  enum class RoundResult { AtBarrier, Finished };
  RoundResult run_iteration();

  void revoke(CommId comm);

  void set_trace(bool on) { trace_enabled_ = on; }
  const std::vector<std::string>& trace() const { return trace_; }

 private:
  friend struct SendRecvAwaitable;
  friend struct AllreduceAwaitable;
  friend struct ShrinkAwaitable;
  friend struct BarrierAwaitable;
  friend class Proc;

  struct ExchangeSide {
    Rank rank;
    SendRecvAwaitable* op;
    std::coroutine_handle<> cont;
  };
  struct ReduceMember {
    double value;
    AllreduceAwaitable* op;
    std::coroutine_handle<> cont;
  };
  struct ShrinkMember {
    ShrinkAwaitable* op;
    std::coroutine_handle<> cont;
  };
  struct ProgramSlot {
    std::optional<Task<void>> task;
    bool finished = false;
  };

  void install_program(Rank r, Task<void> task);
  void kill_program(Rank r);
  void release_barrier();
  bool flush_deadlocks();

  void post_sendrecv(SendRecvAwaitable* op, std::coroutine_handle<> h);
  void post_allreduce(AllreduceAwaitable* op, std::coroutine_handle<> h);
  void post_shrink(ShrinkAwaitable* op, std::coroutine_handle<> h);
  void post_barrier(BarrierAwaitable* op, std::coroutine_handle<> h);

  void complete_exchange_error(SendRecvAwaitable* op, std::coroutine_handle<> h,
                               CommError err);
  void try_complete_allreduce(CommId comm);
  void try_complete_shrink(CommId comm);
  void add_trace(std::string line);

  World* world_;

  using PairKey = std::tuple<CommId, Rank, Rank>;
  std::map<PairKey, ExchangeSide> pending_exchange_;
  std::map<CommId, std::map<Rank, ReduceMember>> pending_reduce_;
  std::map<CommId, std::map<Rank, ShrinkMember>> pending_shrink_;

  std::vector<std::coroutine_handle<>> runnable_;
  std::vector<std::coroutine_handle<>> at_barrier_;

  bool trace_enabled_ = false;
  std::vector<std::string> trace_;

  // Declared last so program frames are destroyed before the pending tables.
  std::vector<ProgramSlot> programs_;
};

// ---- Awaitables -----------------------------------------------------------
// All of them suspend unconditionally; results are delivered by the
// scheduler and the caller resumes on its next round-robin turn.

struct SendRecvAwaitable {
  Sim* sim;
  Rank self;
  CommId comm;
  int peer_comm_rank;
  Payload send;
  std::optional<Result<Payload>> result;

  bool await_ready() const noexcept { return false; }
  void await_suspend(std::coroutine_handle<> h) { sim->post_sendrecv(this, h); }
  Result<Payload> await_resume() { return std::move(*result); }
};

struct AllreduceAwaitable {
  Sim* sim;
  Rank self;
  CommId comm;
  double value;
  std::optional<Result<double>> result;

  bool await_ready() const noexcept { return false; }
  void await_suspend(std::coroutine_handle<> h) { sim->post_allreduce(this, h); }
  Result<double> await_resume() { return *result; }
};

struct ShrinkAwaitable {
  Sim* sim;
  Rank self;
  CommId comm;
  std::optional<CommId> result;

  bool await_ready() const noexcept { return false; }
  void await_suspend(std::coroutine_handle<> h) { sim->post_shrink(this, h); }
  CommId await_resume() { return *result; }
};

struct BarrierAwaitable {
  Sim* sim;
  Rank self;

  bool await_ready() const noexcept { return false; }
  void await_suspend(std::coroutine_handle<> h) { sim->post_barrier(this, h); }
  void await_resume() const noexcept {}
};

inline SendRecvAwaitable Proc::sendrecv_replace(CommId comm, int peer_comm_rank,
                                                Payload buf) const {
  return SendRecvAwaitable{sim_, rank_, comm, peer_comm_rank, std::move(buf), {}};
}

inline AllreduceAwaitable Proc::allreduce_sum(CommId comm, double value) const {
  return AllreduceAwaitable{sim_, rank_, comm, value, {}};
}

inline ShrinkAwaitable Proc::shrink(CommId comm) const {
  return ShrinkAwaitable{sim_, rank_, comm, {}};
}

inline BarrierAwaitable Proc::next_iteration() const {
  return BarrierAwaitable{sim_, rank_};
}

inline void Proc::revoke(CommId comm) const { sim_->revoke(comm); }

}  // namespace gridfault::sim
