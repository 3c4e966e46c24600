#include "gridfault/sim.hpp"

#include <algorithm>
#include <cstdio>
#include <utility>

namespace gridfault::sim {

std::string to_string(const CommError& err) {
  switch (err.kind) {
    case CommError::Kind::ProcFailed:
      return "ProcFailed(" + std::to_string(err.peer) + ")";
    case CommError::Kind::Revoked:
      return "Revoked";
    case CommError::Kind::Deadlock:
      return "Deadlock";
  }
  return "?";
}

int CommRecord::rank_of(Rank world_rank) const {
  auto it = std::find(members.begin(), members.end(), world_rank);
  return it == members.end() ? -1 : static_cast<int>(it - members.begin());
}

// ---- World ----------------------------------------------------------------

World::World(int n_ranks, std::vector<FaultEvent> fault_plan, std::uint64_t seed)
    : n_ranks_(n_ranks),
      seed_(seed),
      failed_at_(static_cast<std::size_t>(std::max(n_ranks, 0)), -1),
      live_count_(n_ranks),
      plan_(std::move(fault_plan)) {
  if (n_ranks < 1) throw InvalidConfig("world needs at least one rank");
  for (const auto& ev : plan_) {
    if (ev.rank < 0 || ev.rank >= n_ranks)
      throw InvalidConfig("fault event names rank " + std::to_string(ev.rank) +
                          " outside 0.." + std::to_string(n_ranks - 1));
    if (ev.at_iteration < 0)
      throw InvalidConfig("fault event with negative iteration");
  }
  std::sort(plan_.begin(), plan_.end(), [](const FaultEvent& a, const FaultEvent& b) {
    return std::tie(a.at_iteration, a.rank) < std::tie(b.at_iteration, b.rank);
  });
  CommRecord w;
  w.members.resize(static_cast<std::size_t>(n_ranks));
  for (int r = 0; r < n_ranks; ++r) w.members[static_cast<std::size_t>(r)] = r;
  comms_.push_back(std::move(w));
}

bool World::is_failed(Rank r) const {
  return failed_at_[static_cast<std::size_t>(r)] >= 0;
}

long long World::failed_at(Rank r) const {
  return failed_at_[static_cast<std::size_t>(r)];
}

std::vector<Rank> World::live_ranks() const {
  std::vector<Rank> out;
  out.reserve(static_cast<std::size_t>(live_count_));
  for (int r = 0; r < n_ranks_; ++r)
    if (!is_failed(r)) out.push_back(r);
  return out;
}

const CommRecord& World::comm(CommId id) const {
  if (id < 0 || id >= static_cast<CommId>(comms_.size()))
    throw std::logic_error("unknown communicator id");
  return comms_[static_cast<std::size_t>(id)];
}

CommId World::make_comm(std::vector<Rank> members) {
  Rank prev = -1;
  for (Rank r : members) {
    if (r < 0 || r >= n_ranks_ || r <= prev)
      throw std::invalid_argument(
          "communicator members must be a strictly increasing subsequence of "
          "world ranks");
    prev = r;
  }
  CommRecord rec;
  rec.members = std::move(members);
  comms_.push_back(std::move(rec));
  return static_cast<CommId>(comms_.size() - 1);
}

CommId World::dup_comm(CommId id) { return make_comm(comm(id).members); }

void World::revoke(CommId id) {
  comms_[static_cast<std::size_t>(id)].revoked = true;
  (void)comm(id);  // bounds check
}

CommId World::shrink(CommId id) {
  std::vector<Rank> live;
  for (Rank r : comm(id).members)
    if (!is_failed(r)) live.push_back(r);
  return make_comm(std::move(live));
}

std::vector<Rank> World::advance_iteration() {
  ++iteration_;
  std::vector<Rank> newly;
  while (next_event_ < plan_.size() &&
         plan_[next_event_].at_iteration <= iteration_) {
    Rank r = plan_[next_event_].rank;
    if (!is_failed(r)) {
      failed_at_[static_cast<std::size_t>(r)] = iteration_;
      --live_count_;
      newly.push_back(r);
    }
    ++next_event_;
  }
  std::sort(newly.begin(), newly.end());
  return newly;
}

// ---- Sim ------------------------------------------------------------------

Sim::Sim(World& world)
    : world_(&world),
      runnable_(static_cast<std::size_t>(world.n_ranks())),
      at_barrier_(static_cast<std::size_t>(world.n_ranks())),
      programs_(static_cast<std::size_t>(world.n_ranks())) {}

Sim::~Sim() = default;

World& Proc::world() const { return sim_->world(); }

void Sim::install_program(Rank r, Task<void> task) {
  auto& slot = programs_[static_cast<std::size_t>(r)];
  if (slot.task) throw std::logic_error("program already spawned for rank");
  if (world_->is_failed(r)) throw std::logic_error("cannot spawn a failed rank");
  slot.task.emplace(std::move(task));
  slot.finished = false;
  runnable_[static_cast<std::size_t>(r)] = slot.task->handle();
}

void Sim::kill_program(Rank r) {
  // Faults fire only between rounds, so a dying program can be parked at the
  // iteration boundary, still unstarted, or finished -- never inside a
  // pending operation.
  for (const auto& [key, side] : pending_exchange_)
    if (side.rank == r) throw std::logic_error("rank failed mid-exchange");
  for (const auto& [comm, members] : pending_reduce_)
    if (members.count(r)) throw std::logic_error("rank failed mid-collective");
  for (const auto& [comm, members] : pending_shrink_)
    if (members.count(r)) throw std::logic_error("rank failed mid-shrink");
  runnable_[static_cast<std::size_t>(r)] = nullptr;
  at_barrier_[static_cast<std::size_t>(r)] = nullptr;
  programs_[static_cast<std::size_t>(r)].task.reset();
  programs_[static_cast<std::size_t>(r)].finished = false;
}

std::vector<Rank> Sim::advance_iteration() {
  auto newly = world_->advance_iteration();
  for (Rank r : newly) kill_program(r);
  return newly;
}

void Sim::release_barrier() {
  for (auto& h : at_barrier_) {
    if (!h) continue;
    std::size_t idx = static_cast<std::size_t>(&h - at_barrier_.data());
    runnable_[idx] = std::exchange(h, nullptr);
  }
}

Sim::RoundResult Sim::run_iteration() {
  release_barrier();
  const int n = world_->n_ranks();
  for (;;) {
    bool stepped = false;
    for (Rank r = 0; r < n; ++r) {
      auto h = std::exchange(runnable_[static_cast<std::size_t>(r)], nullptr);
      if (!h) continue;
      stepped = true;
      h.resume();
      auto& slot = programs_[static_cast<std::size_t>(r)];
      if (slot.task && !slot.finished && slot.task->done()) {
        slot.finished = true;
        slot.task->rethrow_if_exception();
      }
    }
    bool any_runnable = false;
    for (const auto& h : runnable_) any_runnable |= static_cast<bool>(h);
    if (any_runnable) continue;

    int waiting = 0, parked = 0;
    for (Rank r = 0; r < n; ++r) {
      const auto& slot = programs_[static_cast<std::size_t>(r)];
      if (!slot.task || slot.finished) continue;
      ++waiting;
      if (at_barrier_[static_cast<std::size_t>(r)]) ++parked;
    }
    if (waiting == 0) return RoundResult::Finished;
    if (parked == waiting) return RoundResult::AtBarrier;
    if (stepped) continue;
    if (!flush_deadlocks())
      throw std::logic_error("simulation quiesced with unmatched operations");
  }
}

bool Sim::flush_deadlocks() {
  if (pending_exchange_.empty() && pending_reduce_.empty()) {
    if (!pending_shrink_.empty())
      throw std::logic_error("shrink cannot complete: a live member never joined");
    return false;
  }
  CommError dead{CommError::Kind::Deadlock, -1};
  for (auto& [key, side] : pending_exchange_) {
    side.op->result.emplace(dead);
    runnable_[static_cast<std::size_t>(side.rank)] = side.cont;
    add_trace("it=" + std::to_string(world_->iteration()) + " sendrecv comm=" +
              std::to_string(std::get<0>(key)) + " rank=" +
              std::to_string(side.rank) + " err=Deadlock");
  }
  pending_exchange_.clear();
  for (auto& [comm, members] : pending_reduce_) {
    for (auto& [rank, m] : members) {
      m.op->result.emplace(dead);
      runnable_[static_cast<std::size_t>(rank)] = m.cont;
    }
    add_trace("it=" + std::to_string(world_->iteration()) + " allreduce comm=" +
              std::to_string(comm) + " err=Deadlock");
  }
  pending_reduce_.clear();
  return true;
}

void Sim::revoke(CommId comm) {
  world_->revoke(comm);
  add_trace("it=" + std::to_string(world_->iteration()) + " revoke comm=" +
            std::to_string(comm));
  // Pending operations on the communicator complete with Revoked; shrink is
  // exempt, it is how repair finishes.
  CommError err{CommError::Kind::Revoked, -1};
  for (auto it = pending_exchange_.begin(); it != pending_exchange_.end();) {
    if (std::get<0>(it->first) == comm) {
      it->second.op->result.emplace(err);
      runnable_[static_cast<std::size_t>(it->second.rank)] = it->second.cont;
      it = pending_exchange_.erase(it);
    } else {
      ++it;
    }
  }
  auto rit = pending_reduce_.find(comm);
  if (rit != pending_reduce_.end()) {
    for (auto& [rank, m] : rit->second) {
      m.op->result.emplace(err);
      runnable_[static_cast<std::size_t>(rank)] = m.cont;
    }
    pending_reduce_.erase(rit);
  }
}

void Sim::complete_exchange_error(SendRecvAwaitable* op,
                                  std::coroutine_handle<> h, CommError err) {
  op->result.emplace(err);
  runnable_[static_cast<std::size_t>(op->self)] = h;
  add_trace("it=" + std::to_string(world_->iteration()) + " sendrecv comm=" +
            std::to_string(op->comm) + " rank=" + std::to_string(op->self) +
            " err=" + to_string(err));
}

void Sim::post_sendrecv(SendRecvAwaitable* op, std::coroutine_handle<> h) {
  const CommRecord& rec = world_->comm(op->comm);
  if (op->peer_comm_rank < 0 || op->peer_comm_rank >= rec.size())
    throw std::logic_error("sendrecv peer outside communicator");
  if (rec.rank_of(op->self) < 0)
    throw std::logic_error("sendrecv caller not a communicator member");
  const Rank peer = rec.members[static_cast<std::size_t>(op->peer_comm_rank)];

  if (rec.revoked) {  // Revoked dominates ProcFailed
    complete_exchange_error(op, h, CommError{CommError::Kind::Revoked, -1});
    return;
  }
  if (world_->is_failed(peer)) {
    complete_exchange_error(op, h, CommError{CommError::Kind::ProcFailed, peer});
    return;
  }
  if (peer == op->self) {  // self rendezvous: the call matches itself
    op->result.emplace(Payload(op->send));
    runnable_[static_cast<std::size_t>(op->self)] = h;
    return;
  }

  PairKey key{op->comm, std::min(op->self, peer), std::max(op->self, peer)};
  auto it = pending_exchange_.find(key);
  if (it == pending_exchange_.end()) {
    pending_exchange_.emplace(key, ExchangeSide{op->self, op, h});
    return;
  }
  ExchangeSide other = it->second;
  pending_exchange_.erase(it);
  if (other.rank == op->self)
    throw std::logic_error("rank posted a second exchange on an open pair");
  // Rendezvous: the buffers swap sides.
  other.op->result.emplace(Payload(op->send));
  op->result.emplace(Payload(std::move(other.op->send)));
  runnable_[static_cast<std::size_t>(other.rank)] = other.cont;
  runnable_[static_cast<std::size_t>(op->self)] = h;
  if (trace_enabled_) {
    double sa = 0, sb = 0;
    for (double v : op->send) sa += v;
    for (double v : other.op->send) sb += v;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "it=%lld sendrecv comm=%d pair=%d:%d sums=%.17g/%.17g",
                  world_->iteration(), op->comm, std::get<1>(key),
                  std::get<2>(key), sa, sb);
    trace_.emplace_back(buf);
  }
}

void Sim::post_allreduce(AllreduceAwaitable* op, std::coroutine_handle<> h) {
  const CommRecord& rec = world_->comm(op->comm);
  if (rec.rank_of(op->self) < 0)
    throw std::logic_error("allreduce caller not a communicator member");

  auto complete_error = [&](CommError err) {
    op->result.emplace(err);
    runnable_[static_cast<std::size_t>(op->self)] = h;
    add_trace("it=" + std::to_string(world_->iteration()) + " allreduce comm=" +
              std::to_string(op->comm) + " rank=" + std::to_string(op->self) +
              " err=" + to_string(err));
  };

  if (rec.revoked) {
    complete_error(CommError{CommError::Kind::Revoked, -1});
    return;
  }
  // The collective fails if any member failed, not just a partner; repair is
  // forced before the communicator is usable again.
  for (Rank m : rec.members) {
    if (world_->is_failed(m)) {
      complete_error(CommError{CommError::Kind::ProcFailed, m});
      return;
    }
  }
  pending_reduce_[op->comm][op->self] = ReduceMember{op->value, op, h};
  try_complete_allreduce(op->comm);
}

void Sim::try_complete_allreduce(CommId comm) {
  auto it = pending_reduce_.find(comm);
  if (it == pending_reduce_.end()) return;
  const CommRecord& rec = world_->comm(comm);
  if (static_cast<int>(it->second.size()) != rec.size()) return;
  double sum = 0.0;
  for (Rank m : rec.members) sum += it->second.at(m).value;
  for (Rank m : rec.members) {
    auto& member = it->second.at(m);
    member.op->result.emplace(sum);
    runnable_[static_cast<std::size_t>(m)] = member.cont;
  }
  if (trace_enabled_) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "it=%lld allreduce comm=%d sum=%.17g n=%d",
                  world_->iteration(), comm, sum, rec.size());
    trace_.emplace_back(buf);
  }
  pending_reduce_.erase(it);
}

void Sim::post_shrink(ShrinkAwaitable* op, std::coroutine_handle<> h) {
  const CommRecord& rec = world_->comm(op->comm);
  if (rec.rank_of(op->self) < 0)
    throw std::logic_error("shrink caller not a communicator member");
  pending_shrink_[op->comm][op->self] = ShrinkMember{op, h};
  try_complete_shrink(op->comm);
}

void Sim::try_complete_shrink(CommId comm) {
  auto it = pending_shrink_.find(comm);
  if (it == pending_shrink_.end()) return;
  int live_members = 0;
  for (Rank m : world_->comm(comm).members)
    if (!world_->is_failed(m)) ++live_members;
  if (static_cast<int>(it->second.size()) != live_members) return;
  CommId fresh = world_->shrink(comm);
  for (auto& [rank, member] : it->second) {
    member.op->result = fresh;
    runnable_[static_cast<std::size_t>(rank)] = member.cont;
  }
  add_trace("it=" + std::to_string(world_->iteration()) + " shrink comm=" +
            std::to_string(comm) + " -> " + std::to_string(fresh) + " size=" +
            std::to_string(world_->comm(fresh).size()));
  pending_shrink_.erase(it);
}

void Sim::post_barrier(BarrierAwaitable* op, std::coroutine_handle<> h) {
  at_barrier_[static_cast<std::size_t>(op->self)] = h;
}

void Sim::add_trace(std::string line) {
  if (trace_enabled_) trace_.push_back(std::move(line));
}

}  // namespace gridfault::sim
