#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridfault/experiment.hpp"
#include "gridfault/resilience.hpp"
#include "gridfault/routing.hpp"
#include "gridfault/sim.hpp"
#include "gridfault/topology.hpp"
#include "gridfault/workloads.hpp"

namespace py = pybind11;
using namespace gridfault;
namespace xpt = gridfault::experiment;

namespace {

topo::LivenessView view_of(const topo::CartTopology& t,
                           const std::vector<int>& failed) {
  auto v = topo::LivenessView::all_live(t.size());
  for (int f : failed) v.set_failed(f);
  return v;
}

py::object hop_to_py(const routing::NextHop& hop) {
  switch (hop.kind) {
    case routing::NextHop::Kind::Arrived:
      return py::str("arrived");
    case routing::NextHop::Kind::Unreachable:
      return py::str("unreachable");
    case routing::NextHop::Kind::Step:
      return py::make_tuple(hop.dir.dim, hop.dir.sign);
  }
  return py::none();
}

py::dict record_to_py(const xpt::MetricsRecord& r) {
  py::dict d;
  d["iteration"] = r.iteration;
  d["global_mass"] = r.global_mass;
  d["particle_count"] = r.particle_count;
  d["discarded_count"] = r.discarded_count;
  d["live_ranks"] = r.live_ranks;
  d["probe_metric"] = r.probe_metric;
  d["l2_vs_reference"] = r.l2_vs_reference;
  d["wall_time_ms"] = r.wall_time_ms;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "deterministic simulator of fault-resilient stencil execution";

  py::register_exception<sim::InvalidConfig>(m, "InvalidConfig");
  py::register_exception<xpt::SchemaMismatch>(m, "SchemaMismatch");

  py::class_<sim::World>(m, "World")
      .def(py::init([](int n_ranks,
                       std::vector<std::pair<int, long long>> fault_plan,
                       std::uint64_t seed) {
             std::vector<sim::FaultEvent> plan;
             plan.reserve(fault_plan.size());
             for (auto [rank, at] : fault_plan) plan.push_back({rank, at});
             return sim::World(n_ranks, std::move(plan), seed);
           }),
           py::arg("n_ranks"),
           py::arg("fault_plan") = std::vector<std::pair<int, long long>>{},
           py::arg("seed") = 0)
      .def_property_readonly("n_ranks", &sim::World::n_ranks)
      .def_property_readonly("iteration", &sim::World::iteration)
      .def_property_readonly("live_count", &sim::World::live_count)
      .def("advance_iteration", &sim::World::advance_iteration)
      .def("is_failed", &sim::World::is_failed, py::arg("rank"))
      .def("failed_at", &sim::World::failed_at, py::arg("rank"))
      .def("live_ranks", &sim::World::live_ranks)
      .def("world_comm", &sim::World::world_comm)
      .def("comm_members",
           [](const sim::World& w, int comm) { return w.comm(comm).members; })
      .def("is_revoked", &sim::World::is_revoked, py::arg("comm"))
      .def("revoke", &sim::World::revoke, py::arg("comm"))
      .def("shrink", &sim::World::shrink, py::arg("comm"))
      .def("dup_comm", &sim::World::dup_comm, py::arg("comm"))
      .def("make_comm", &sim::World::make_comm, py::arg("members"));

  py::class_<topo::CartTopology>(m, "CartTopology")
      .def_property_readonly("size", &topo::CartTopology::size)
      .def_property_readonly("ndims", &topo::CartTopology::ndims)
      .def_property_readonly("dims", &topo::CartTopology::dims)
      .def("rank_to_coords", &topo::CartTopology::coords_of, py::arg("rank"))
      .def("coords_to_rank", &topo::CartTopology::rank_of, py::arg("coords"))
      .def(
          "neighbor",
          [](const topo::CartTopology& t, int rank, int dim, int dir) {
            return t.neighbor(rank, dim, dir);
          },
          py::arg("rank"), py::arg("dim"), py::arg("dir"))
      .def(
          "shift",
          [](const topo::CartTopology& t, int rank, int dim, int disp,
             const std::vector<int>& failed) {
            auto s = t.shift(view_of(t, failed), rank, dim, disp);
            return py::make_tuple(s.src, s.dst);
          },
          py::arg("rank"), py::arg("dim"), py::arg("disp"),
          py::arg("failed") = std::vector<int>{});

  m.def(
      "cart_create",
      [](const sim::World& w, int comm, std::vector<int> dims,
         std::vector<bool> periods) {
        std::vector<std::uint8_t> p(periods.begin(), periods.end());
        return topo::CartTopology(w, comm, std::move(dims), std::move(p));
      },
      py::arg("world"), py::arg("comm"), py::arg("dims"), py::arg("periods"));

  m.def(
      "naive_next_hop",
      [](const topo::CartTopology& t, topo::Coords cur, topo::Coords dest) {
        return hop_to_py(routing::naive_next_hop(t, cur, dest));
      },
      py::arg("topology"), py::arg("cur"), py::arg("dest"));
  m.def(
      "astar_next_hop",
      [](const topo::CartTopology& t, topo::Coords cur, topo::Coords dest,
         const std::vector<int>& failed) {
        return hop_to_py(
            routing::astar_next_hop(t, view_of(t, failed), cur, dest));
      },
      py::arg("topology"), py::arg("cur"), py::arg("dest"),
      py::arg("failed") = std::vector<int>{});
  m.def(
      "needs_astar",
      [](const topo::CartTopology& t, topo::Coords cur, topo::Coords dest,
         const std::vector<int>& failed) {
        return routing::needs_astar(t, view_of(t, failed), cur, dest);
      },
      py::arg("topology"), py::arg("cur"), py::arg("dest"),
      py::arg("failed") = std::vector<int>{});

  m.def(
      "run",
      [](const std::string& config,
         const std::map<std::string, std::string>& overrides,
         const std::vector<std::string>& faults) {
        xpt::RunConfig cfg;
        if (!config.empty()) cfg = xpt::load_config(config);
        for (const auto& [key, value] : overrides)
          xpt::apply_override(cfg, key, value);
        for (const auto& f : faults) xpt::apply_override(cfg, "fault", f);
        xpt::RunResult res = xpt::run_experiment(cfg);
        py::dict out;
        out["outcome"] = std::string(xpt::to_string(res.outcome));
        out["last_iteration"] = res.last_iteration;
        out["initial_particles"] = res.initial_particles;
        out["output_path"] = cfg.output_path;
        py::list records;
        for (const auto& r : res.records) records.append(record_to_py(r));
        out["records"] = records;
        return out;
      },
      py::arg("config") = "",
      py::arg("overrides") = std::map<std::string, std::string>{},
      py::arg("faults") = std::vector<std::string>{});

  m.def(
      "compare",
      [](const std::string& run_csv, const std::string& reference_csv,
         double tolerance) {
        xpt::CompareReport rep =
            xpt::compare_runs(run_csv, reference_csv, tolerance);
        py::dict out;
        out["common_iterations"] = rep.common_iterations;
        out["text"] = xpt::format_report(rep);
        py::dict cols;
        for (const auto& c : rep.columns) {
          py::dict col;
          col["diverged"] = c.diverged;
          col["iteration"] = c.diverged ? py::cast(c.iteration) : py::none();
          cols[c.column.c_str()] = col;
        }
        out["columns"] = cols;
        return out;
      },
      py::arg("run_csv"), py::arg("reference_csv"),
      py::arg("tolerance") = 1e-9);

  m.def(
      "stop_criterion",
      [](double initial_total, double current_total, double live_fraction,
         double threshold) {
        xpt::ConservationLedger ledger;
        ledger.initial_total = initial_total;
        ledger.current_total = current_total;
        return xpt::stop_criterion(ledger, live_fraction, threshold);
      },
      py::arg("initial_total"), py::arg("current_total"),
      py::arg("live_fraction"), py::arg("threshold") = 0.05);

  m.def("pack_particles", [](const std::vector<std::tuple<
                                 std::uint64_t, double, double, double,
                                 double>>& particles) {
    std::vector<workloads::Particle> ps;
    ps.reserve(particles.size());
    for (const auto& [id, p0, p1, v0, v1] : particles)
      ps.push_back({id, {p0, p1}, {v0, v1}});
    auto bytes = workloads::pack_particles(ps);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()),
                     bytes.size());
  });
  m.def("unpack_particles", [](const py::bytes& raw) {
    std::string buf(raw);
    std::vector<std::byte> bytes(buf.size());
    std::memcpy(bytes.data(), buf.data(), buf.size());
    auto ps = workloads::unpack_particles(bytes);
    std::vector<std::tuple<std::uint64_t, double, double, double, double>> out;
    out.reserve(ps.size());
    for (const auto& p : ps)
      out.emplace_back(p.id, p.pos[0], p.pos[1], p.vel[0], p.vel[1]);
    return out;
  });

  m.attr("CSV_HEADER") = xpt::csv_header();
}
