"""Deterministic simulator of fault-resilient MPI-style stencil execution."""

from gridfault._core import (
    CSV_HEADER,
    CartTopology,
    InvalidConfig,
    SchemaMismatch,
    World,
    astar_next_hop,
    cart_create,
    compare,
    naive_next_hop,
    needs_astar,
    pack_particles,
    run,
    stop_criterion,
    unpack_particles,
)

__all__ = [
    "CSV_HEADER",
    "CartTopology",
    "InvalidConfig",
    "SchemaMismatch",
    "World",
    "astar_next_hop",
    "cart_create",
    "compare",
    "naive_next_hop",
    "needs_astar",
    "pack_particles",
    "run",
    "stop_criterion",
    "unpack_particles",
]

__version__ = "0.1.0"
