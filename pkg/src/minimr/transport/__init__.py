"""Cluster transports: node identity, barrier and all-to-all exchange.

Every transport exposes ``rank``, ``size``, ``rounds`` (collective calls
made so far), ``all_to_all(outgoing)`` and ``barrier()``.  A barrier is an
all-to-all of empty payloads, so round numbers stay aligned across both
kinds of call.
"""
from __future__ import annotations

from typing import Protocol, Sequence

from ..errors import TransportError
from .local import LocalCluster, spawn_local_cluster
from .sockets import SocketCluster, free_endpoints, parse_endpoints, read_endpoints, run_socket_cluster


class Cluster(Protocol):
    rank: int
    size: int
    rounds: int

    def all_to_all(self, outgoing: Sequence[bytes], timeout: float | None = None) -> list[bytes]: ...

    def barrier(self, timeout: float | None = None) -> None: ...


__all__ = [
    "Cluster",
    "LocalCluster",
    "SocketCluster",
    "TransportError",
    "free_endpoints",
    "parse_endpoints",
    "read_endpoints",
    "run_socket_cluster",
    "spawn_local_cluster",
]
