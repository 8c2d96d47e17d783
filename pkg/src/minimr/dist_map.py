"""Node-partitioned map with local combining and an end-of-phase shuffle.

On each node a ``DistMap`` holds one main :class:`ConcurrentMap` for the
keys this node owns (``hash % n == rank``) and one pending map per remote
node.  Writes for remote keys merge into the pending map first, so a key
emitted a million times crosses the network once.  :meth:`DistMap.sync`
flushes caches, ships every pending map to its owner in a single
all-to-all round and merges what arrives into the main map in parallel.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Iterator

from . import _backend
from .hashing import as_key, hash_key
from .reducers import Reducer


@dataclass
class MapMetrics:
    emits: int = 0
    cache_flushes: int = 0
    shuffled_entries: int = 0
    shuffled_bytes: int = 0
    received_entries: int = 0
    # cumulative entries sent to each destination node
    shuffled_to: list[int] = field(default_factory=list)
    map_seconds: float = 0.0
    sync_seconds: float = 0.0
    shuffle_seconds: float = 0.0
    merge_seconds: float = 0.0
    # order of phase events, for checking that nothing is shuffled mid-map
    events: list[str] = field(default_factory=list)

    def to_json(self) -> bytes:
        return json.dumps(asdict(self)).encode()

    @classmethod
    def from_json(cls, data: bytes) -> "MapMetrics":
        return cls(**json.loads(data))


class DistMap:
    """Eventually consistent distributed map for associative updates.

    Reads (:meth:`get_local`, :meth:`local_entries`) see only the main map
    and are complete only after :meth:`sync`.
    """

    def __init__(
        self,
        cluster,
        num_threads: int = 1,
        num_segments: int = 16,
        segment_capacity: int = 256,
        *,
        pending_segments: int | None = None,
        cache_watermark: int | None = None,
        backend: str | None = None,
    ) -> None:
        self.cluster = cluster
        self.rank = cluster.rank
        self.size = cluster.size
        self.num_threads = num_threads
        self._impl = _backend.get(backend)
        self.backend = self._impl.NAME
        if pending_segments is None:
            pending_segments = max(1, num_segments // 2)
        self.main = self._impl.ConcurrentMap(num_segments, segment_capacity, num_threads, cache_watermark)
        self.pending: dict[int, Any] = {
            j: self._impl.ConcurrentMap(pending_segments, segment_capacity, num_threads, cache_watermark)
            for j in range(self.size)
            if j != self.rank
        }
        self.metrics = MapMetrics(shuffled_to=[0] * self.size)

    def _route(self) -> list:
        return [self.main if j == self.rank else self.pending[j] for j in range(self.size)]

    def owner_of(self, key) -> int:
        return hash_key(as_key(key)) % self.size

    def async_set(self, thread: int, key, value, reducer: Reducer) -> None:
        key = as_key(key)
        h = self._impl.hash_key(key)
        o = h % self.size
        target = self.main if o == self.rank else self.pending[o]
        target.async_set_hashed(thread, h, key, value, reducer)

    def emitter(self, thread: int, reducer: Reducer):
        """``async_set`` bound to one thread and reducer, as a fast callable.

        Supports ``emit(key, value)``, ``emit.many(keys, value)`` and
        ``emit.split(line, value, keep_empty)``.
        """
        return self._impl.Emitter(self._route(), thread, reducer)

    def periodic_sync(self, reducer: Reducer) -> None:
        """Extension point for mid-phase inter-node exchange; currently a no-op.

        Only end-of-phase synchronization is implemented.  A periodic
        variant would need its own collective schedule across nodes.
        """

    def sync(self, reducer: Reducer, merge_threads: int | None = None) -> None:
        """Collective: flush caches, shuffle pending maps to owners, merge."""
        m = self.metrics
        maps = self._route()
        # map counters are cumulative, so these are totals, not deltas
        m.emits = sum(cm.emits for cm in maps)
        m.cache_flushes = sum(cm.cache_flushes for cm in maps)

        t0 = time.perf_counter()
        for cm in maps:
            cm.sync(reducer)
        outgoing = [b""] * self.size
        sent = [0] * self.size
        for j, cm in self.pending.items():
            sent[j] = cm.size()
            outgoing[j] = cm.encode()
        t1 = time.perf_counter()
        m.events.append("shuffle")
        incoming = self.cluster.all_to_all(outgoing)
        t2 = time.perf_counter()
        remote = [p for j, p in enumerate(incoming) if j != self.rank and p]
        received = self.main.bulk_insert_encoded(remote, reducer, merge_threads or self.num_threads)
        for cm in self.pending.values():
            cm.clear()
        t3 = time.perf_counter()

        m.shuffled_entries += sum(sent)
        m.shuffled_to = [a + b for a, b in zip(m.shuffled_to, sent)]
        m.shuffled_bytes += sum(len(p) for j, p in enumerate(outgoing) if j != self.rank)
        m.received_entries += received
        m.sync_seconds += t1 - t0
        m.shuffle_seconds += t2 - t1
        m.merge_seconds += t3 - t2

    # -- reads -------------------------------------------------------------

    def get_local(self, key) -> Any | None:
        return self.main.get(key)

    def local_entries(self) -> list[tuple[bytes, Any]]:
        return self.main.entries()

    def local_size(self) -> int:
        return self.main.size()

    def pending_entries(self, node: int) -> list[tuple[bytes, Any]]:
        """Contents of the pending map for ``node`` (segments only)."""
        return self.pending[node].entries()

    def global_size(self) -> int:
        """Collective: total distinct keys across all nodes."""
        mine = self.main.size().to_bytes(8, "little")
        counts = self.cluster.all_to_all([mine] * self.size)
        return sum(int.from_bytes(c, "little") for c in counts)

    def gather_to_root(self, root: int = 0) -> list[tuple[bytes, Any]]:
        """Collective: every node's entries on ``root``; empty elsewhere."""
        outgoing = [b""] * self.size
        outgoing[root] = self.main.encode()
        incoming = self.cluster.all_to_all(outgoing)
        if self.rank != root:
            return []
        out: list[tuple[bytes, Any]] = []
        for payload in incoming:
            out.extend(self._impl.decode_entries(payload))
        return out

    def gather_metrics(self, root: int = 0) -> list[MapMetrics] | None:
        """Collective: every node's metrics on ``root`` (indexed by rank)."""
        outgoing = [b""] * self.size
        outgoing[root] = self.metrics.to_json()
        incoming = self.cluster.all_to_all(outgoing)
        if self.rank != root:
            return None
        return [MapMetrics.from_json(p) for p in incoming]

    def __iter__(self) -> Iterator[tuple[bytes, Any]]:
        return iter(self.local_entries())

