"""Distributed ranges and the MapReduce driver.

``mapreduce(range_, mapper, reducer, target)`` is collective: every node
calls it with the same range.  Each node takes its share of the indices,
runs ``mapper(index, emit)`` on them from the target's worker threads
(pulling chunks from a shared cursor), waits at a barrier, then syncs the
target map so every key ends up reduced on its owner.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

from .reducers import SUM, MAX, Reducer, reducer_max, reducer_sum

__all__ = [
    "DistRange",
    "mapreduce",
    "node_partition",
    "thread_schedule",
    "Reducer",
    "SUM",
    "MAX",
    "reducer_sum",
    "reducer_max",
]

Mapper = Callable[[int, Callable[..., None]], None]


@dataclass(frozen=True)
class DistRange:
    """Indices ``start, start + step, ...`` strictly below ``end``."""

    start: int
    end: int
    step: int = 1

    def __post_init__(self) -> None:
        if self.step < 1:
            raise ValueError(f"step must be positive, got {self.step}")

    def __len__(self) -> int:
        return len(range(self.start, self.end, self.step))

    def indices(self) -> range:
        return range(self.start, self.end, self.step)

    def mapreduce(self, mapper: Mapper, reducer: Reducer, target, **kwargs) -> None:
        mapreduce(self, mapper, reducer, target, **kwargs)


def node_partition(range_: DistRange, node: int, n: int, scheme: str = "cyclic") -> range:
    """Indices of ``range_`` handled by ``node`` out of ``n``.

    ``"block"`` gives node ``k`` the ordinal positions
    ``[k * ceil(L/n), min((k+1) * ceil(L/n), L))``.  ``"cyclic"`` (the
    default) gives it every ``n``-th position starting at ``k``; a corpus
    replicated ``r`` times then hands each node the same base lines ``r``
    times over whenever the base line count is a multiple of ``n``.
    """
    if not 0 <= node < n:
        raise ValueError(f"node {node} outside cluster of size {n}")
    idx = range_.indices()
    if scheme == "cyclic":
        return idx[node::n]
    if scheme == "block":
        block = -(-len(idx) // n)
        return idx[node * block:(node + 1) * block]
    raise ValueError(f"unknown partition scheme {scheme!r}")


def thread_schedule(
    indices: Sequence[int],
    num_threads: int,
    body: Callable[[int, Sequence[int]], None],
    chunk: int = 64,
) -> list[list[Sequence[int]]]:
    """Run ``body(thread, chunk_of_indices)`` over ``indices`` on worker threads.

    Threads claim consecutive chunks from a shared cursor until none remain.
    Returns the chunks each thread processed.  The first exception raised
    by ``body`` stops all workers and is re-raised.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    if num_threads < 1:
        raise ValueError("num_threads must be >= 1")
    total = len(indices)
    cursor = 0
    lock = threading.Lock()
    log: list[list[Sequence[int]]] = [[] for _ in range(num_threads)]
    failed: list[BaseException] = []

    def worker(tid: int) -> None:
        nonlocal cursor
        while not failed:
            with lock:
                lo = cursor
                cursor += chunk
            if lo >= total:
                return
            part = indices[lo:lo + chunk]
            try:
                body(tid, part)
            except BaseException as exc:
                failed.append(exc)
                return
            log[tid].append(part)

    if num_threads == 1:
        worker(0)
    else:
        threads = [threading.Thread(target=worker, args=(t,)) for t in range(num_threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if failed:
        raise failed[0]
    return log


def mapreduce(
    range_: DistRange,
    mapper: Mapper,
    reducer: Reducer,
    target,
    *,
    chunk: int = 64,
    partition: str = "cyclic",
) -> None:
    """Map every index of ``range_`` into ``target`` and reduce by key.

    ``emit`` inside the mapper is ``target.async_set`` bound to the calling
    worker thread; it also accepts ``emit.many(keys, value)`` and
    ``emit.split(line, value, keep_empty)``.
    """
    cluster = target.cluster
    metrics = target.metrics
    mine = node_partition(range_, cluster.rank, cluster.size, partition)
    emitters = [target.emitter(t, reducer) for t in range(target.num_threads)]

    def body(tid: int, part: Sequence[int]) -> None:
        emit = emitters[tid]
        for i in part:
            mapper(i, emit)

    metrics.events.append("map")
    t0 = time.perf_counter()
    try:
        thread_schedule(mine, target.num_threads, body, chunk)
    except BaseException:
        abort = getattr(cluster, "abort", None)
        if abort is not None:
            abort()
        raise
    metrics.map_seconds += time.perf_counter() - t0
    metrics.events.append("barrier")
    cluster.barrier()
    target.sync(reducer)

