"""Single-node segmented concurrent map.

The map is split into a data portion (``S`` linear-probing segments, each
owning one contiguous range of the 64-bit hash space behind its own
latch) and a thread cache portion (one private probing table per worker).
A writer try-acquires its segment latch; if another thread holds it, the
entry is merged into the writer's cache instead, so writers never block.
Caches are folded back into the segments at :meth:`sync`.

Two interchangeable implementations exist, a compiled core and a pure
Python one; :func:`create` picks the active one unless told otherwise.
"""
from __future__ import annotations

from . import _backend
from .hashing import hash_key, owner, segment_of, segment_range
from .reducers import MAX, SUM, Reducer

ConcurrentMap = _backend.active.ConcurrentMap
ProbingTable = _backend.active.ProbingTable

__all__ = [
    "ConcurrentMap",
    "ProbingTable",
    "Reducer",
    "SUM",
    "MAX",
    "create",
    "emitter",
    "hash_key",
    "owner",
    "segment_of",
    "segment_range",
]


def create(
    num_segments: int,
    segment_capacity: int,
    num_threads: int,
    *,
    cache_watermark: int | None = None,
    backend: str | None = None,
):
    """Empty map with ``num_segments`` equal hash ranges and one cache per thread.

    Raises :class:`~minimr.errors.ConfigError` for non-power-of-two
    segment counts or capacities.
    """
    impl = _backend.get(backend)
    return impl.ConcurrentMap(num_segments, segment_capacity, num_threads, cache_watermark)


def emitter(maps, thread: int, reducer: Reducer):
    """Writer bound to ``thread`` that routes each key to ``maps[hash % len(maps)]``.

    The returned callable takes ``(key, value)`` and also offers
    ``many(keys, value)`` and ``split(line, value, keep_empty)``.
    """
    backend = maps[0].backend
    return _backend.get(backend).Emitter(maps, thread, reducer)
