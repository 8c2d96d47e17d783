"""Pure-Python backend: linear-probing tables and the segmented map.

Mirrors the compiled core exactly (same hash, same slot layout, same
counters) so either can stand in for the other.
"""
from __future__ import annotations

import threading
from typing import Any, Iterable, Sequence

from .codec import decode_entries, encode_entries
from .errors import ConfigError
from .hashing import as_key, hash_key, is_power_of_two, segment_range
from .reducers import Reducer

NAME = "python"


class ProbingTable:
    """Open-addressing table with linear probing and reducer merge on match.

    Load factor stays at or below 0.7; an insert that would exceed it first
    doubles the capacity and rehashes.  There is no deletion, so no
    tombstones.
    """

    __slots__ = ("capacity", "occupancy", "_hashes", "_keys", "_values")

    def __init__(self, capacity: int = 16) -> None:
        if capacity < 2 or not is_power_of_two(capacity):
            raise ConfigError(f"table capacity must be a power of two >= 2, got {capacity}")
        self.capacity = capacity
        self.occupancy = 0
        self._hashes: list[int | None] = [None] * capacity
        self._keys: list[bytes | None] = [None] * capacity
        self._values: list[Any] = [None] * capacity

    def __len__(self) -> int:
        return self.occupancy

    def _find(self, h: int, key: bytes) -> int:
        mask = self.capacity - 1
        hashes, keys = self._hashes, self._keys
        j = h & mask
        while hashes[j] is not None:
            if hashes[j] == h and keys[j] == key:
                return j
            j = (j + 1) & mask
        return j

    def _grow(self) -> None:
        old = list(zip(self._hashes, self._keys, self._values))
        self.capacity *= 2
        mask = self.capacity - 1
        self._hashes = hashes = [None] * self.capacity
        self._keys = keys = [None] * self.capacity
        self._values = values = [None] * self.capacity
        for h, k, v in old:
            if h is None:
                continue
            j = h & mask
            while hashes[j] is not None:
                j = (j + 1) & mask
            hashes[j], keys[j], values[j] = h, k, v

    def insert(self, h: int, key: bytes, value: Any, reducer: Reducer) -> None:
        j = self._find(h, key)
        if self._hashes[j] is not None:
            self._values[j] = reducer.combine(self._values[j], value)
            return
        if 10 * (self.occupancy + 1) > 7 * self.capacity:
            self._grow()
            j = self._find(h, key)
        self._hashes[j] = h
        self._keys[j] = key
        self._values[j] = value
        self.occupancy += 1

    def get(self, h: int, key: bytes) -> Any | None:
        j = self._find(h, key)
        return self._values[j] if self._hashes[j] is not None else None

    def slots(self) -> list[tuple[int, int, bytes, Any]]:
        """Occupied slots as ``(index, hash, key, value)``."""
        return [
            (i, h, self._keys[i], self._values[i])
            for i, h in enumerate(self._hashes)
            if h is not None
        ]

    def items(self) -> list[tuple[int, bytes, Any]]:
        return [(h, k, v) for _, h, k, v in self.slots()]

    def clear(self) -> None:
        if self.occupancy:
            self._hashes = [None] * self.capacity
            self._keys = [None] * self.capacity
            self._values = [None] * self.capacity
        self.occupancy = 0


class _Segment:
    __slots__ = ("table", "latch")

    def __init__(self, capacity: int) -> None:
        self.table = ProbingTable(capacity)
        self.latch = threading.Lock()


class ConcurrentMap:
    """Segmented map whose writers never wait on a held segment latch.

    A writer that finds its target segment latched merges the entry into
    its own thread cache instead; caches are folded into the segments by
    :meth:`sync`.  With ``cache_watermark`` set, a cache that grows past
    that many entries is drained immediately, taking segment latches with
    a blocking acquire.
    """

    backend = NAME

    def __init__(
        self,
        num_segments: int = 16,
        segment_capacity: int = 256,
        num_threads: int = 1,
        cache_watermark: int | None = None,
    ) -> None:
        if not is_power_of_two(num_segments):
            raise ConfigError(f"num_segments must be a power of two, got {num_segments}")
        if segment_capacity < 2 or not is_power_of_two(segment_capacity):
            raise ConfigError(
                f"segment_capacity must be a power of two >= 2, got {segment_capacity}"
            )
        if num_threads < 1:
            raise ConfigError(f"num_threads must be >= 1, got {num_threads}")
        if cache_watermark is not None and cache_watermark < 1:
            raise ConfigError("cache_watermark must be >= 1 or None")
        self.num_segments = num_segments
        self.segment_capacity = segment_capacity
        self.num_threads = num_threads
        self.cache_watermark = cache_watermark
        self._shift = 64 - (num_segments.bit_length() - 1)
        self._segments = [_Segment(segment_capacity) for _ in range(num_segments)]
        self._caches = [ProbingTable(16) for _ in range(num_threads)]
        self._emits = [0] * num_threads
        self._flushes = [0] * num_threads

    def _segment_index(self, h: int) -> int:
        return h >> self._shift if self._shift < 64 else 0

    # -- writers ---------------------------------------------------------

    def async_set_hashed(self, thread: int, h: int, key: bytes, value, reducer: Reducer) -> None:
        self._emits[thread] += 1
        seg = self._segments[h >> self._shift if self._shift < 64 else 0]
        if seg.latch.acquire(False):
            try:
                seg.table.insert(h, key, value, reducer)
            finally:
                seg.latch.release()
            return
        self._flushes[thread] += 1
        cache = self._caches[thread]
        cache.insert(h, key, value, reducer)
        if self.cache_watermark is not None and cache.occupancy > self.cache_watermark:
            self._drain(thread, reducer, blocking=True)

    def async_set(self, thread: int, key, value, reducer: Reducer) -> None:
        key = as_key(key)
        self.async_set_hashed(thread, hash_key(key), key, value, reducer)

    def async_set_many(self, thread: int, keys: Iterable, value, reducer: Reducer) -> None:
        for key in keys:
            self.async_set(thread, key, value, reducer)

    def _drain(self, thread: int, reducer: Reducer, blocking: bool) -> None:
        cache = self._caches[thread]
        if not cache.occupancy:
            return
        for h, key, value in cache.items():
            seg = self._segments[self._segment_index(h)]
            if blocking:
                with seg.latch:
                    seg.table.insert(h, key, value, reducer)
            else:
                seg.table.insert(h, key, value, reducer)
        cache.clear()

    def sync(self, reducer: Reducer) -> None:
        for t in range(self.num_threads):
            self._drain(t, reducer, blocking=False)

    def parallel_bulk_insert(
        self, entries: Sequence[tuple[bytes, Any]], reducer: Reducer, num_threads: int = 1
    ) -> None:
        """Merge ``entries`` using worker threads that own disjoint segment sets."""
        hashed = []
        for key, value in entries:
            key = as_key(key)
            hashed.append((hash_key(key), key, value))
        if not hashed:
            return
        workers = max(1, min(num_threads, self.num_segments))

        def work(w: int) -> None:
            for h, key, value in hashed:
                s = self._segment_index(h)
                if s % workers == w:
                    self._segments[s].table.insert(h, key, value, reducer)

        _run_workers(work, workers)

    def bulk_insert_encoded(self, payloads: Sequence[bytes], reducer: Reducer, num_threads: int = 1) -> int:
        entries = [e for p in payloads for e in decode_entries(p)]
        self.parallel_bulk_insert(entries, reducer, num_threads)
        return len(entries)

    def clear(self) -> None:
        for seg in self._segments:
            seg.table.clear()
        for cache in self._caches:
            cache.clear()

    # -- readers ---------------------------------------------------------

    def get(self, key) -> Any | None:
        key = as_key(key)
        h = hash_key(key)
        return self._segments[self._segment_index(h)].table.get(h, key)

    def entries(self) -> list[tuple[bytes, Any]]:
        return [(k, v) for seg in self._segments for _, k, v in seg.table.items()]

    def size(self) -> int:
        return sum(seg.table.occupancy for seg in self._segments)

    __len__ = size

    def encode(self) -> bytes:
        return encode_entries(self.entries())

    # -- introspection -----------------------------------------------------

    @property
    def emits(self) -> int:
        return sum(self._emits)

    @property
    def cache_flushes(self) -> int:
        return sum(self._flushes)

    def thread_counters(self, thread: int) -> tuple[int, int]:
        return self._emits[thread], self._flushes[thread]

    def segment_range(self, index: int) -> tuple[int, int]:
        return segment_range(index, self.num_segments)

    def segment_items(self, index: int) -> list[tuple[int, bytes, Any]]:
        return self._segments[index].table.items()

    def segment_capacity_of(self, index: int) -> int:
        return self._segments[index].table.capacity

    def segment_occupancy(self, index: int) -> int:
        return self._segments[index].table.occupancy

    def cache_items(self, thread: int) -> list[tuple[int, bytes, Any]]:
        return self._caches[thread].items()

    def cache_capacity_of(self, thread: int) -> int:
        return self._caches[thread].capacity

    def cache_occupancy(self, thread: int) -> int:
        return self._caches[thread].occupancy

    def hold_segment(self, index: int) -> "_Held":
        """Context manager holding a segment latch (for contention tests)."""
        return _Held(self._segments[index].latch)


class _Held:
    def __init__(self, lock: threading.Lock) -> None:
        self._lock = lock

    def __enter__(self):
        self._lock.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self._lock.release()


class Emitter:
    """Per-thread routing writer over a node's main and pending maps.

    ``maps[j]`` receives the keys owned by node ``j``.
    """

    __slots__ = ("_maps", "_n", "_thread", "_reducer")

    def __init__(self, maps: Sequence[ConcurrentMap], thread: int, reducer: Reducer) -> None:
        self._maps = list(maps)
        self._n = len(self._maps)
        self._thread = thread
        self._reducer = reducer

    def __call__(self, key, value) -> None:
        key = as_key(key)
        h = hash_key(key)
        self._maps[h % self._n].async_set_hashed(self._thread, h, key, value, self._reducer)

    def many(self, keys: Iterable, value) -> None:
        for key in keys:
            self(key, value)

    def split(self, line: bytes, value=1, keep_empty: bool = False, sep: bytes = b" ") -> None:
        for token in line.split(sep):
            if token or keep_empty:
                self(token, value)


def _run_workers(work, count: int) -> None:
    if count == 1:
        work(0)
        return
    errors: list[BaseException] = []

    def guarded(w: int) -> None:
        try:
            work(w)
        except BaseException as exc:  # re-raised below
            errors.append(exc)

    threads = [threading.Thread(target=guarded, args=(w,)) for w in range(count)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
