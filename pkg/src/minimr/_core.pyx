# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend: int64-valued tables and segmented maps.

Same surface as ``minimr._pymap``.  Values are signed 64-bit integers and
reducers must be one of the native ops (sum wraps on overflow).  Writers
release the GIL around the latched insert whenever more than one thread is
registered, so segment latches see real contention.
"""
from cpython.bytes cimport PyBytes_AS_STRING, PyBytes_FromStringAndSize, PyBytes_GET_SIZE
from libc.stdint cimport int64_t, uint32_t, uint64_t
from libc.stdlib cimport free, malloc
from cython.parallel cimport prange

from .errors import ConfigError, DecodeError
from .hashing import segment_range as _segment_range

NAME = "compiled"


cdef extern from "_kernels.h" nogil:
    int MR_OP_SUM
    int MR_OP_MAX
    int MR_STRIDE

    ctypedef struct mr_table:
        uint64_t *hashes
        int64_t *values
        uint64_t *key_off
        uint32_t *key_len
        unsigned char *used
        size_t capacity
        size_t occupancy
        char *arena
        size_t arena_len

    ctypedef struct mr_segment:
        int latch
        mr_table table

    ctypedef struct mr_cmap:
        mr_segment *segments
        size_t num_segments
        int seg_bits
        mr_table *caches
        size_t num_threads
        int64_t *counters
        size_t watermark

    uint64_t mr_hash(const char *key, size_t len)
    int mr_table_init(mr_table *t, size_t capacity)
    void mr_table_free(mr_table *t)
    void mr_table_clear(mr_table *t)
    int mr_table_insert(mr_table *t, uint64_t h, const char *key, uint32_t len, int64_t value, int op)
    int mr_table_lookup(const mr_table *t, uint64_t h, const char *key, uint32_t len, int64_t *out)
    size_t mr_table_encoded_size(const mr_table *t)
    size_t mr_table_encode(const mr_table *t, char *out)
    void mr_latch_acquire(int *latch)
    void mr_latch_release(int *latch)
    size_t mr_segment_of(uint64_t h, int seg_bits)
    int mr_cmap_init(mr_cmap *m, size_t num_segments, size_t segment_capacity,
                     size_t num_threads, size_t cache_capacity, size_t watermark)
    void mr_cmap_free(mr_cmap *m)
    int mr_cmap_set(mr_cmap *m, size_t t, uint64_t h, const char *key, uint32_t len,
                    int64_t value, int op)
    int mr_cmap_sync(mr_cmap *m, int op)
    uint32_t mr_get_u32(const char *p)
    int64_t mr_get_i64(const char *p)


cdef int _op(reducer) except -1:
    op = getattr(reducer, "op", None)
    if op == "sum":
        return MR_OP_SUM
    if op == "max":
        return MR_OP_MAX
    raise ValueError(
        f"compiled backend supports only native reducers (sum, max), got {reducer!r}; "
        "use the python backend for custom reducers"
    )


cdef inline bytes _as_key(key):
    if type(key) is bytes:
        return <bytes>key
    if isinstance(key, str):
        return (<str>key).encode("utf-8")
    return bytes(key)


cdef inline bint _pow2(Py_ssize_t n):
    return n >= 1 and (n & (n - 1)) == 0


def hash_key(key):
    cdef bytes k = _as_key(key)
    return mr_hash(PyBytes_AS_STRING(k), PyBytes_GET_SIZE(k))


cdef list _table_slots(mr_table *t):
    cdef size_t i
    out = []
    for i in range(t.capacity):
        if t.used[i]:
            out.append((
                i,
                t.hashes[i],
                PyBytes_FromStringAndSize(t.arena + t.key_off[i], t.key_len[i]),
                t.values[i],
            ))
    return out


cdef list _table_entries(mr_table *t, list out):
    cdef size_t i
    for i in range(t.capacity):
        if t.used[i]:
            out.append((PyBytes_FromStringAndSize(t.arena + t.key_off[i], t.key_len[i]), t.values[i]))
    return out


cdef class ProbingTable:
    """Linear-probing table with reducer merge; load factor kept <= 0.7."""

    cdef mr_table t

    def __cinit__(self, Py_ssize_t capacity=16):
        if capacity < 2 or not _pow2(capacity):
            raise ConfigError(f"table capacity must be a power of two >= 2, got {capacity}")
        if mr_table_init(&self.t, capacity) != 0:
            raise MemoryError()

    def __dealloc__(self):
        mr_table_free(&self.t)

    @property
    def capacity(self):
        return self.t.capacity

    @property
    def occupancy(self):
        return self.t.occupancy

    def __len__(self):
        return self.t.occupancy

    def insert(self, uint64_t h, key, int64_t value, reducer):
        cdef bytes k = _as_key(key)
        if mr_table_insert(&self.t, h, PyBytes_AS_STRING(k), PyBytes_GET_SIZE(k), value, _op(reducer)) < 0:
            raise MemoryError()

    def get(self, uint64_t h, key):
        cdef bytes k = _as_key(key)
        cdef int64_t out
        if mr_table_lookup(&self.t, h, PyBytes_AS_STRING(k), PyBytes_GET_SIZE(k), &out):
            return out
        return None

    def slots(self):
        return _table_slots(&self.t)

    def items(self):
        return [(h, k, v) for _, h, k, v in _table_slots(&self.t)]

    def clear(self):
        mr_table_clear(&self.t)


cdef class ConcurrentMap:
    """Segmented map whose writers never wait on a held segment latch."""

    cdef mr_cmap m
    cdef readonly Py_ssize_t num_segments
    cdef readonly Py_ssize_t segment_capacity
    cdef readonly Py_ssize_t num_threads
    cdef readonly object cache_watermark
    cdef bint release_gil

    backend = NAME

    def __cinit__(self, Py_ssize_t num_segments=16, Py_ssize_t segment_capacity=256,
                  Py_ssize_t num_threads=1, cache_watermark=None):
        if not _pow2(num_segments):
            raise ConfigError(f"num_segments must be a power of two, got {num_segments}")
        if segment_capacity < 2 or not _pow2(segment_capacity):
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
        self.release_gil = num_threads > 1
        if mr_cmap_init(&self.m, num_segments, segment_capacity, num_threads, 16,
                        0 if cache_watermark is None else cache_watermark) != 0:
            raise MemoryError()

    def __dealloc__(self):
        mr_cmap_free(&self.m)

    cdef inline int _check_thread(self, Py_ssize_t thread) except -1:
        if thread < 0 or thread >= self.num_threads:
            raise IndexError(f"thread id {thread} not registered (num_threads={self.num_threads})")
        return 0

    # -- writers ---------------------------------------------------------

    def async_set_hashed(self, Py_ssize_t thread, uint64_t h, key, int64_t value, reducer):
        cdef bytes k = _as_key(key)
        cdef int op = _op(reducer)
        cdef int rc
        cdef const char *p = PyBytes_AS_STRING(k)
        cdef uint32_t n = PyBytes_GET_SIZE(k)
        self._check_thread(thread)
        if self.release_gil:
            with nogil:
                rc = mr_cmap_set(&self.m, thread, h, p, n, value, op)
        else:
            rc = mr_cmap_set(&self.m, thread, h, p, n, value, op)
        if rc < 0:
            raise MemoryError()

    def async_set(self, Py_ssize_t thread, key, int64_t value, reducer):
        cdef bytes k = _as_key(key)
        self.async_set_hashed(thread, mr_hash(PyBytes_AS_STRING(k), PyBytes_GET_SIZE(k)), k, value, reducer)

    def async_set_many(self, Py_ssize_t thread, keys, int64_t value, reducer):
        Emitter([self], thread, reducer).many(keys, value)

    def sync(self, reducer):
        cdef int op = _op(reducer)
        cdef int rc
        with nogil:
            rc = mr_cmap_sync(&self.m, op)
        if rc < 0:
            raise MemoryError()

    def parallel_bulk_insert(self, entries, reducer, Py_ssize_t num_threads=1):
        from .codec import encode_entries
        self.bulk_insert_encoded([encode_entries((_as_key(k), v) for k, v in entries)],
                                 reducer, num_threads)

    def bulk_insert_encoded(self, payloads, reducer, Py_ssize_t num_threads=1):
        """Decode entry batches and merge them with worker threads that own
        disjoint segment sets.  Returns the number of entries merged."""
        cdef int op = _op(reducer)
        cdef list blobs = [p if type(p) is bytes else bytes(p) for p in payloads]
        cdef Py_ssize_t count = 0, i = 0, pos, end, klen
        cdef const char *base
        cdef bytes blob
        for blob in blobs:
            base = PyBytes_AS_STRING(blob)
            end = PyBytes_GET_SIZE(blob)
            pos = 0
            while pos < end:
                if end - pos < 4:
                    raise DecodeError(f"truncated key length at offset {pos}")
                klen = mr_get_u32(base + pos)
                if pos + 4 + klen + 8 > end:
                    raise DecodeError(f"truncated entry at offset {pos}")
                pos += 12 + klen
                count += 1
        if count == 0:
            return 0
        cdef uint64_t *hs = <uint64_t *>malloc(count * sizeof(uint64_t))
        cdef const char **ks = <const char **>malloc(count * sizeof(char *))
        cdef uint32_t *ls = <uint32_t *>malloc(count * sizeof(uint32_t))
        cdef int64_t *vs = <int64_t *>malloc(count * sizeof(int64_t))
        cdef Py_ssize_t workers = max(1, min(num_threads, self.num_segments))
        cdef Py_ssize_t w
        cdef int failed = 0
        try:
            if not hs or not ks or not ls or not vs:
                raise MemoryError()
            for blob in blobs:
                base = PyBytes_AS_STRING(blob)
                end = PyBytes_GET_SIZE(blob)
                pos = 0
                with nogil:
                    while pos < end:
                        klen = mr_get_u32(base + pos)
                        ks[i] = base + pos + 4
                        ls[i] = klen
                        hs[i] = mr_hash(base + pos + 4, klen)
                        vs[i] = mr_get_i64(base + pos + 4 + klen)
                        pos += 12 + klen
                        i += 1
            for w in prange(workers, nogil=True, num_threads=workers, schedule="static", chunksize=1):
                failed += _bulk_worker(&self.m, w, workers, count, hs, ks, ls, vs, op)
            if failed:
                raise MemoryError()
        finally:
            free(hs)
            free(ks)
            free(ls)
            free(vs)
        return count

    def clear(self):
        cdef size_t i
        for i in range(self.m.num_segments):
            mr_table_clear(&self.m.segments[i].table)
        for i in range(self.m.num_threads):
            mr_table_clear(&self.m.caches[i])

    # -- readers ---------------------------------------------------------

    def get(self, key):
        cdef bytes k = _as_key(key)
        cdef uint64_t h = mr_hash(PyBytes_AS_STRING(k), PyBytes_GET_SIZE(k))
        cdef int64_t out
        if mr_table_lookup(&self.m.segments[mr_segment_of(h, self.m.seg_bits)].table, h,
                           PyBytes_AS_STRING(k), PyBytes_GET_SIZE(k), &out):
            return out
        return None

    def entries(self):
        cdef size_t i
        cdef list out = []
        for i in range(self.m.num_segments):
            _table_entries(&self.m.segments[i].table, out)
        return out

    def size(self):
        cdef size_t i, total = 0
        for i in range(self.m.num_segments):
            total += self.m.segments[i].table.occupancy
        return total

    def __len__(self):
        return self.size()

    def encode(self):
        """All segment entries in the wire format (see ``minimr.codec``)."""
        cdef size_t i, size = 0, pos = 0
        for i in range(self.m.num_segments):
            size += mr_table_encoded_size(&self.m.segments[i].table)
        out = PyBytes_FromStringAndSize(NULL, size)
        cdef char *buf = PyBytes_AS_STRING(out)
        with nogil:
            for i in range(self.m.num_segments):
                pos += mr_table_encode(&self.m.segments[i].table, buf + pos)
        return out

    # -- introspection -----------------------------------------------------

    @property
    def emits(self):
        cdef size_t t
        cdef int64_t total = 0
        for t in range(self.m.num_threads):
            total += self.m.counters[t * MR_STRIDE]
        return total

    @property
    def cache_flushes(self):
        cdef size_t t
        cdef int64_t total = 0
        for t in range(self.m.num_threads):
            total += self.m.counters[t * MR_STRIDE + 1]
        return total

    def thread_counters(self, Py_ssize_t thread):
        self._check_thread(thread)
        return self.m.counters[thread * MR_STRIDE], self.m.counters[thread * MR_STRIDE + 1]

    def segment_range(self, Py_ssize_t index):
        return _segment_range(index, self.num_segments)

    def _segment_table(self, Py_ssize_t index):
        if index < 0 or index >= self.num_segments:
            raise IndexError(index)

    def segment_items(self, Py_ssize_t index):
        self._segment_table(index)
        return [(h, k, v) for _, h, k, v in _table_slots(&self.m.segments[index].table)]

    def segment_capacity_of(self, Py_ssize_t index):
        self._segment_table(index)
        return self.m.segments[index].table.capacity

    def segment_occupancy(self, Py_ssize_t index):
        self._segment_table(index)
        return self.m.segments[index].table.occupancy

    def cache_items(self, Py_ssize_t thread):
        self._check_thread(thread)
        return [(h, k, v) for _, h, k, v in _table_slots(&self.m.caches[thread])]

    def cache_capacity_of(self, Py_ssize_t thread):
        self._check_thread(thread)
        return self.m.caches[thread].capacity

    def cache_occupancy(self, Py_ssize_t thread):
        self._check_thread(thread)
        return self.m.caches[thread].occupancy

    def hold_segment(self, Py_ssize_t index):
        """Context manager holding a segment latch (for contention tests)."""
        self._segment_table(index)
        return _Held(self, index)


cdef class _Held:
    cdef ConcurrentMap owner
    cdef Py_ssize_t index

    def __cinit__(self, ConcurrentMap owner, Py_ssize_t index):
        self.owner = owner
        self.index = index

    def __enter__(self):
        with nogil:
            mr_latch_acquire(&self.owner.m.segments[self.index].latch)
        return self

    def __exit__(self, *exc):
        mr_latch_release(&self.owner.m.segments[self.index].latch)


cdef int _bulk_worker(mr_cmap *m, Py_ssize_t w, Py_ssize_t workers, Py_ssize_t count,
                      uint64_t *hs, const char **ks, uint32_t *ls, int64_t *vs,
                      int op) noexcept nogil:
    cdef Py_ssize_t i
    cdef size_t s
    for i in range(count):
        s = mr_segment_of(hs[i], m.seg_bits)
        if <Py_ssize_t>(s % workers) != w:
            continue
        if mr_table_insert(&m.segments[s].table, hs[i], ks[i], ls[i], vs[i], op) < 0:
            return 1
    return 0


cdef class Emitter:
    """Per-thread routing writer: ``maps[j]`` receives keys owned by node j."""

    cdef list _refs
    cdef mr_cmap **maps
    cdef size_t n
    cdef size_t thread
    cdef int op
    cdef bint release_gil

    def __cinit__(self, maps, Py_ssize_t thread, reducer):
        cdef ConcurrentMap cm
        cdef Py_ssize_t j
        self._refs = list(maps)
        self.n = len(self._refs)
        if self.n == 0:
            raise ConfigError("emitter needs at least one map")
        self.maps = <mr_cmap **>malloc(self.n * sizeof(mr_cmap *))
        if not self.maps:
            raise MemoryError()
        self.release_gil = False
        for j in range(<Py_ssize_t>self.n):
            cm = <ConcurrentMap?>self._refs[j]
            if thread < 0 or thread >= cm.num_threads:
                raise IndexError(f"thread id {thread} not registered")
            self.maps[j] = &cm.m
            self.release_gil = self.release_gil or cm.release_gil
        self.thread = thread
        self.op = _op(reducer)

    def __dealloc__(self):
        free(self.maps)

    def __call__(self, key, int64_t value):
        cdef bytes k = _as_key(key)
        cdef const char *p = PyBytes_AS_STRING(k)
        cdef uint32_t n = PyBytes_GET_SIZE(k)
        cdef uint64_t h
        cdef int rc
        if self.release_gil:
            with nogil:
                h = mr_hash(p, n)
                rc = mr_cmap_set(self.maps[h % self.n], self.thread, h, p, n, value, self.op)
        else:
            h = mr_hash(p, n)
            rc = mr_cmap_set(self.maps[h % self.n], self.thread, h, p, n, value, self.op)
        if rc < 0:
            raise MemoryError()

    def many(self, keys, int64_t value):
        """Emit every key in ``keys`` with the same value."""
        cdef list held = keys if type(keys) is list else list(keys)
        cdef Py_ssize_t count = len(held), i
        cdef bytes k
        cdef int rc = 0
        if count == 0:
            return
        cdef const char **ps = <const char **>malloc(count * sizeof(char *))
        cdef uint32_t *ls = <uint32_t *>malloc(count * sizeof(uint32_t))
        try:
            if not ps or not ls:
                raise MemoryError()
            if any(type(x) is not bytes for x in held):
                held = [_as_key(x) for x in held]
            for i in range(count):
                k = <bytes>held[i]
                ps[i] = PyBytes_AS_STRING(k)
                ls[i] = PyBytes_GET_SIZE(k)
            if self.release_gil:
                with nogil:
                    rc = self._emit_all(ps, ls, count, value)
            else:
                rc = self._emit_all(ps, ls, count, value)
            if rc < 0:
                raise MemoryError()
        finally:
            free(ps)
            free(ls)

    cdef int _emit_all(self, const char **ps, uint32_t *ls, Py_ssize_t count, int64_t value) noexcept nogil:
        cdef Py_ssize_t i
        cdef uint64_t h
        for i in range(count):
            h = mr_hash(ps[i], ls[i])
            if mr_cmap_set(self.maps[h % self.n], self.thread, h, ps[i], ls[i], value, self.op) < 0:
                return -1
        return 0

    def split(self, line, int64_t value=1, bint keep_empty=False, sep=b" "):
        """Emit each ``sep``-delimited token of ``line``; empty tokens only
        when ``keep_empty`` is set."""
        cdef bytes ln = _as_key(line)
        cdef bytes sp = _as_key(sep)
        if PyBytes_GET_SIZE(sp) != 1:
            raise ValueError("separator must be a single byte")
        cdef char c = PyBytes_AS_STRING(sp)[0]
        cdef const char *p = PyBytes_AS_STRING(ln)
        cdef Py_ssize_t n = PyBytes_GET_SIZE(ln)
        cdef int rc
        if self.release_gil:
            with nogil:
                rc = self._split(p, n, c, keep_empty, value)
        else:
            rc = self._split(p, n, c, keep_empty, value)
        if rc < 0:
            raise MemoryError()

    cdef int _split(self, const char *p, Py_ssize_t n, char c, bint keep_empty,
                    int64_t value) noexcept nogil:
        cdef Py_ssize_t start = 0, i
        cdef uint64_t h
        cdef uint32_t length
        for i in range(n + 1):
            if i < n and p[i] != c:
                continue
            length = <uint32_t>(i - start)
            if length or keep_empty:
                h = mr_hash(p + start, length)
                if mr_cmap_set(self.maps[h % self.n], self.thread, h, p + start, length,
                               value, self.op) < 0:
                    return -1
            start = i + 1
        return 0


def encode_entries(entries):
    cdef list items = []
    cdef Py_ssize_t size = 0
    cdef bytes k
    for key, value in entries:
        k = _as_key(key)
        if PyBytes_GET_SIZE(k) >= (1 << 32):
            raise ValueError("key longer than 2**32 - 1 bytes")
        items.append((k, <int64_t>value))
        size += 12 + PyBytes_GET_SIZE(k)
    out = PyBytes_FromStringAndSize(NULL, size)
    cdef char *buf = PyBytes_AS_STRING(out)
    cdef Py_ssize_t pos = 0, klen
    cdef int64_t v
    cdef uint64_t u
    cdef int b
    for k, v in items:
        klen = PyBytes_GET_SIZE(k)
        for b in range(4):
            buf[pos + b] = <char>((<uint64_t>klen >> (8 * b)) & 0xff)
        for b in range(klen):
            buf[pos + 4 + b] = PyBytes_AS_STRING(k)[b]
        u = <uint64_t>v
        for b in range(8):
            buf[pos + 4 + klen + b] = <char>((u >> (8 * b)) & 0xff)
        pos += 12 + klen
    return out


def decode_entries(data):
    cdef bytes blob = data if type(data) is bytes else bytes(data)
    cdef const char *base = PyBytes_AS_STRING(blob)
    cdef Py_ssize_t end = PyBytes_GET_SIZE(blob), pos = 0, klen
    cdef list out = []
    while pos < end:
        if end - pos < 4:
            raise DecodeError(f"truncated key length at offset {pos}")
        klen = mr_get_u32(base + pos)
        if pos + 4 + klen + 8 > end:
            raise DecodeError(f"truncated entry at offset {pos}")
        out.append((PyBytes_FromStringAndSize(base + pos + 4, klen), mr_get_i64(base + pos + 4 + klen)))
        pos += 12 + klen
    return out
