/* Hot kernels for the compiled backend: key hashing, linear-probing tables,
 * segment latches and the segmented concurrent map.  Everything here is
 * callable without the GIL. */
#ifndef MINIMR_KERNELS_H
#define MINIMR_KERNELS_H

#include <stdint.h>
#include <stdlib.h>
#include <string.h>
#include <sched.h>

#define MR_OP_SUM 0
#define MR_OP_MAX 1

/* per-thread counter stride, in int64 slots (one cache line) */
#define MR_STRIDE 8

static inline uint64_t mr_hash(const char *key, size_t len)
{
    uint64_t h = 0xcbf29ce484222325ULL;
    const unsigned char *p = (const unsigned char *)key;
    for (size_t i = 0; i < len; i++) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ULL;
    h ^= h >> 33;
    return h;
}

static inline int64_t mr_combine(int64_t a, int64_t b, int op)
{
    if (op == MR_OP_MAX)
        return a > b ? a : b;
    /* wrapping add */
    return (int64_t)((uint64_t)a + (uint64_t)b);
}

/* ---- linear probing table ------------------------------------------- */

typedef struct {
    uint64_t *hashes;
    int64_t *values;
    uint64_t *key_off;
    uint32_t *key_len;
    uint8_t *used;
    size_t capacity;
    size_t occupancy;
    char *arena;
    size_t arena_len;
    size_t arena_cap;
} mr_table;

static int mr_table_alloc_slots(mr_table *t, size_t capacity)
{
    t->hashes = (uint64_t *)malloc(capacity * sizeof(uint64_t));
    t->values = (int64_t *)malloc(capacity * sizeof(int64_t));
    t->key_off = (uint64_t *)malloc(capacity * sizeof(uint64_t));
    t->key_len = (uint32_t *)malloc(capacity * sizeof(uint32_t));
    t->used = (uint8_t *)calloc(capacity, 1);
    if (!t->hashes || !t->values || !t->key_off || !t->key_len || !t->used)
        return -1;
    t->capacity = capacity;
    return 0;
}

static void mr_table_free_slots(mr_table *t)
{
    free(t->hashes);
    free(t->values);
    free(t->key_off);
    free(t->key_len);
    free(t->used);
    t->hashes = NULL;
    t->values = NULL;
    t->key_off = NULL;
    t->key_len = NULL;
    t->used = NULL;
}

static int mr_table_init(mr_table *t, size_t capacity)
{
    memset(t, 0, sizeof(*t));
    return mr_table_alloc_slots(t, capacity);
}

static void mr_table_free(mr_table *t)
{
    mr_table_free_slots(t);
    free(t->arena);
    t->arena = NULL;
    t->arena_len = t->arena_cap = 0;
    t->occupancy = 0;
}

static void mr_table_clear(mr_table *t)
{
    if (t->occupancy)
        memset(t->used, 0, t->capacity);
    t->occupancy = 0;
    t->arena_len = 0;
}

static inline const char *mr_table_key(const mr_table *t, size_t slot)
{
    return t->arena + t->key_off[slot];
}

static int mr_table_grow(mr_table *t)
{
    mr_table old = *t;
    size_t mask;
    if (mr_table_alloc_slots(t, old.capacity * 2) != 0) {
        mr_table_free_slots(t);
        t->hashes = old.hashes;
        t->values = old.values;
        t->key_off = old.key_off;
        t->key_len = old.key_len;
        t->used = old.used;
        t->capacity = old.capacity;
        return -1;
    }
    mask = t->capacity - 1;
    for (size_t i = 0; i < old.capacity; i++) {
        size_t j;
        if (!old.used[i])
            continue;
        j = old.hashes[i] & mask;
        while (t->used[j])
            j = (j + 1) & mask;
        t->used[j] = 1;
        t->hashes[j] = old.hashes[i];
        t->values[j] = old.values[i];
        t->key_off[j] = old.key_off[i];
        t->key_len[j] = old.key_len[i];
    }
    mr_table_free_slots(&old);
    return 0;
}

/* Slot holding (h, key), or the free slot where it would go. */
static inline size_t mr_table_find(const mr_table *t, uint64_t h, const char *key, uint32_t len)
{
    size_t mask = t->capacity - 1;
    size_t j = h & mask;
    while (t->used[j]) {
        if (t->hashes[j] == h && t->key_len[j] == len
            && memcmp(t->arena + t->key_off[j], key, len) == 0)
            return j;
        j = (j + 1) & mask;
    }
    return j;
}

static int mr_arena_push(mr_table *t, const char *key, uint32_t len, uint64_t *off)
{
    if (t->arena_len + len > t->arena_cap) {
        size_t cap = t->arena_cap ? t->arena_cap : 256;
        char *p;
        while (cap < t->arena_len + len)
            cap *= 2;
        p = (char *)realloc(t->arena, cap);
        if (!p)
            return -1;
        t->arena = p;
        t->arena_cap = cap;
    }
    if (len)
        memcpy(t->arena + t->arena_len, key, len);
    *off = t->arena_len;
    t->arena_len += len;
    return 0;
}

/* Merge (key, value) into the table.  Returns 1 on new key, 0 on merge,
 * -1 on allocation failure. */
static int mr_table_insert(mr_table *t, uint64_t h, const char *key, uint32_t len,
                           int64_t value, int op)
{
    size_t j = mr_table_find(t, h, key, len);
    uint64_t off;
    if (t->used[j]) {
        t->values[j] = mr_combine(t->values[j], value, op);
        return 0;
    }
    /* keep occupancy / capacity <= 0.7 */
    if (10 * (t->occupancy + 1) > 7 * t->capacity) {
        if (mr_table_grow(t) != 0)
            return -1;
        j = mr_table_find(t, h, key, len);
    }
    if (mr_arena_push(t, key, len, &off) != 0)
        return -1;
    t->used[j] = 1;
    t->hashes[j] = h;
    t->values[j] = value;
    t->key_off[j] = off;
    t->key_len[j] = len;
    t->occupancy++;
    return 1;
}

static inline int mr_table_lookup(const mr_table *t, uint64_t h, const char *key, uint32_t len,
                                  int64_t *out)
{
    size_t j = mr_table_find(t, h, key, len);
    if (!t->used[j])
        return 0;
    *out = t->values[j];
    return 1;
}

/* ---- latches -------------------------------------------------------- */

static inline int mr_latch_try(int *latch)
{
    return __atomic_exchange_n(latch, 1, __ATOMIC_ACQUIRE) == 0;
}

static inline void mr_latch_acquire(int *latch)
{
    while (!mr_latch_try(latch)) {
        while (__atomic_load_n(latch, __ATOMIC_RELAXED))
            sched_yield();
    }
}

static inline void mr_latch_release(int *latch)
{
    __atomic_store_n(latch, 0, __ATOMIC_RELEASE);
}

/* ---- segmented concurrent map --------------------------------------- */

typedef struct {
    int latch;
    char _pad[60];
    mr_table table;
} mr_segment;

typedef struct {
    mr_segment *segments;
    size_t num_segments;
    int seg_bits;
    mr_table *caches;
    size_t num_threads;
    int64_t *counters; /* [t*STRIDE] emits, [t*STRIDE+1] cache flushes */
    size_t watermark;  /* 0 = off */
} mr_cmap;

static inline size_t mr_segment_of(uint64_t h, int seg_bits)
{
    return seg_bits == 0 ? 0 : (size_t)(h >> (64 - seg_bits));
}

static void mr_cmap_free(mr_cmap *m)
{
    if (m->segments) {
        for (size_t i = 0; i < m->num_segments; i++)
            mr_table_free(&m->segments[i].table);
        free(m->segments);
    }
    if (m->caches) {
        for (size_t i = 0; i < m->num_threads; i++)
            mr_table_free(&m->caches[i]);
        free(m->caches);
    }
    free(m->counters);
    memset(m, 0, sizeof(*m));
}

static int mr_cmap_init(mr_cmap *m, size_t num_segments, size_t segment_capacity,
                        size_t num_threads, size_t cache_capacity, size_t watermark)
{
    int bits = 0;
    memset(m, 0, sizeof(*m));
    while (((size_t)1 << bits) < num_segments)
        bits++;
    m->seg_bits = bits;
    m->num_segments = num_segments;
    m->num_threads = num_threads;
    m->watermark = watermark;
    m->segments = (mr_segment *)calloc(num_segments, sizeof(mr_segment));
    m->caches = (mr_table *)calloc(num_threads, sizeof(mr_table));
    m->counters = (int64_t *)calloc(num_threads * MR_STRIDE, sizeof(int64_t));
    if (!m->segments || !m->caches || !m->counters)
        goto fail;
    for (size_t i = 0; i < num_segments; i++)
        if (mr_table_init(&m->segments[i].table, segment_capacity) != 0)
            goto fail;
    for (size_t i = 0; i < num_threads; i++)
        if (mr_table_init(&m->caches[i], cache_capacity) != 0)
            goto fail;
    return 0;
fail:
    mr_cmap_free(m);
    return -1;
}

/* Move one cache into the segments.  blocking=0 assumes quiescence. */
static int mr_cmap_drain_cache(mr_cmap *m, size_t t, int op, int blocking)
{
    mr_table *c = &m->caches[t];
    if (c->occupancy == 0)
        return 0;
    for (size_t i = 0; i < c->capacity; i++) {
        mr_segment *s;
        int rc;
        if (!c->used[i])
            continue;
        s = &m->segments[mr_segment_of(c->hashes[i], m->seg_bits)];
        if (blocking)
            mr_latch_acquire(&s->latch);
        rc = mr_table_insert(&s->table, c->hashes[i], mr_table_key(c, i), c->key_len[i],
                             c->values[i], op);
        if (blocking)
            mr_latch_release(&s->latch);
        if (rc < 0)
            return -1;
    }
    mr_table_clear(c);
    return 0;
}

static inline int mr_cmap_set(mr_cmap *m, size_t t, uint64_t h, const char *key, uint32_t len,
                              int64_t value, int op)
{
    mr_segment *s = &m->segments[mr_segment_of(h, m->seg_bits)];
    int rc;
    m->counters[t * MR_STRIDE] += 1;
    if (mr_latch_try(&s->latch)) {
        rc = mr_table_insert(&s->table, h, key, len, value, op);
        mr_latch_release(&s->latch);
        return rc;
    }
    m->counters[t * MR_STRIDE + 1] += 1;
    rc = mr_table_insert(&m->caches[t], h, key, len, value, op);
    if (rc >= 0 && m->watermark && m->caches[t].occupancy > m->watermark)
        rc = mr_cmap_drain_cache(m, t, op, 1);
    return rc;
}

static int mr_cmap_sync(mr_cmap *m, int op)
{
    for (size_t t = 0; t < m->num_threads; t++)
        if (mr_cmap_drain_cache(m, t, op, 0) != 0)
            return -1;
    return 0;
}

/* ---- wire format ---------------------------------------------------- */

static inline void mr_put_u32(char *p, uint32_t v)
{
    for (int i = 0; i < 4; i++)
        p[i] = (char)((v >> (8 * i)) & 0xff);
}

static inline void mr_put_i64(char *p, int64_t v)
{
    uint64_t u = (uint64_t)v;
    for (int i = 0; i < 8; i++)
        p[i] = (char)((u >> (8 * i)) & 0xff);
}

static inline uint32_t mr_get_u32(const char *p)
{
    const unsigned char *q = (const unsigned char *)p;
    return (uint32_t)q[0] | ((uint32_t)q[1] << 8) | ((uint32_t)q[2] << 16) | ((uint32_t)q[3] << 24);
}

static inline int64_t mr_get_i64(const char *p)
{
    const unsigned char *q = (const unsigned char *)p;
    uint64_t u = 0;
    for (int i = 7; i >= 0; i--)
        u = (u << 8) | q[i];
    return (int64_t)u;
}

static size_t mr_table_encoded_size(const mr_table *t)
{
    return t->occupancy * 12 + t->arena_len;
}

/* Append every entry of t to out; returns bytes written. */
static size_t mr_table_encode(const mr_table *t, char *out)
{
    char *p = out;
    for (size_t i = 0; i < t->capacity; i++) {
        uint32_t len;
        if (!t->used[i])
            continue;
        len = t->key_len[i];
        mr_put_u32(p, len);
        memcpy(p + 4, t->arena + t->key_off[i], len);
        mr_put_i64(p + 4 + len, t->values[i]);
        p += 12 + len;
    }
    return (size_t)(p - out);
}

#endif
