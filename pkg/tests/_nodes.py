"""Picklable node entry points for multi-process socket tests."""
from __future__ import annotations

import random


def random_rows(seed: int, n: int) -> list[list[bytes]]:
    rng = random.Random(seed)
    return [[rng.randbytes(rng.randrange(0, 300)) for _ in range(n)] for _ in range(n)]


def exchange_random(cluster):
    rows = random_rows(1234, cluster.size)
    first = cluster.all_to_all(rows[cluster.rank])
    cluster.barrier()
    second = cluster.all_to_all([p[::-1] for p in rows[cluster.rank]])
    return first, second, cluster.rounds


def big_exchange(cluster):
    # several MB per direction: both sides send before either receives
    payload = bytes([cluster.rank]) * (4 << 20)
    incoming = cluster.all_to_all([payload] * cluster.size)
    return [len(p) for p in incoming], [p[:1] for p in incoming]


def dist_map_wordcount(cluster):
    from minimr.wordcount import WordCountConfig, generate_corpus, wordcount_node

    corpus = generate_corpus(300, 5000, 11)
    cfg = WordCountConfig(generate=(300, 5000, 11), nodes=cluster.size, threads=2, segments=4)
    result = wordcount_node(cluster, corpus, cfg)
    return None if result is None else sorted(result.counts.items())
