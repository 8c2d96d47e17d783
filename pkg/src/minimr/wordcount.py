"""Word count on top of the engine, plus an independent sequential oracle."""
from __future__ import annotations

import os
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dist_map import DistMap, MapMetrics
from .errors import ConfigError
from .mapreduce import DistRange, mapreduce
from .reducers import SUM
from .transport import SocketCluster, spawn_local_cluster

WORDS_PER_LINE = 20


@dataclass
class Corpus:
    lines: list[bytes]
    byte_count: int = -1

    def __post_init__(self) -> None:
        if self.byte_count < 0:
            self.byte_count = sum(len(ln) + 1 for ln in self.lines)

    def __len__(self) -> int:
        return len(self.lines)


@dataclass
class WordCountConfig:
    input_path: str | None = None
    generate: tuple[int, int, int] | None = None
    repeat: int = 1
    nodes: int = 1
    threads: int = 1
    segments: int = 16
    segment_capacity: int = 256
    chunk: int = 64
    keep_empty_tokens: bool = False
    output_path: str | None = None
    report_path: str | None = None
    transport: str = "local"
    endpoints: list[tuple[str, int]] | None = None
    self_id: int = 0
    backend: str | None = None
    partition: str = "cyclic"
    connect_timeout: float = 30.0

    def validate(self) -> None:
        if self.nodes < 1 or self.threads < 1:
            raise ConfigError("nodes and threads must be >= 1")
        if self.repeat < 1:
            raise ConfigError("repeat must be >= 1")
        if (self.input_path is None) == (self.generate is None):
            raise ConfigError("exactly one of --input and --generate is required")
        if self.segments < 1 or self.segments & (self.segments - 1):
            raise ConfigError(f"segments must be a power of two, got {self.segments}")
        if self.transport not in ("local", "sockets"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.transport == "sockets":
            if not self.endpoints:
                raise ConfigError("sockets transport needs an endpoint list")
            if self.nodes != 1 and self.nodes != len(self.endpoints):
                raise ConfigError("--nodes disagrees with the endpoint count")
            if not 0 <= self.self_id < len(self.endpoints):
                raise ConfigError("--self-id outside the endpoint list")


@dataclass
class WordCountResult:
    counts: dict[bytes, int]
    node_metrics: list[MapMetrics]
    words: int
    seconds: float
    corpus_lines: int
    corpus_bytes: int
    backend: str
    config: WordCountConfig = field(repr=False)

    @property
    def words_per_second(self) -> float:
        return self.words / self.seconds if self.words and self.seconds > 0 else 0.0


def load_corpus(path: str | os.PathLike, repeat: int = 1) -> Corpus:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read corpus {path}: {exc}") from exc
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    base = sum(len(ln) for ln in lines) + len(lines)
    return Corpus(lines * repeat, base * repeat)


def generate_corpus(vocab_size: int, total_words: int, seed: int) -> Corpus:
    """Zipf(s=1) words ``w<i>``, ``i`` in ``[0, vocab_size)``, 20 per line."""
    if vocab_size < 1 or total_words < 0:
        raise ConfigError("vocab_size must be >= 1 and total_words >= 0")
    weights = 1.0 / np.arange(1, vocab_size + 1, dtype=np.float64)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    idx = np.searchsorted(cdf, rng.random(total_words), side="right")
    np.minimum(idx, vocab_size - 1, out=idx)
    vocab = [b"w%d" % i for i in range(vocab_size)]
    tokens = [vocab[i] for i in idx.tolist()]
    lines = [b" ".join(tokens[k:k + WORDS_PER_LINE]) for k in range(0, total_words, WORDS_PER_LINE)]
    return Corpus(lines)


def tokenize(line: bytes, keep_empty: bool = False) -> list[bytes]:
    """Split on single spaces only; empty tokens survive only with ``keep_empty``."""
    tokens = line.split(b" ")
    if keep_empty:
        return tokens
    return [t for t in tokens if t]


def oracle_wordcount(corpus: Corpus | Sequence[bytes], keep_empty: bool = False) -> dict[bytes, int]:
    lines = corpus.lines if isinstance(corpus, Corpus) else corpus
    counts: Counter[bytes] = Counter()
    for line in lines:
        counts.update(tokenize(line, keep_empty))
    return dict(counts)


def sorted_counts(counts: dict[bytes, int]) -> list[tuple[bytes, int]]:
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def format_output(counts: dict[bytes, int]) -> bytes:
    return b"".join(b"%s\t%d\n" % (w, c) for w, c in sorted_counts(counts))


def write_output(counts: dict[bytes, int], output_path: str | os.PathLike) -> None:
    Path(output_path).write_bytes(format_output(counts))


def report_lines(result: WordCountResult) -> list[str]:
    cfg = result.config
    ms = result.node_metrics
    rows = [
        ("backend", result.backend),
        ("transport", cfg.transport),
        ("nodes", len(ms)),
        ("threads", cfg.threads),
        ("segments", cfg.segments),
        ("chunk", cfg.chunk),
        ("repeat", cfg.repeat),
        ("keep_empty_tokens", int(cfg.keep_empty_tokens)),
        ("corpus_lines", result.corpus_lines),
        ("corpus_bytes", result.corpus_bytes),
        ("emits", sum(m.emits for m in ms)),
        ("total_count", sum(result.counts.values())),
        ("distinct_words", len(result.counts)),
        ("cache_flushes", sum(m.cache_flushes for m in ms)),
        ("shuffled_entries", sum(m.shuffled_entries for m in ms)),
        ("shuffled_bytes", sum(m.shuffled_bytes for m in ms)),
    ]
    for rank, m in enumerate(ms):
        rows += [
            (f"node.{rank}.emits", m.emits),
            (f"node.{rank}.cache_flushes", m.cache_flushes),
            (f"node.{rank}.shuffled_entries", m.shuffled_entries),
            (f"node.{rank}.shuffled_bytes", m.shuffled_bytes),
            (f"node.{rank}.received_entries", m.received_entries),
            (f"node.{rank}.map_seconds", f"{m.map_seconds:.6f}"),
            (f"node.{rank}.sync_seconds", f"{m.sync_seconds:.6f}"),
            (f"node.{rank}.shuffle_seconds", f"{m.shuffle_seconds:.6f}"),
            (f"node.{rank}.merge_seconds", f"{m.merge_seconds:.6f}"),
        ]
    rows += [
        ("elapsed_seconds", f"{result.seconds:.6f}"),
        ("words_per_second", f"{result.words_per_second:.1f}"),
    ]
    return [f"{k}={v}" for k, v in rows]


def write_report(result: WordCountResult, report_path: str | os.PathLike) -> None:
    Path(report_path).write_text("\n".join(report_lines(result)) + "\n", encoding="utf-8")


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line:
            key, _, value = line.partition("=")
            out[key] = value
    return out


def load_input(config: WordCountConfig) -> Corpus:
    if config.generate is not None:
        vocab, words, seed = config.generate
        base = generate_corpus(vocab, words, seed)
        return Corpus(base.lines * config.repeat, base.byte_count * config.repeat)
    return load_corpus(config.input_path, config.repeat)


def wordcount_node(cluster, corpus: Corpus, config: WordCountConfig) -> WordCountResult | None:
    """One node's share of the job; the result is returned on rank 0 only."""
    lines = corpus.lines
    keep_empty = config.keep_empty_tokens
    target = DistMap(
        cluster,
        num_threads=config.threads,
        num_segments=config.segments,
        segment_capacity=config.segment_capacity,
        backend=config.backend,
    )

    def mapper(i: int, emit) -> None:
        emit.split(lines[i], 1, keep_empty)

    cluster.barrier()
    t0 = time.perf_counter()
    mapreduce(DistRange(0, len(lines), 1), mapper, SUM, target,
              chunk=config.chunk, partition=config.partition)
    cluster.barrier()
    elapsed = time.perf_counter() - t0

    entries = target.gather_to_root()
    metrics = target.gather_metrics()
    if cluster.rank != 0:
        return None
    return WordCountResult(
        counts=dict(entries),
        node_metrics=metrics,
        words=sum(m.emits for m in metrics),
        seconds=elapsed,
        corpus_lines=len(corpus),
        corpus_bytes=corpus.byte_count,
        backend=target.backend,
        config=config,
    )


def run_wordcount(config: WordCountConfig, corpus: Corpus | None = None) -> WordCountResult | None:
    """Run the whole job; returns the root's result (``None`` on non-root socket nodes)."""
    config.validate()
    if corpus is None:
        corpus = load_input(config)
    if config.transport == "local":
        results = spawn_local_cluster(config.nodes, lambda c: wordcount_node(c, corpus, config))
        result = results[0]
    else:
        with SocketCluster(config.endpoints, config.self_id, config.connect_timeout) as cluster:
            result = wordcount_node(cluster, corpus, config)
    if result is not None:
        if config.output_path:
            write_output(result.counts, config.output_path)
        if config.report_path:
            write_report(result, config.report_path)
    return result
