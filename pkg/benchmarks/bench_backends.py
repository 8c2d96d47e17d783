"""Compare the compiled and pure-Python backends on word count throughput.

    python3 benchmarks/bench_backends.py --words 2000000 --threads 1,4
"""
from __future__ import annotations

import argparse
import json
import statistics
import time

from minimr import available
from minimr.wordcount import WordCountConfig, generate_corpus, run_wordcount


def parse_args(argv=None) -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--vocab", type=int, default=50_000)
    p.add_argument("--words", type=int, default=2_000_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--nodes", type=int, default=1)
    p.add_argument("--threads", default="1,4", help="comma-separated thread counts")
    p.add_argument("--segments", type=int, default=16)
    p.add_argument("--backends", default=",".join(available()))
    p.add_argument("--repeats", type=int, default=3, help="runs per cell; the median is kept")
    p.add_argument("--json", metavar="PATH", help="also write results as JSON")
    return p.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    threads = [int(t) for t in args.threads.split(",")]
    backends = [b for b in args.backends.split(",") if b]
    corpus = generate_corpus(args.vocab, args.words, args.seed)
    rows = []
    print(f"{'backend':<10}{'threads':>8}{'words/s':>16}{'seconds':>10}")
    for backend in backends:
        for t in threads:
            cfg = WordCountConfig(generate=(args.vocab, args.words, args.seed), nodes=args.nodes,
                                  threads=t, segments=args.segments, backend=backend)
            secs = []
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                run_wordcount(cfg, corpus)
                secs.append(time.perf_counter() - t0)
            median = statistics.median(secs)
            rows.append({"backend": backend, "threads": t, "nodes": args.nodes,
                         "words": args.words, "seconds": median,
                         "words_per_second": args.words / median})
            print(f"{backend:<10}{t:>8}{args.words / median:>16,.0f}{median:>10.3f}")
    base = {r["threads"]: r for r in rows if r["backend"] == "python"}
    for r in rows:
        if r["backend"] == "compiled" and r["threads"] in base:
            ratio = r["words_per_second"] / base[r["threads"]]["words_per_second"]
            print(f"compiled/python at {r['threads']} thread(s): {ratio:.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
