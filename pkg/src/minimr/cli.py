"""``minimr-wordcount``: word-count benchmark over the MapReduce engine.

Exit codes: 0 success, 2 configuration error, 3 transport error,
4 oracle mismatch.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, NodeFailure, TransportError
from .transport import read_endpoints
from .wordcount import (
    WordCountConfig,
    format_output,
    load_input,
    oracle_wordcount,
    report_lines,
    run_wordcount,
)

EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_MISMATCH = 4

log = logging.getLogger("minimr")


def _generate_spec(text: str) -> tuple[int, int, int]:
    try:
        vocab, words, seed = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected VOCAB,WORDS,SEED") from None
    return vocab, words, seed


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minimr-wordcount", description=__doc__.split("\n")[0])
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", metavar="PATH", help="newline-delimited UTF-8 text")
    src.add_argument("--generate", metavar="VOCAB,WORDS,SEED", type=_generate_spec,
                     help="seeded Zipf corpus instead of a file")
    p.add_argument("--repeat", type=int, default=1, help="concatenate the corpus N times")
    p.add_argument("--nodes", type=int, default=1)
    p.add_argument("--threads", type=int, default=1, help="mapper threads per node")
    p.add_argument("--segments", type=int, default=16, help="segments per concurrent map")
    p.add_argument("--segment-capacity", type=int, default=256)
    p.add_argument("--chunk", type=int, default=64, help="lines per scheduling chunk")
    p.add_argument("--keep-empty-tokens", action="store_true",
                   help="count empty tokens between consecutive spaces")
    p.add_argument("--transport", choices=["local", "sockets"], default="local")
    p.add_argument("--endpoints", metavar="FILE", help="host:port per line, one per node")
    p.add_argument("--self-id", type=int, default=0)
    p.add_argument("--connect-timeout", type=float, default=30.0,
                   help="seconds to wait for socket peers")
    p.add_argument("--partition", choices=["cyclic", "block"], default="cyclic")
    p.add_argument("--backend", choices=["auto", "compiled", "python"], default="auto")
    p.add_argument("--output", metavar="PATH")
    p.add_argument("--report", metavar="PATH")
    p.add_argument("--oracle-check", action="store_true",
                   help="compare against a sequential count; exit 4 on mismatch")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> WordCountConfig:
    endpoints = None
    if args.transport == "sockets":
        if not args.endpoints:
            raise ConfigError("--transport sockets requires --endpoints")
        try:
            endpoints = read_endpoints(args.endpoints)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"bad endpoint file: {exc}") from exc
    return WordCountConfig(
        input_path=args.input,
        generate=args.generate,
        repeat=args.repeat,
        nodes=args.nodes,
        threads=args.threads,
        segments=args.segments,
        segment_capacity=args.segment_capacity,
        chunk=args.chunk,
        keep_empty_tokens=args.keep_empty_tokens,
        output_path=args.output,
        report_path=args.report,
        transport=args.transport,
        endpoints=endpoints,
        self_id=args.self_id,
        backend=None if args.backend == "auto" else args.backend,
        partition=args.partition,
        connect_timeout=args.connect_timeout,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        config = config_from_args(args)
        config.validate()
        corpus = load_input(config)
        result = run_wordcount(config, corpus)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except TransportError as exc:
        log.error("transport error: %s", exc)
        return EXIT_TRANSPORT
    except NodeFailure as exc:
        if isinstance(exc.error, TransportError):
            log.error("transport error: %s", exc.error)
            return EXIT_TRANSPORT
        if isinstance(exc.error, ConfigError):
            log.error("config error: %s", exc.error)
            return EXIT_CONFIG
        raise

    if result is None:
        return 0
    if not args.quiet:
        print("\n".join(report_lines(result)))
    if args.oracle_check:
        expected = oracle_wordcount(corpus, config.keep_empty_tokens)
        if format_output(expected) != format_output(result.counts):
            log.error("oracle mismatch: %d engine words vs %d oracle words",
                      len(result.counts), len(expected))
            return EXIT_MISMATCH
        log.info("oracle check passed (%d distinct words)", len(expected))
    return 0


if __name__ == "__main__":
    sys.exit(main())
