"""In-process simulated cluster: one thread per node, shared-memory mailboxes."""
from __future__ import annotations

import threading
import time
from typing import Any, Callable, Sequence

from ..errors import NodeFailure, TransportError


class _Hub:
    def __init__(self, size: int) -> None:
        self.size = size
        self.gate = threading.Barrier(size)
        self.slots: list[tuple[int, list[bytes]] | None] = [None] * size


class LocalCluster:
    """Handle for one simulated node.  Not shared between nodes."""

    def __init__(self, hub: _Hub, rank: int) -> None:
        self._hub = hub
        self.rank = rank
        self.size = hub.size
        self.rounds = 0

    def _wait(self, timeout: float | None) -> None:
        try:
            self._hub.gate.wait(timeout)
        except threading.BrokenBarrierError:
            raise TransportError(
                f"collective round {self.rounds} aborted or timed out", peer=None
            ) from None

    def all_to_all(self, outgoing: Sequence[bytes], timeout: float | None = None) -> list[bytes]:
        if len(outgoing) != self.size:
            raise ValueError(f"need {self.size} outgoing payloads, got {len(outgoing)}")
        self.rounds += 1
        hub = self._hub
        hub.slots[self.rank] = (self.rounds, [bytes(p) for p in outgoing])
        self._wait(timeout)
        incoming = []
        for j in range(self.size):
            rnd, row = hub.slots[j]
            if rnd != self.rounds:
                raise TransportError(
                    f"round mismatch: local {self.rounds}, peer {rnd}", peer=j
                )
            incoming.append(row[self.rank])
        # slots are reused next round; nobody may overwrite before all have read
        self._wait(timeout)
        return incoming

    def barrier(self, timeout: float | None = None) -> None:
        self.all_to_all([b""] * self.size, timeout)

    def abort(self) -> None:
        self._hub.gate.abort()


def spawn_local_cluster(n: int, node_main: Callable[[LocalCluster], Any]) -> list[Any]:
    """Run ``node_main(cluster)`` on ``n`` simulated nodes; results by rank.

    If any node raises, the others are released from their collectives and
    :class:`NodeFailure` is raised for the earliest original failure.
    """
    if n < 1:
        raise ValueError("cluster size must be >= 1")
    hub = _Hub(n)
    handles = [LocalCluster(hub, r) for r in range(n)]
    results: list[Any] = [None] * n
    failures: list[tuple[float, int, BaseException]] = []

    def run(rank: int) -> None:
        try:
            results[rank] = node_main(handles[rank])
        except BaseException as exc:
            failures.append((time.monotonic(), rank, exc))
            hub.gate.abort()

    if n == 1:
        run(0)
    else:
        threads = [threading.Thread(target=run, args=(r,), name=f"node-{r}") for r in range(n)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if failures:
        # transport errors from the abort are consequences, not causes
        primary = [f for f in failures if not isinstance(f[2], TransportError)] or failures
        _, rank, exc = min(primary, key=lambda f: f[0])
        raise NodeFailure(rank, exc) from exc
    return results
