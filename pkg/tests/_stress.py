"""Single-segment contention stress shared by the unit and acceptance suites."""
from __future__ import annotations

import os
import threading
import time

from minimr import _backend
from minimr.reducers import SUM


def stress_once(backend: str, threads: int = 4, per_thread: int = 100_000) -> tuple[int, int, float]:
    """One fresh map, ``threads`` writers hammering one key.  Returns (value, flushes, seconds)."""
    m = _backend.get(backend).ConcurrentMap(1, 256, threads)
    start = threading.Barrier(threads)

    def work(t):
        start.wait()
        for _ in range(per_thread):
            m.async_set(t, b"k", 1, SUM)

    t0 = time.perf_counter()
    workers = [threading.Thread(target=work, args=(t,)) for t in range(threads)]
    for th in workers:
        th.start()
    for th in workers:
        th.join()
    m.sync(SUM)
    return m.get(b"k"), m.cache_flushes, time.perf_counter() - t0


def stress_attempts(backend: str) -> int:
    # With one core, contention needs the OS to preempt a thread inside the
    # few-nanosecond latch window of the compiled path, so a single run can
    # see none.  Only there are fresh, full-size attempts allowed.
    single_core = (os.cpu_count() or 1) < 2
    return 6 if single_core and backend == "compiled" else 1


def stress(backend: str) -> tuple[list[tuple[int, int, float]], int]:
    attempts = stress_attempts(backend)
    runs = []
    for _ in range(attempts):
        runs.append(stress_once(backend))
        if runs[-1][1] > 0:
            break
    return runs, attempts
