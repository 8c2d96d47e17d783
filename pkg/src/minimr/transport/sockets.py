"""Multi-process cluster over a full mesh of TCP connections.

Frame: little-endian u32 round number, u32 source node id, u64 payload
length, then the payload.  At startup node ``i`` listens on its own
endpoint, connects to every lower-numbered node and accepts connections
from every higher-numbered one.  A connecting node announces itself with
a round-0 empty frame.
"""
from __future__ import annotations

import multiprocessing
import os
import queue as queue_mod
import socket
import struct
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Sequence

from ..errors import NodeFailure, TransportError

FRAME = struct.Struct("<IIQ")

Endpoint = tuple[str, int]


def parse_endpoints(lines: Sequence[str]) -> list[Endpoint]:
    out = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        host, sep, port = line.rpartition(":")
        if not sep or not port.isdigit():
            raise ValueError(f"bad endpoint {line!r}, expected host:port")
        out.append((host or "127.0.0.1", int(port)))
    return out


def read_endpoints(path: str | os.PathLike) -> list[Endpoint]:
    with open(path, encoding="utf-8") as fh:
        return parse_endpoints(fh.read().splitlines())


def free_endpoints(n: int, host: str = "127.0.0.1") -> list[Endpoint]:
    """``n`` currently unused localhost ports."""
    socks = []
    try:
        for _ in range(n):
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            s.bind((host, 0))
            socks.append(s)
        return [(host, s.getsockname()[1]) for s in socks]
    finally:
        for s in socks:
            s.close()


def _recv_exact(sock: socket.socket, size: int, peer: int) -> bytes:
    buf = bytearray(size)
    view = memoryview(buf)
    got = 0
    while got < size:
        try:
            n = sock.recv_into(view[got:], size - got)
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}", peer=peer) from exc
        if n == 0:
            raise TransportError("peer disconnected", peer=peer)
        got += n
    return bytes(buf)


class SocketCluster:
    """Handle for this process's node in a TCP full mesh."""

    def __init__(
        self,
        endpoints: Sequence[Endpoint],
        rank: int,
        connect_timeout: float = 30.0,
    ) -> None:
        if not 0 <= rank < len(endpoints):
            raise ValueError(f"self id {rank} outside 0..{len(endpoints) - 1}")
        self.rank = rank
        self.size = len(endpoints)
        self.rounds = 0
        self._peers: dict[int, socket.socket] = {}
        self._pool = ThreadPoolExecutor(max_workers=max(1, self.size - 1))
        try:
            self._connect(list(endpoints), connect_timeout)
        except BaseException:
            self.close()
            raise

    def _connect(self, endpoints: list[Endpoint], timeout: float) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(endpoints[self.rank])
        listener.listen(self.size)
        deadline = time.monotonic() + timeout
        try:
            for j in range(self.rank):
                while True:
                    try:
                        s = socket.create_connection(endpoints[j], timeout=1.0)
                        break
                    except OSError:
                        if time.monotonic() > deadline:
                            raise TransportError("could not connect", peer=j) from None
                        time.sleep(0.05)
                s.settimeout(None)
                s.sendall(FRAME.pack(0, self.rank, 0))
                self._adopt(j, s)
            for _ in range(self.rank + 1, self.size):
                listener.settimeout(max(0.1, deadline - time.monotonic()))
                try:
                    s, _ = listener.accept()
                except socket.timeout:
                    raise TransportError("timed out waiting for peers to connect") from None
                s.settimeout(None)
                rnd, src, length = FRAME.unpack(_recv_exact(s, FRAME.size, -1))
                if rnd != 0 or length != 0 or not self.rank < src < self.size or src in self._peers:
                    s.close()
                    raise TransportError("bad handshake", peer=src)
                self._adopt(src, s)
        finally:
            listener.close()

    def _adopt(self, peer: int, s: socket.socket) -> None:
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._peers[peer] = s

    def _send(self, peer: int, payload: bytes) -> None:
        s = self._peers[peer]
        try:
            s.sendall(FRAME.pack(self.rounds, self.rank, len(payload)))
            if payload:
                s.sendall(payload)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}", peer=peer) from exc

    def all_to_all(self, outgoing: Sequence[bytes], timeout: float | None = None) -> list[bytes]:
        if len(outgoing) != self.size:
            raise ValueError(f"need {self.size} outgoing payloads, got {len(outgoing)}")
        self.rounds += 1
        # sends run in the pool so large rows cannot deadlock against our receives
        pending = [
            self._pool.submit(self._send, j, bytes(outgoing[j]))
            for j in range(self.size)
            if j != self.rank
        ]
        incoming: list[bytes] = [b""] * self.size
        incoming[self.rank] = bytes(outgoing[self.rank])
        for j in range(self.size):
            if j == self.rank:
                continue
            s = self._peers[j]
            s.settimeout(timeout)
            try:
                rnd, src, length = FRAME.unpack(_recv_exact(s, FRAME.size, j))
                if rnd != self.rounds or src != j:
                    raise TransportError(
                        f"unexpected frame (round {rnd}, source {src}) in round {self.rounds}",
                        peer=j,
                    )
                incoming[j] = _recv_exact(s, length, j) if length else b""
            except socket.timeout:
                raise TransportError(f"timed out in round {self.rounds}", peer=j) from None
            finally:
                s.settimeout(None)
        for fut in pending:
            fut.result()
        return incoming

    def barrier(self, timeout: float | None = None) -> None:
        self.all_to_all([b""] * self.size, timeout)

    def close(self) -> None:
        for s in self._peers.values():
            try:
                s.close()
            except OSError:
                pass
        self._peers.clear()
        self._pool.shutdown(wait=False)

    def __enter__(self) -> "SocketCluster":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _child(endpoints, rank, node_main, queue) -> None:
    try:
        with SocketCluster(endpoints, rank) as cluster:
            result = node_main(cluster)
        queue.put((rank, True, result))
    except BaseException as exc:
        queue.put((rank, False, f"{exc!r}\n{traceback.format_exc()}"))


def run_socket_cluster(
    n: int,
    node_main: Callable[[SocketCluster], Any],
    host: str = "127.0.0.1",
    timeout: float = 120.0,
) -> list[Any]:
    """Run ``node_main`` in ``n`` fresh processes joined by :class:`SocketCluster`.

    ``node_main`` and its result must be picklable.
    """
    ctx = multiprocessing.get_context("spawn")
    endpoints = free_endpoints(n, host)
    queue = ctx.Queue()
    procs = [ctx.Process(target=_child, args=(endpoints, r, node_main, queue)) for r in range(n)]
    for p in procs:
        p.start()
    results: list[Any] = [None] * n
    errors = []
    deadline = time.monotonic() + timeout
    try:
        for _ in range(n):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("socket cluster did not finish in time")
            try:
                rank, ok, value = queue.get(timeout=remaining)
            except queue_mod.Empty:
                raise TimeoutError("socket cluster did not finish in time") from None
            if ok:
                results[rank] = value
            else:
                errors.append((rank, value))
    finally:
        for p in procs:
            p.join(timeout=5)
            if p.is_alive():
                p.kill()
    if errors:
        rank, text = errors[0]
        raise NodeFailure(rank, RuntimeError(text))
    return results
